"""Flat binary array files.

Layout (all little-endian):

    offset  size        field
    0       4           magic b"FRMA"
    4       4  uint32   dtype code (1 = float32, 2 = uint8, 3 = float64)
    8       4  uint32   ndim
    12      4  uint32   element count
    16      4*ndim      dims, uint32 each
    ...                 row-major payload

The sha256 of the whole file is what dataset metadata records.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

from core.errors import CorruptFile

MAGIC = b"FRMA"
HEADER = struct.Struct("<4sIII")
DTYPE_CODES = {
    1: np.dtype("<f4"),
    2: np.dtype("u1"),
    3: np.dtype("<f8"),
}
CODE_FOR_DTYPE = {dt: code for code, dt in DTYPE_CODES.items()}


def encode_array(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder("<") if array.dtype.byteorder == ">" else array.dtype
    if dtype not in CODE_FOR_DTYPE:
        raise TypeError(f"unsupported dtype {array.dtype}; use float32, uint8 or float64")
    payload = np.ascontiguousarray(array, dtype=dtype).tobytes(order="C")
    header = HEADER.pack(MAGIC, CODE_FOR_DTYPE[dtype], array.ndim, array.size)
    dims = struct.pack(f"<{array.ndim}I", *array.shape)
    return header + dims + payload


def decode_array(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < HEADER.size:
        raise CorruptFile(f"{source}: truncated header ({len(data)} bytes)")
    magic, code, ndim, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptFile(f"{source}: bad magic {magic!r}")
    if code not in DTYPE_CODES:
        raise CorruptFile(f"{source}: unknown dtype code {code}")
    dims_end = HEADER.size + 4 * ndim
    if len(data) < dims_end:
        raise CorruptFile(f"{source}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", data, HEADER.size)
    if int(np.prod(dims, dtype=np.int64)) != count:
        raise CorruptFile(f"{source}: dims {dims} do not match element count {count}")
    dtype = DTYPE_CODES[code]
    expected = dims_end + count * dtype.itemsize
    if len(data) != expected:
        raise CorruptFile(f"{source}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype=dtype, count=count, offset=dims_end).reshape(dims).copy()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_array(path: str | os.PathLike, array: np.ndarray) -> str:
    """Write one array file, returning its sha256."""
    data = encode_array(array)
    Path(path).write_bytes(data)
    return sha256_hex(data)


def read_array(path: str | os.PathLike, checksum: str | None = None) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as e:
        raise CorruptFile(f"{path}: missing array file") from e
    if checksum is not None and sha256_hex(data) != checksum:
        raise CorruptFile(f"{path}: checksum mismatch")
    return decode_array(data, str(path))
