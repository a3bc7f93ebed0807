"""Trajectory persistence, normalization statistics and training windows."""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from core.config import Variant
from core.demos import Trajectory
from core.errors import CorruptFile, EmptyDataset, VersionMismatch
from core.tactile import bounds_from_grids, normalize_channels
from core.world import TaskId
from tools.array_file import read_array, write_array

_log = lambda *a, **kw: print(*a, file=sys.stderr, **kw)

SCHEMA_VERSION = 1
METADATA_FILE = "metadata.json"
STATS_FILE = "stats.json"
DEGENERATE_EPS = 1e-6

FIELD_DTYPES = {
    "t": np.float64,  # accumulated 0.04 s stamps lose spacing in float32
    "rgb": np.uint8,
    "gel": np.uint8,
    "tactile_raw": np.float32,
    "force": np.float32,
    "width": np.float32,
    "pose": np.float32,
    "binary": np.float32,
}
LOW_DIM_SIZES = {"pose": 9, "width": 1, "force": 1, "binary": 1}

# per-variant contracts: image modalities, low-dim observations, action layout
IMAGE_KEYS = {
    Variant.FARM: ("rgb", "tactile"),
    Variant.FORCE_AWARE: ("rgb",),
    Variant.TACTILE_AWARE: ("rgb", "gel"),
    Variant.VISION_ONLY: ("rgb",),
}
LOW_DIM_KEYS = {
    Variant.FARM: ("pose", "width", "force"),
    Variant.FORCE_AWARE: ("pose", "width", "force"),
    Variant.TACTILE_AWARE: ("pose", "width"),
    Variant.VISION_ONLY: ("pose", "binary"),
}
ACTION_KEYS = {
    Variant.FARM: ("pose", "width", "force"),
    Variant.FORCE_AWARE: ("pose", "width", "force"),
    Variant.TACTILE_AWARE: ("pose", "width"),
    Variant.VISION_ONLY: ("pose", "binary"),
}
# dataset fields each image modality is built from
IMAGE_SOURCES = {"rgb": "rgb", "tactile": "tactile_raw", "gel": "gel"}


def action_dim(variant: Variant) -> int:
    return sum(LOW_DIM_SIZES[k] for k in ACTION_KEYS[Variant(variant)])


def low_dim_size(variant: Variant) -> int:
    return sum(LOW_DIM_SIZES[k] for k in LOW_DIM_KEYS[Variant(variant)])


def fields_for_variant(variant: Variant) -> tuple[str, ...]:
    variant = Variant(variant)
    needed = {"t", *LOW_DIM_KEYS[variant], *ACTION_KEYS[variant]}
    needed |= {IMAGE_SOURCES[k] for k in IMAGE_KEYS[variant]}
    return tuple(f for f in FIELD_DTYPES if f in needed)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_trajectory(
    traj: Trajectory,
    root_path: str | os.PathLike,
    name: str | None = None,
    config: dict | None = None,
    version: str | None = None,
) -> Path:
    seed = int(traj.meta.get("seed", 0))
    directory = Path(root_path) / (name or f"demo_{seed:03d}")
    directory.mkdir(parents=True, exist_ok=True)

    checksums, shapes = {}, {}
    for fname, dtype in FIELD_DTYPES.items():
        array = np.asarray(getattr(traj, fname)).astype(dtype, copy=False)
        checksums[fname] = write_array(directory / f"{fname}.bin", array)
        shapes[fname] = list(array.shape)

    metadata = {
        "schema_version": SCHEMA_VERSION,
        "task_id": traj.task_id.value,
        "seed": seed,
        "outcome": {
            "success": bool(traj.meta.get("success", False)),
            "failure_reason": traj.meta.get("failure_reason", "none"),
        },
        "meta": traj.meta,
        "fields": {f: {"dtype": np.dtype(FIELD_DTYPES[f]).name, "shape": shapes[f]} for f in FIELD_DTYPES},
        "checksums": checksums,
        "config": config or {},
        "version": version,
    }
    (directory / METADATA_FILE).write_text(json.dumps(metadata, indent=2, default=str), encoding="utf-8")
    return directory


def read_metadata(path: str | os.PathLike) -> dict:
    meta_path = Path(path) / METADATA_FILE
    try:
        metadata = json.loads(meta_path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise CorruptFile(f"{meta_path}: missing metadata") from e
    except json.JSONDecodeError as e:
        raise CorruptFile(f"{meta_path}: unreadable metadata ({e})") from e
    if metadata.get("schema_version") != SCHEMA_VERSION:
        raise VersionMismatch(
            f"{meta_path}: schema version {metadata.get('schema_version')} != {SCHEMA_VERSION}"
        )
    return metadata


def load_trajectory(path: str | os.PathLike, fields: tuple[str, ...] | None = None) -> Trajectory:
    """Load one trajectory directory. Fields not requested are left as None."""
    path = Path(path)
    metadata = read_metadata(path)
    checksums = metadata.get("checksums", {})
    wanted = set(fields or FIELD_DTYPES) | {"t"}
    arrays = {}
    for fname in FIELD_DTYPES:
        if fname not in wanted:
            arrays[fname] = None
            continue
        if fname not in checksums:
            raise CorruptFile(f"{path}: no checksum recorded for {fname}")
        arrays[fname] = read_array(path / f"{fname}.bin", checksums[fname])
    n = len(arrays["t"])
    for fname, array in arrays.items():
        if array is not None and len(array) != n:
            raise CorruptFile(f"{path}: field {fname} has {len(array)} rows, expected {n}")
    return Trajectory(task_id=TaskId(metadata["task_id"]), meta=metadata.get("meta", {}), **arrays)


def list_trajectories(root: str | os.PathLike) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p for p in root.iterdir() if (p / METADATA_FILE).is_file())


def load_dataset(root: str | os.PathLike, fields: tuple[str, ...] | None = None) -> list[Trajectory]:
    paths = list_trajectories(root)
    if not paths:
        raise EmptyDataset(f"no trajectories under {root}")
    dataset = [load_trajectory(p, fields) for p in paths]
    _log(f"[LOG] Loaded {len(dataset)} trajectories ({sum(len(t) for t in dataset)} frames) from {root}")
    return dataset


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

@dataclass
class NormalizationStats:
    low: dict[str, np.ndarray] = field(default_factory=dict)
    high: dict[str, np.ndarray] = field(default_factory=dict)
    tactile_bounds: np.ndarray = field(default_factory=lambda: np.array([[-1.0, 1.0]] * 3))

    def normalize(self, key: str, x) -> np.ndarray:
        lo, hi = self.low[key], self.high[key]
        return 2.0 * (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) - 1.0

    def denormalize(self, key: str, y) -> np.ndarray:
        lo, hi = self.low[key], self.high[key]
        return (np.asarray(y, dtype=np.float64) + 1.0) / 2.0 * (hi - lo) + lo

    def normalize_concat(self, keys, arrays: dict) -> np.ndarray:
        """Normalize per key and concatenate along the last axis."""
        parts = []
        for k in keys:
            x = np.asarray(arrays[k], dtype=np.float64)
            parts.append(self.normalize(k, x.reshape(len(x), LOW_DIM_SIZES[k])))
        return np.concatenate(parts, axis=-1)

    def split_denormalize(self, keys, y: np.ndarray) -> dict[str, np.ndarray]:
        out, i = {}, 0
        for k in keys:
            n = LOW_DIM_SIZES[k]
            out[k] = self.denormalize(k, y[..., i : i + n])
            i += n
        return out

    def to_dict(self) -> dict:
        return {
            "low": {k: v.tolist() for k, v in self.low.items()},
            "high": {k: v.tolist() for k, v in self.high.items()},
            "tactile_bounds": np.asarray(self.tactile_bounds).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationStats":
        return cls(
            low={k: np.asarray(v, dtype=np.float64) for k, v in data["low"].items()},
            high={k: np.asarray(v, dtype=np.float64) for k, v in data["high"].items()},
            tactile_bounds=np.asarray(data["tactile_bounds"], dtype=np.float64),
        )


def compute_normalization(dataset: list[Trajectory]) -> NormalizationStats:
    if not dataset:
        raise EmptyDataset("cannot compute statistics of an empty dataset")
    stats = NormalizationStats()
    for key, size in LOW_DIM_SIZES.items():
        columns = [np.asarray(getattr(t, key), dtype=np.float64).reshape(len(t), size) for t in dataset
                   if getattr(t, key) is not None]
        if not columns:
            continue
        values = np.concatenate(columns, axis=0)
        lo, hi = values.min(axis=0), values.max(axis=0)
        flat = hi == lo
        lo = np.where(flat, lo - DEGENERATE_EPS / 2, lo)
        hi = np.where(flat, hi + DEGENERATE_EPS / 2, hi)
        stats.low[key], stats.high[key] = lo, hi
    grids = [t.tactile_raw for t in dataset if t.tactile_raw is not None]
    if grids:
        stats.tactile_bounds = bounds_from_grids(grids)
    return stats


def save_stats(stats: NormalizationStats, root: str | os.PathLike) -> Path:
    path = Path(root) / STATS_FILE
    path.write_text(json.dumps(stats.to_dict(), indent=2), encoding="utf-8")
    return path


def load_stats(root: str | os.PathLike) -> NormalizationStats:
    path = Path(root) / STATS_FILE
    try:
        return NormalizationStats.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except FileNotFoundError as e:
        raise EmptyDataset(f"no {STATS_FILE} under {root}; run collect first") from e


# ---------------------------------------------------------------------------
# Training windows
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TrainingWindow:
    traj_index: int
    start: int
    obs_indices: np.ndarray
    action_indices: np.ndarray
    obs: dict[str, np.ndarray]
    actions: np.ndarray


def window_indices(n_frames: int, start: int, obs_horizon: int, pred_horizon: int):
    """Observation indices end at `start`; action indices begin there.
    Both are clamped into the episode, which repeats the edge frames."""
    obs_idx = np.clip(np.arange(start - obs_horizon + 1, start + 1), 0, n_frames - 1)
    act_idx = np.clip(np.arange(start, start + pred_horizon), 0, n_frames - 1)
    return obs_idx, act_idx


def image_stack(traj: Trajectory, key: str, idx: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """(len(idx), 96, 96, 3) float32 images in [0, 1] for one modality."""
    if key == "tactile":
        return normalize_channels(traj.tactile_raw[idx], stats.tactile_bounds).astype(np.float32)
    return getattr(traj, IMAGE_SOURCES[key])[idx].astype(np.float32) / 255.0


def build_window(
    dataset: list[Trajectory],
    traj_index: int,
    start: int,
    stats: NormalizationStats,
    variant: Variant,
    obs_horizon: int = 2,
    pred_horizon: int = 32,
) -> TrainingWindow:
    variant = Variant(variant)
    traj = dataset[traj_index]
    obs_idx, act_idx = window_indices(len(traj), start, obs_horizon, pred_horizon)
    obs = {k: image_stack(traj, k, obs_idx, stats) for k in IMAGE_KEYS[variant]}
    low = {k: getattr(traj, k)[obs_idx] for k in LOW_DIM_KEYS[variant]}
    obs["low_dim"] = stats.normalize_concat(LOW_DIM_KEYS[variant], low).astype(np.float32)
    acts = {k: getattr(traj, k)[act_idx] for k in ACTION_KEYS[variant]}
    actions = stats.normalize_concat(ACTION_KEYS[variant], acts).astype(np.float32)
    return TrainingWindow(traj_index, start, obs_idx, act_idx, obs, actions)


def sample_training_window(
    dataset: list[Trajectory],
    rng: np.random.Generator,
    stats: NormalizationStats,
    variant: Variant = Variant.FARM,
    obs_horizon: int = 2,
    pred_horizon: int = 32,
) -> TrainingWindow:
    """Uniform over all (trajectory, start frame) pairs."""
    lengths = np.array([len(t) for t in dataset])
    if len(lengths) == 0 or lengths.sum() == 0:
        raise EmptyDataset("no frames to sample from")
    flat = int(rng.integers(lengths.sum()))
    traj_index = int(np.searchsorted(np.cumsum(lengths), flat, side="right"))
    start = flat - int(lengths[:traj_index].sum())
    return build_window(dataset, traj_index, start, stats, variant, obs_horizon, pred_horizon)


def sample_batch(
    dataset: list[Trajectory],
    rng: np.random.Generator,
    stats: NormalizationStats,
    variant: Variant,
    batch_size: int,
    obs_horizon: int = 2,
    pred_horizon: int = 32,
) -> dict[str, np.ndarray]:
    windows = [
        sample_training_window(dataset, rng, stats, variant, obs_horizon, pred_horizon)
        for _ in range(batch_size)
    ]
    batch = {k: np.stack([w.obs[k] for w in windows]) for k in windows[0].obs}
    batch["action"] = np.stack([w.actions for w in windows])
    return batch
