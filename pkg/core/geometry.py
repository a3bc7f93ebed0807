"""Pose representation: 3D position + 6D rotation features.

The 6D features are the first two columns of the rotation matrix; decoding
re-orthonormalizes them with Gram-Schmidt, so any pair of non-parallel
3-vectors maps to a proper rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from core.errors import DegenerateInput

PARALLEL_TOL = 1e-9


def rot_to_6d(R: np.ndarray) -> np.ndarray:
    """First two columns of R, stacked column-major into a 6-vector."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise DegenerateInput(f"expected a 3x3 rotation, got shape {R.shape}")
    return np.concatenate([R[:, 0], R[:, 1]])


def sixd_to_rot(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != (6,):
        raise DegenerateInput(f"expected a 6-vector, got shape {v.shape}")
    a1, a2 = v[:3], v[3:]

    n1 = np.linalg.norm(a1)
    if n1 < PARALLEL_TOL:
        raise DegenerateInput("first rotation column is zero")
    b1 = a1 / n1

    b2 = a2 - np.dot(a2, b1) * b1
    n2 = np.linalg.norm(b2)
    if n2 < PARALLEL_TOL:
        raise DegenerateInput("rotation columns are parallel")
    b2 = b2 / n2

    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """End-effector pose. position in metres, rotation6d unitless."""

    position: np.ndarray
    rotation6d: np.ndarray

    @classmethod
    def from_matrix(cls, position, R) -> "Pose":
        return cls(np.asarray(position, dtype=np.float64).copy(), rot_to_6d(R))

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, z: float, yaw: float = 0.0) -> "Pose":
        return cls.from_matrix([x, y, z], yaw_matrix(yaw))

    @classmethod
    def from_vector(cls, vec) -> "Pose":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.shape != (9,):
            raise DegenerateInput(f"pose vector must have 9 entries, got {vec.shape}")
        return cls(vec[:3].copy(), vec[3:].copy())

    @property
    def matrix(self) -> np.ndarray:
        return sixd_to_rot(self.rotation6d)

    @property
    def yaw(self) -> float:
        R = self.matrix
        return float(np.arctan2(R[1, 0], R[0, 0]))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.rotation6d])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.rotation6d)))


def lag_pose(current: Pose, target: Pose, alpha: float) -> Pose:
    """Move `current` a fraction `alpha` of the way towards `target`.

    Position is interpolated linearly, rotation along the geodesic.
    """
    position = current.position + alpha * (target.position - current.position)
    # equal rotations keep their exact features so a settled arm is a fixed point
    if alpha == 0.0 or np.array_equal(current.rotation6d, target.rotation6d):
        return Pose(position, current.rotation6d.copy())
    R_cur = current.matrix
    R_rel = R_cur.T @ target.matrix
    rotvec = Rotation.from_matrix(R_rel).as_rotvec()
    R_new = R_cur @ Rotation.from_rotvec(alpha * rotvec).as_matrix()
    return Pose.from_matrix(position, R_new)
