"""Synthetic fingertip force-distribution sensor.

Turns ground-truth contact (normal force, tangential load, contact patch) into
a per-cell force grid with channels (shear-x, shear-y, normal), the integrated
scalar normal force, and the 96x96 images the policies consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from core.world import GEL_COLS, GEL_ROWS, ContactPatch

POLICY_SIZE = 96
REFERENCE_DEPTH = 0.005     # m of indentation that saturates the gel shading
GEL_LIGHTS = np.array([[1.0, 0.0], [0.0, 1.0], [-0.7071, -0.7071]])


@dataclass(frozen=True)
class TactileNoiseModel:
    cell_std: float = 5e-4
    bias_std: float = 0.05
    seed: int | None = None

    def __post_init__(self):
        if self.cell_std < 0 or self.bias_std < 0:
            raise ValueError("noise stds must be >= 0")

    @classmethod
    def from_config(cls, cfg, seed: int | None) -> "TactileNoiseModel":
        return cls(cell_std=cfg.cell_noise_std, bias_std=cfg.bias_std, seed=seed)


NO_NOISE = TactileNoiseModel(0.0, 0.0, 0)


@dataclass(frozen=True, eq=False)
class TactileForceImage:
    raw_grid: np.ndarray
    scalar_normal: float
    policy_image: np.ndarray | None = None

    def with_policy_image(self, bounds: np.ndarray, size: int = POLICY_SIZE) -> "TactileForceImage":
        return TactileForceImage(self.raw_grid, self.scalar_normal, normalize_channels(self.raw_grid, bounds, size))


def gaussian_blob(shape: tuple[int, int], patch: ContactPatch) -> np.ndarray:
    """Unit-sum isotropic Gaussian (std = radius/2) limited to the patch disc."""
    rows, cols = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    d2 = (rows - patch.row) ** 2 + (cols - patch.col) ** 2
    sigma = patch.radius / 2.0
    blob = np.exp(-0.5 * d2 / sigma**2)
    blob[d2 > patch.radius**2] = 0.0
    total = blob.sum()
    if total <= 0.0:
        # degenerate patch between cell centres: put everything on the nearest cell
        blob = np.zeros(shape)
        r = int(np.clip(round(patch.row), 0, shape[0] - 1))
        c = int(np.clip(round(patch.col), 0, shape[1] - 1))
        blob[r, c] = 1.0
        return blob
    return blob / total


def synth_force_distribution(
    F_n: float,
    F_t,
    patch: ContactPatch,
    noise: TactileNoiseModel = NO_NOISE,
    shape: tuple[int, int] = (GEL_ROWS, GEL_COLS),
    rng: np.random.Generator | None = None,
    bias: float = 0.0,
) -> TactileForceImage:
    """Force grid for one contact. `bias` is the sensor's systematic offset,
    only applied while in contact."""
    if F_n > 0:
        raise ValueError(f"normal force must be <= 0 (compression negative), got {F_n}")
    F_t = np.asarray(F_t, dtype=np.float64).reshape(2)

    grid = np.zeros((*shape, 3))
    if not patch.empty:
        blob = gaussian_blob(shape, patch)
        grid[..., 0] = F_t[0] * blob
        grid[..., 1] = F_t[1] * blob
        grid[..., 2] = (F_n + bias) * blob
    if noise.cell_std > 0:
        rng = rng if rng is not None else np.random.default_rng(noise.seed)
        grid += rng.normal(0.0, noise.cell_std, grid.shape)
    return TactileForceImage(grid, float(grid[..., 2].sum()))


def integrate_normal(img: TactileForceImage) -> float:
    return float(np.sum(img.raw_grid[..., 2]))


def _resize(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resample of (..., H, W, C) images to (..., size, size, C)."""
    lead = image.shape[:-3]
    flat = np.ascontiguousarray(image, dtype=np.float64).reshape(-1, *image.shape[-3:])
    t = torch.from_numpy(flat).permute(0, 3, 1, 2)
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=True)
    return out.permute(0, 2, 3, 1).numpy().reshape(*lead, size, size, image.shape[-1])


def symmetric_bounds(scale) -> np.ndarray:
    """Per-channel bounds [-c, c] as a (3, 2) array."""
    c = np.broadcast_to(np.asarray(scale, dtype=np.float64), (3,))
    return np.stack([-c, c], axis=1)


def normalize_channels(raw_grid: np.ndarray, bounds: np.ndarray, size: int = POLICY_SIZE) -> np.ndarray:
    """Map each channel affinely from its (lo, hi) bound into [0, 1], clip, resample."""
    bounds = np.asarray(bounds, dtype=np.float64)
    lo, hi = bounds[:, 0], bounds[:, 1]
    scaled = np.clip((raw_grid - lo) / (hi - lo), 0.0, 1.0)
    return np.clip(_resize(scaled, size), 0.0, 1.0)


def bounds_from_grids(grids) -> np.ndarray:
    """Dataset-wide symmetric bounds from the largest magnitude per channel."""
    peak = np.full(3, 1e-6)
    for grid in grids:
        peak = np.maximum(peak, np.abs(grid).reshape(-1, 3).max(axis=0))
    return symmetric_bounds(peak)


def render_gel_image(
    F_n: float,
    patch: ContactPatch,
    stiffness: float,
    shape: tuple[int, int] = (GEL_ROWS, GEL_COLS),
    size: int = POLICY_SIZE,
) -> np.ndarray:
    """Raw gel deformation image: indentation shading under three coloured lights."""
    image = np.full((*shape, 3), 0.5)
    if not patch.empty and F_n < 0:
        depth_scale = min(abs(F_n) / stiffness / REFERENCE_DEPTH, 1.0)
        rows, cols = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
        rho2 = ((rows - patch.row) ** 2 + (cols - patch.col) ** 2) / patch.radius**2
        depth = depth_scale * np.clip(1.0 - rho2, 0.0, None)
        gy, gx = np.gradient(depth)
        for ch, (lx, ly) in enumerate(GEL_LIGHTS):
            image[..., ch] += 0.4 * depth + 2.0 * (lx * gx + ly * gy)
    return np.clip(_resize(np.clip(image, 0.0, 1.0), size), 0.0, 1.0)


class TactileSensor:
    """One instrumented fingertip with its own seeded noise stream."""

    def __init__(self, noise: TactileNoiseModel, shape: tuple[int, int] = (GEL_ROWS, GEL_COLS)):
        self.noise = noise
        self.shape = shape
        self.rng = np.random.default_rng(noise.seed)
        self.bias = float(self.rng.normal(0.0, noise.bias_std)) if noise.bias_std > 0 else 0.0

    def read(self, F_n: float, F_t, patch: ContactPatch) -> TactileForceImage:
        return synth_force_distribution(F_n, F_t, patch, self.noise, self.shape, self.rng, self.bias)
