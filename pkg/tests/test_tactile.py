import numpy as np
import pytest

from core.config import TactileConfig
from core.tactile import (
    NO_NOISE,
    TactileNoiseModel,
    TactileSensor,
    bounds_from_grids,
    gaussian_blob,
    integrate_normal,
    normalize_channels,
    render_gel_image,
    symmetric_bounds,
    synth_force_distribution,
)
from core.world import GEL_COLS, GEL_ROWS, ContactPatch


def random_patch(rng):
    return ContactPatch(rng.uniform(0, GEL_ROWS - 1), rng.uniform(0, GEL_COLS - 1), rng.uniform(1.5, 12.0))


def test_noise_free_sum_equals_the_normal_force():
    rng = np.random.default_rng(0)
    for F_n in rng.uniform(-10.0, 0.0, 100):
        img = synth_force_distribution(F_n, rng.normal(size=2), random_patch(rng))
        assert integrate_normal(img) == pytest.approx(F_n, abs=1e-9)
        assert img.scalar_normal == pytest.approx(F_n, abs=1e-9)


def test_two_newton_example():
    img = synth_force_distribution(-2.0, [0.0, 0.0], ContactPatch(20.0, 27.0, 6.0))
    assert integrate_normal(img) == pytest.approx(-2.0, abs=1e-9)
    assert img.raw_grid.shape == (GEL_ROWS, GEL_COLS, 3)


def test_no_contact_is_all_zero():
    img = synth_force_distribution(0.0, [0.0, 0.0], ContactPatch())
    assert integrate_normal(img) == 0.0
    assert not img.raw_grid.any()


def test_integrate_normal_matches_an_elementwise_sum():
    rng = np.random.default_rng(1)
    grid = rng.normal(size=(GEL_ROWS, GEL_COLS, 3))
    img = synth_force_distribution(-1.0, [0, 0], ContactPatch(3, 3, 2))
    img.raw_grid[...] = grid
    total = 0.0
    for r in range(GEL_ROWS):
        for c in range(GEL_COLS):
            total += grid[r, c, 2]
    assert integrate_normal(img) == pytest.approx(total, abs=1e-9)


def test_shear_channels_carry_the_tangential_load():
    img = synth_force_distribution(-3.0, [0.4, -0.2], ContactPatch(10.0, 30.0, 5.0))
    assert img.raw_grid[..., 0].sum() == pytest.approx(0.4)
    assert img.raw_grid[..., 1].sum() == pytest.approx(-0.2)


def test_positive_normal_force_is_rejected():
    with pytest.raises(ValueError):
        synth_force_distribution(0.5, [0, 0], ContactPatch(5, 5, 3))


def test_blob_is_normalized_even_for_tiny_patches():
    blob = gaussian_blob((GEL_ROWS, GEL_COLS), ContactPatch(10.5, 10.5, 0.4))
    assert blob.sum() == pytest.approx(1.0)


def test_noise_is_seeded_and_bias_only_in_contact():
    noise = TactileNoiseModel.from_config(TactileConfig(cell_noise_std=1e-3, bias_std=0.1), seed=5)
    a = TactileSensor(noise).read(-1.0, [0, 0], ContactPatch(20, 27, 5))
    b = TactileSensor(noise).read(-1.0, [0, 0], ContactPatch(20, 27, 5))
    np.testing.assert_array_equal(a.raw_grid, b.raw_grid)
    off = TactileSensor(TactileNoiseModel(0.0, 0.1, 5)).read(0.0, [0, 0], ContactPatch())
    assert off.scalar_normal == 0.0
    with pytest.raises(ValueError):
        TactileNoiseModel(-1.0, 0.0)


def test_policy_image_lies_in_the_unit_box():
    rng = np.random.default_rng(2)
    grids = [
        synth_force_distribution(-rng.uniform(0, 8), rng.normal(size=2), random_patch(rng), TactileNoiseModel(1e-3, 0.0, i)).raw_grid
        for i in range(10)
    ]
    bounds = bounds_from_grids(grids)
    for grid in grids:
        image = normalize_channels(grid, bounds)
        assert image.shape == (96, 96, 3)
        assert image.min() >= 0.0 and image.max() <= 1.0
    # values beyond the bounds clip
    clipped = normalize_channels(grids[0] * 100.0, bounds)
    assert clipped.min() >= 0.0 and clipped.max() <= 1.0


def test_zero_forces_map_to_mid_grey():
    image = normalize_channels(np.zeros((GEL_ROWS, GEL_COLS, 3)), symmetric_bounds(2.0))
    np.testing.assert_allclose(image, 0.5)


def test_bilinear_upsampling_keeps_the_corners():
    grid = np.array([[[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]], [[0.4, 0.5, 0.6], [0.0, 1.0, 0.25]]])
    unit = np.array([[0.0, 1.0]] * 3)
    image = normalize_channels(grid, unit, size=7)
    for (r, c), (R, C) in {(0, 0): (0, 0), (0, 1): (0, 6), (1, 0): (6, 0), (1, 1): (6, 6)}.items():
        np.testing.assert_allclose(image[R, C], grid[r, c], atol=1e-6)


def test_gel_image_shows_only_geometry():
    patch = ContactPatch(20, 27, 6)
    flat = render_gel_image(0.0, ContactPatch(), 500.0)
    np.testing.assert_allclose(flat, 0.5)
    pressed = render_gel_image(-2.0, patch, 500.0)
    assert pressed.shape == (96, 96, 3)
    assert not np.allclose(pressed, 0.5)
    assert pressed.min() >= 0.0 and pressed.max() <= 1.0
    assert NO_NOISE.cell_std == 0.0


def test_noise_sum_stays_within_three_sigma():
    noise = TactileNoiseModel(cell_std=1e-3, bias_std=0.0)
    limit = 3 * noise.cell_std * np.sqrt(GEL_ROWS * GEL_COLS)
    for seed in range(200):
        img = synth_force_distribution(-2.0, [0.0, 0.0], ContactPatch(20, 27, 6), noise, rng=np.random.default_rng(seed))
        assert abs(img.scalar_normal + 2.0) < limit


def test_synthesis_is_linear_before_noise():
    rng = np.random.default_rng(11)
    for _ in range(20):
        F_n, F_t, patch = rng.uniform(-8.0, 0.0), rng.normal(size=2), random_patch(rng)
        base = synth_force_distribution(F_n, F_t, patch).raw_grid
        for alpha in (0.1, 0.5, 1.0):
            scaled = synth_force_distribution(alpha * F_n, alpha * F_t, patch).raw_grid
            np.testing.assert_allclose(scaled, alpha * base, rtol=0, atol=1e-12)
