import json

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import make_trajectory
from core.config import Variant
from core.dataset import (
    METADATA_FILE,
    NormalizationStats,
    action_dim,
    build_window,
    compute_normalization,
    fields_for_variant,
    list_trajectories,
    load_dataset,
    load_stats,
    load_trajectory,
    low_dim_size,
    sample_batch,
    sample_training_window,
    save_stats,
    save_trajectory,
    window_indices,
)
from core.errors import CorruptFile, EmptyDataset, VersionMismatch
from tools.array_file import decode_array, encode_array, read_array, write_array


def test_array_file_header_and_dtypes(tmp_path):
    image = np.arange(24, dtype=np.uint8).reshape(2, 4, 3)
    data = encode_array(image)
    assert data[:4] == b"FRMA"
    assert len(data) == 16 + 4 * 3 + image.size
    back = decode_array(data)
    assert back.dtype == np.uint8
    np.testing.assert_array_equal(back, image)

    sha = write_array(tmp_path / "x.bin", np.linspace(0, 1, 7, dtype=np.float32))
    assert read_array(tmp_path / "x.bin", sha).dtype == np.float32


def test_array_file_rejects_damage(tmp_path):
    data = encode_array(np.ones((3, 2), np.float32))
    with pytest.raises(CorruptFile):
        decode_array(b"XXXX" + data[4:])
    with pytest.raises(CorruptFile):
        decode_array(data[:10])
    with pytest.raises(CorruptFile):
        decode_array(data[:-1])
    with pytest.raises(CorruptFile):
        read_array(tmp_path / "missing.bin")
    with pytest.raises(TypeError):
        encode_array(np.ones(3, np.int64))


def test_save_and_load_trajectory(tmp_path):
    traj = make_trajectory(40, seed=3)
    path = save_trajectory(traj, tmp_path, "demo_000", config={"RUN_SEED": "3"}, version="abc")
    loaded = load_trajectory(path)
    for name in traj.ARRAY_FIELDS:
        np.testing.assert_array_equal(getattr(loaded, name), getattr(traj, name))
    assert loaded.rgb.dtype == np.uint8
    assert loaded.t.dtype == np.float64
    assert all(getattr(loaded, name).dtype == np.float32 for name in ("tactile_raw", "force", "width", "pose", "binary"))
    assert loaded.task_id == traj.task_id
    meta = json.loads((path / METADATA_FILE).read_text())
    assert meta["outcome"] == {"success": True, "failure_reason": "none"}
    assert meta["version"] == "abc"


def test_partial_load_leaves_other_fields_empty(tmp_path):
    path = save_trajectory(make_trajectory(10), tmp_path, "demo_000")
    loaded = load_trajectory(path, ("force",))
    assert loaded.rgb is None
    assert len(loaded.force) == 10 and len(loaded.t) == 10


def test_checksum_mismatch_is_corrupt(tmp_path):
    path = save_trajectory(make_trajectory(10), tmp_path, "demo_000")
    raw = bytearray((path / "force.bin").read_bytes())
    raw[-1] ^= 0xFF
    (path / "force.bin").write_bytes(bytes(raw))
    with pytest.raises(CorruptFile):
        load_trajectory(path)


def test_missing_files_are_corrupt(tmp_path):
    path = save_trajectory(make_trajectory(10), tmp_path, "demo_000")
    (path / "pose.bin").unlink()
    with pytest.raises(CorruptFile):
        load_trajectory(path)
    (path / METADATA_FILE).unlink()
    with pytest.raises(CorruptFile):
        load_trajectory(path)


def test_schema_version_mismatch(tmp_path):
    path = save_trajectory(make_trajectory(10), tmp_path, "demo_000")
    meta = json.loads((path / METADATA_FILE).read_text())
    meta["schema_version"] = 99
    (path / METADATA_FILE).write_text(json.dumps(meta))
    with pytest.raises(VersionMismatch):
        load_trajectory(path)


def test_empty_dataset(tmp_path):
    assert list_trajectories(tmp_path / "nowhere") == []
    with pytest.raises(EmptyDataset):
        load_dataset(tmp_path)
    with pytest.raises(EmptyDataset):
        compute_normalization([])
    with pytest.raises(EmptyDataset):
        load_stats(tmp_path)


def test_load_dataset_in_name_order(tmp_path):
    for i in (2, 0, 1):
        save_trajectory(make_trajectory(10 + i, seed=i), tmp_path, f"demo_{i:03d}")
    dataset = load_dataset(tmp_path, ("force",))
    assert [len(t) for t in dataset] == [10, 11, 12]


def test_normalization_matches_a_full_scan():
    dataset = [make_trajectory(30, seed=0), make_trajectory(45, seed=1)]
    stats = compute_normalization(dataset)
    for key in ("pose", "width", "force"):
        values = np.concatenate([np.asarray(getattr(t, key), np.float64).reshape(len(t), -1) for t in dataset])
        lo, hi = values.min(axis=0), values.max(axis=0)
        flat = hi == lo
        np.testing.assert_allclose(stats.low[key][~flat], lo[~flat])
        np.testing.assert_allclose(stats.high[key][~flat], hi[~flat])
        # pose y is constant: widened by 1e-6 around the value
        np.testing.assert_allclose(stats.high[key][flat] - stats.low[key][flat], 1e-6, rtol=1e-6)
        np.testing.assert_allclose((stats.high[key][flat] + stats.low[key][flat]) / 2, lo[flat])


def test_normalize_denormalize_identity(tmp_path):
    stats = compute_normalization([make_trajectory(30)])
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.0, 1.0, (50, 9))
    np.testing.assert_allclose(stats.normalize("pose", stats.denormalize("pose", x)), x, atol=1e-6)
    save_stats(stats, tmp_path)
    again = load_stats(tmp_path)
    np.testing.assert_array_equal(again.low["force"], stats.low["force"])
    np.testing.assert_array_equal(again.tactile_bounds, stats.tactile_bounds)
    assert isinstance(NormalizationStats.from_dict(stats.to_dict()), NormalizationStats)


def test_window_indices_repeat_the_edges():
    obs, act = window_indices(20, 0, 2, 32)
    np.testing.assert_array_equal(obs, [0, 0])
    assert act[0] == 0 and act[-1] == 19 and len(act) == 32
    obs, act = window_indices(20, 19, 2, 4)
    np.testing.assert_array_equal(obs, [18, 19])
    np.testing.assert_array_equal(act, [19, 19, 19, 19])


@pytest.mark.parametrize("variant", list(Variant))
def test_window_contract_per_variant(variant):
    dataset = [make_trajectory(40)]
    stats = compute_normalization(dataset)
    window = build_window(dataset, 0, 10, stats, variant, 2, 16)
    assert window.obs["low_dim"].shape == (2, low_dim_size(variant))
    assert window.actions.shape == (16, action_dim(variant))
    assert np.all(np.abs(window.actions) <= 1.0 + 1e-6)
    if variant == Variant.FARM:
        assert window.obs["tactile"].shape == (2, 96, 96, 3)
        assert 0.0 <= window.obs["tactile"].min() and window.obs["tactile"].max() <= 1.0
    assert ("gel" in window.obs) == (variant == Variant.TACTILE_AWARE)


def test_fields_for_variant():
    assert "tactile_raw" in fields_for_variant(Variant.FARM)
    vision = fields_for_variant(Variant.VISION_ONLY)
    assert "force" not in vision and "tactile_raw" not in vision and "binary" in vision


def test_start_frames_are_uniform():
    dataset = [make_trajectory(100, image_size=4)]
    stats = compute_normalization(dataset)
    rng = np.random.default_rng(0)
    starts = [sample_training_window(dataset, rng, stats, Variant.VISION_ONLY).start for _ in range(10_000)]
    counts = np.bincount(starts, minlength=100)
    assert len(counts) == 100
    sigma = np.sqrt(10_000 * 0.01 * 0.99)
    assert np.all(np.abs(counts - 100) <= 5 * sigma)
    assert chisquare(counts).pvalue > 1e-3


def test_sample_batch_shapes(dataset):
    stats = compute_normalization(dataset)
    batch = sample_batch(dataset, np.random.default_rng(0), stats, Variant.FARM, 4, 2, 8)
    assert batch["rgb"].shape == (4, 2, 32, 32, 3)
    assert batch["tactile"].shape == (4, 2, 96, 96, 3)
    assert batch["low_dim"].shape == (4, 2, 11)
    assert batch["action"].shape == (4, 8, 11)
    assert batch["action"].dtype == np.float32
