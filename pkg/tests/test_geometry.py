import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from core.errors import DegenerateInput
from core.geometry import Pose, lag_pose, rot_to_6d, sixd_to_rot, yaw_matrix


def test_identity_features():
    np.testing.assert_array_equal(rot_to_6d(np.eye(3)), [1, 0, 0, 0, 1, 0])
    np.testing.assert_allclose(sixd_to_rot([1, 0, 0, 0, 1, 0]), np.eye(3), atol=1e-12)


def test_gram_schmidt_removes_the_parallel_component():
    np.testing.assert_allclose(sixd_to_rot([2, 0, 0, 1, 1, 0]), np.eye(3), atol=1e-12)


def test_round_trip_on_random_rotations():
    for R in Rotation.random(1000, random_state=0).as_matrix():
        np.testing.assert_allclose(sixd_to_rot(rot_to_6d(R)), R, atol=1e-6)


def test_random_features_decode_to_proper_rotations():
    rng = np.random.default_rng(1)
    for v in rng.normal(size=(1000, 6)):
        R = sixd_to_rot(v)
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-6
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("v", [[0, 0, 0, 0, 1, 0], [1, 0, 0, 3, 0, 0], [1, 2, 3, 2, 4, 6]])
def test_degenerate_features(v):
    with pytest.raises(DegenerateInput):
        sixd_to_rot(v)


def test_bad_shapes():
    with pytest.raises(DegenerateInput):
        rot_to_6d(np.eye(2))
    with pytest.raises(DegenerateInput):
        Pose.from_vector(np.zeros(7))


def test_pose_yaw_and_vector():
    pose = Pose.from_xyz_yaw(0.1, 0.0, 0.2, yaw=0.7)
    assert pose.yaw == pytest.approx(0.7)
    np.testing.assert_allclose(pose.matrix, yaw_matrix(0.7), atol=1e-12)
    again = Pose.from_vector(pose.to_vector())
    np.testing.assert_array_equal(again.position, pose.position)
    assert again.is_finite()
    assert not Pose(np.array([np.nan, 0, 0]), pose.rotation6d).is_finite()


def test_lag_pose_moves_part_way():
    a = Pose.from_xyz_yaw(0.0, 0.0, 0.0, 0.0)
    b = Pose.from_xyz_yaw(1.0, 0.0, 0.0, 1.0)
    half = lag_pose(a, b, 0.5)
    np.testing.assert_allclose(half.position, [0.5, 0.0, 0.0])
    assert half.yaw == pytest.approx(0.5)
    assert lag_pose(a, b, 1.0).yaw == pytest.approx(1.0)
    still = lag_pose(a, a, 0.3)
    np.testing.assert_array_equal(still.rotation6d, a.rotation6d)
