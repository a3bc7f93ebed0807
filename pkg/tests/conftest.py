import numpy as np
import pytest

from core.config import PolicyConfig, Variant
from core.demos import Trajectory
from core.geometry import Pose
from core.world import TaskId


def make_trajectory(n=60, seed=0, task=TaskId.FRAGILE_PICK, image_size=32, object_width=0.02):
    """Synthetic synchronized trajectory with smooth low-dim signals."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 25.0
    phase = np.linspace(0.0, 1.0, n)
    pose = np.stack([
        Pose.from_xyz_yaw(0.2 * p, 0.0, 0.08 - 0.05 * np.sin(np.pi * p), 0.3 * p).to_vector() for p in phase
    ]).astype(np.float32)
    width = (object_width + 0.02 * np.cos(np.pi * phase) ** 2).astype(np.float32)
    force = (-2.0 * np.sin(np.pi * phase) ** 2 + rng.normal(0.0, 0.01, n)).astype(np.float32)
    tactile = rng.normal(0.0, 0.01, (n, 40, 54, 3)).astype(np.float32)
    tactile[..., 2] += force[:, None, None] / (40 * 54)
    return Trajectory(
        task_id=task,
        t=t,
        rgb=rng.integers(0, 256, (n, image_size, image_size, 3), dtype=np.uint8),
        gel=rng.integers(0, 256, (n, image_size, image_size, 3), dtype=np.uint8),
        tactile_raw=tactile,
        force=force,
        width=width,
        pose=pose,
        binary=(width < object_width + 0.003).astype(np.float32),
        meta={"seed": seed, "success": True, "failure_reason": "none", "task_id": task.value},
    )


def tiny_policy_config(variant=Variant.FARM, **overrides) -> PolicyConfig:
    kwargs = dict(
        variant=variant,
        obs_horizon=2,
        pred_horizon=8,
        exec_horizon=4,
        ddpm_steps=100,
        ddim_steps=10,
        encoder_channels=(4, 8),
        image_feature_dim=8,
        down_dims=(16, 32),
        step_embed_dim=16,
        n_groups=4,
        batch_size=8,
        train_iters=5,
        log_every=5,
    )
    kwargs.update(overrides)
    return PolicyConfig(**kwargs)


@pytest.fixture
def dataset():
    return [make_trajectory(60, seed=s) for s in range(3)]
