"""Diffusion policy for all four variants.

Per-modality convolutional image encoders feed a conditioning vector into a
FiLM-conditioned 1D temporal U-Net that predicts the noise added to a chunk
of normalized actions. Training uses the DDPM forward process, inference
runs deterministic DDIM.

Checkpoint container (``torch.save`` of one dict):

    schema_version   int, CHECKPOINT_SCHEMA
    version          git-describe string of the code that trained it
    task_id          task the demonstrations came from
    variant          policy variant value
    policy_config    PolicyConfig as plain types
    stats            NormalizationStats.to_dict()
    state_dict       EMA weights
    seed             master seed
    config           flat run config (KEY -> value)
    train            {"iterations", "final_loss"}
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from diffusers.schedulers.scheduling_ddim import DDIMScheduler
from diffusers.schedulers.scheduling_ddpm import DDPMScheduler
from diffusers.training_utils import EMAModel
from torch import Tensor, nn

from core.config import PolicyConfig, Variant
from core.dataset import (
    IMAGE_KEYS,
    LOW_DIM_KEYS,
    LOW_DIM_SIZES,
    NormalizationStats,
    action_dim,
    low_dim_size,
    sample_batch,
)
from core.demos import Observation
from core.errors import (
    CheckpointVariantMismatch,
    CorruptFile,
    NonFiniteLoss,
    ShapeMismatch,
    VariantFieldMismatch,
    VersionMismatch,
)
from core.tactile import normalize_channels
from core.world import TaskId

_log = lambda *a, **kw: print(*a, file=sys.stderr, **kw)

CHECKPOINT_SCHEMA = 1
FILM_PLACEMENTS = ("post_first_conv", "post_second_conv")


# ---------------------------------------------------------------------------
# Observation encoding
# ---------------------------------------------------------------------------

class ImageEncoder(nn.Module):
    """Stride-2 conv stages, global average pooling, linear projection."""

    def __init__(self, channels: tuple[int, ...], feature_dim: int, in_channels: int = 3):
        super().__init__()
        layers, prev = [], in_channels
        for ch in channels:
            layers += [
                nn.Conv2d(prev, ch, kernel_size=3, stride=2, padding=1),
                nn.GroupNorm(math.gcd(ch, 8), ch),
                nn.Mish(),
            ]
            prev = ch
        self.backbone = nn.Sequential(*layers)
        self.proj = nn.Linear(prev, feature_dim)

    def forward(self, x: Tensor) -> Tensor:
        # (N, 3, H, W) -> (N, feature_dim)
        return self.proj(self.backbone(x).mean(dim=(-2, -1)))


class ObservationEncoder(nn.Module):
    """Concatenates, over the observation horizon, one feature vector per
    image modality and the normalized low-dimensional observations."""

    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.image_keys = IMAGE_KEYS[cfg.variant]
        self.obs_horizon = cfg.obs_horizon
        self.low_dim = low_dim_size(cfg.variant)
        self.encoders = nn.ModuleDict(
            {k: ImageEncoder(cfg.encoder_channels, cfg.image_feature_dim) for k in self.image_keys}
        )
        self.cond_dim = cfg.obs_horizon * (len(self.image_keys) * cfg.image_feature_dim + self.low_dim)

    def forward(self, obs: dict[str, Tensor]) -> Tensor:
        expected = {*self.image_keys, "low_dim"}
        if set(obs) != expected:
            raise VariantFieldMismatch(f"observation fields {sorted(obs)} != {sorted(expected)}")
        low = obs["low_dim"]
        if low.ndim != 3 or tuple(low.shape[1:]) != (self.obs_horizon, self.low_dim):
            raise ShapeMismatch(f"low_dim must be (B, {self.obs_horizon}, {self.low_dim}), got {tuple(low.shape)}")
        B, T = low.shape[:2]
        parts = []
        for key in self.image_keys:
            img = obs[key]
            if img.ndim != 5 or tuple(img.shape[:2]) != (B, T) or img.shape[-1] != 3:
                raise ShapeMismatch(f"{key} must be (B, T, H, W, 3), got {tuple(img.shape)}")
            flat = img.reshape(B * T, *img.shape[2:]).permute(0, 3, 1, 2)
            parts.append(self.encoders[key](flat.to(low.dtype)).reshape(B, T, -1))
        parts.append(low)
        return torch.cat(parts, dim=-1).flatten(start_dim=1)


# ---------------------------------------------------------------------------
# Denoiser
# ---------------------------------------------------------------------------

class SinusoidalStepEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, k: Tensor) -> Tensor:
        half = self.dim // 2
        scale = math.log(10000) / (half - 1)
        freqs = torch.exp(torch.arange(half, device=k.device) * -scale)
        args = k.float()[:, None] * freqs[None, :]
        return torch.cat([args.sin(), args.cos()], dim=-1)


class Conv1dBlock(nn.Module):
    """Conv1d -> GroupNorm -> Mish"""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, n_groups: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv1d(in_ch, out_ch, kernel_size, padding=kernel_size // 2),
            nn.GroupNorm(n_groups, out_ch),
            nn.Mish(),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.block(x)


class FiLMResidualBlock(nn.Module):
    """Two conv blocks with a per-channel scale-and-shift from the
    conditioning vector between (or after) them, plus a residual path."""

    def __init__(self, in_ch, out_ch, cond_dim, kernel_size=5, n_groups=8, placement="post_first_conv"):
        super().__init__()
        if placement not in FILM_PLACEMENTS:
            raise ValueError(f"unknown FiLM placement {placement!r}")
        self.placement = placement
        self.out_ch = out_ch
        self.conv1 = Conv1dBlock(in_ch, out_ch, kernel_size, n_groups)
        self.film = nn.Sequential(nn.Mish(), nn.Linear(cond_dim, 2 * out_ch))
        self.conv2 = Conv1dBlock(out_ch, out_ch, kernel_size, n_groups)
        self.residual = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: Tensor, cond: Tensor) -> Tensor:
        scale, shift = self.film(cond).unsqueeze(-1).chunk(2, dim=1)
        h = self.conv1(x)
        if self.placement == "post_first_conv":
            h = self.conv2(scale * h + shift)
        else:
            h = scale * self.conv2(h) + shift
        return h + self.residual(x)


class ConditionalUnet1d(nn.Module):
    """Encoder-decoder over the horizon axis. Input and output are (B, T, action_dim)."""

    def __init__(self, action_dim: int, cond_dim: int, cfg: PolicyConfig):
        super().__init__()
        d = cfg.step_embed_dim
        self.step_embedding = SinusoidalStepEmbedding(d)
        self.step_encoder = nn.Sequential(
            nn.Linear(d, 4 * d),
            nn.Mish(),
            nn.Linear(4 * d, d),
        )
        block = partial(
            FiLMResidualBlock,
            cond_dim=d + cond_dim,
            kernel_size=cfg.kernel_size,
            n_groups=cfg.n_groups,
            placement=cfg.film_placement,
        )
        dims = (action_dim, *cfg.down_dims)
        in_out = list(zip(dims[:-1], dims[1:]))

        self.down = nn.ModuleList()
        for i, (c_in, c_out) in enumerate(in_out):
            last = i == len(in_out) - 1
            self.down.append(nn.ModuleList([
                block(c_in, c_out),
                block(c_out, c_out),
                nn.Identity() if last else nn.Conv1d(c_out, c_out, 3, stride=2, padding=1),
            ]))

        mid = cfg.down_dims[-1]
        self.mid = nn.ModuleList([block(mid, mid), block(mid, mid)])

        self.up = nn.ModuleList()
        for c_in, c_out in reversed(in_out[1:]):
            self.up.append(nn.ModuleList([
                block(c_out * 2, c_in),
                block(c_in, c_in),
                nn.ConvTranspose1d(c_in, c_in, 4, stride=2, padding=1),
            ]))

        base = cfg.down_dims[0]
        self.final = nn.Sequential(
            Conv1dBlock(base, base, cfg.kernel_size, cfg.n_groups),
            nn.Conv1d(base, action_dim, 1),
        )
        with torch.no_grad():
            # small initial output keeps the untrained loss at the noise variance
            self.final[-1].weight.mul_(0.1)
            self.final[-1].bias.zero_()

    def forward(self, sample: Tensor, k: Tensor, cond: Tensor) -> Tensor:
        x = sample.transpose(1, 2)
        step = self.step_encoder(self.step_embedding(k).to(cond.dtype))
        film_cond = torch.cat([step, cond], dim=-1)

        skips = []
        for res1, res2, downsample in self.down:
            x = res2(res1(x, film_cond), film_cond)
            skips.append(x)
            x = downsample(x)
        for res in self.mid:
            x = res(x, film_cond)
        for res1, res2, upsample in self.up:
            x = torch.cat([x, skips.pop()], dim=1)
            x = upsample(res2(res1(x, film_cond), film_cond))
        return self.final(x).transpose(1, 2)


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------

def _scheduler_kwargs(cfg: PolicyConfig) -> dict:
    return {
        "num_train_timesteps": cfg.ddpm_steps,
        "beta_schedule": cfg.beta_schedule,
        "clip_sample": True,
        "prediction_type": "epsilon",
    }


class DiffusionPolicy(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        self.variant = Variant(cfg.variant)
        self.action_dim = action_dim(self.variant)
        self.obs_encoder = ObservationEncoder(cfg)
        self.unet = ConditionalUnet1d(self.action_dim, self.obs_encoder.cond_dim, cfg)
        self.noise_scheduler = DDPMScheduler(**_scheduler_kwargs(cfg))
        self.sampler = DDIMScheduler(**_scheduler_kwargs(cfg))

    @property
    def cond_dim(self) -> int:
        return self.obs_encoder.cond_dim

    @property
    def obs_keys(self) -> tuple[str, ...]:
        return (*IMAGE_KEYS[self.variant], "low_dim")

    def encode_observation(self, obs: dict[str, Tensor]) -> Tensor:
        return self.obs_encoder(obs)

    def denoise(self, noisy_actions: Tensor, k, cond: Tensor) -> Tensor:
        expected = (self.cfg.pred_horizon, self.action_dim)
        if noisy_actions.ndim != 3 or tuple(noisy_actions.shape[1:]) != expected:
            raise ShapeMismatch(f"noisy actions must be (B, {expected[0]}, {expected[1]}), got {tuple(noisy_actions.shape)}")
        B = noisy_actions.shape[0]
        if cond.ndim != 2 or tuple(cond.shape) != (B, self.cond_dim):
            raise ShapeMismatch(f"cond must be ({B}, {self.cond_dim}), got {tuple(cond.shape)}")
        k = torch.as_tensor(k, dtype=torch.long, device=noisy_actions.device)
        if k.ndim == 0:
            k = k.expand(B)
        if bool((k < 0).any()) or bool((k >= self.cfg.ddpm_steps).any()):
            raise ValueError(f"diffusion step outside [0, {self.cfg.ddpm_steps})")
        return self.unet(noisy_actions, k, cond)

    def compute_loss(
        self,
        batch: dict[str, Tensor],
        generator: torch.Generator | None = None,
        noise: Tensor | None = None,
        timesteps: Tensor | None = None,
    ) -> Tensor:
        """Noise-prediction MSE. `noise` and `timesteps` are drawn from
        `generator` unless given."""
        cond = self.encode_observation({k: batch[k] for k in batch if k != "action"})
        actions = batch["action"]
        B = actions.shape[0]
        if noise is None:
            noise = torch.randn(actions.shape, generator=generator, dtype=actions.dtype)
        if timesteps is None:
            timesteps = torch.randint(0, self.cfg.ddpm_steps, (B,), generator=generator)
        noisy = self.noise_scheduler.add_noise(actions, noise, timesteps)
        return F.mse_loss(self.denoise(noisy, timesteps, cond), noise)

    @torch.no_grad()
    def ddim_sample(self, cond: Tensor, steps: int | None = None, seed: int = 0) -> Tensor:
        """(B, pred_horizon, action_dim) normalized actions, clipped to [-1, 1]."""
        steps = steps or self.cfg.ddim_steps
        generator = torch.Generator().manual_seed(int(seed))
        B = cond.shape[0]
        sample = torch.randn((B, self.cfg.pred_horizon, self.action_dim), generator=generator, dtype=cond.dtype)
        # per-call copy, the shared template keeps its timesteps
        sampler = DDIMScheduler.from_config(self.sampler.config)
        sampler.set_timesteps(steps)
        for k in sampler.timesteps:
            eps = self.denoise(sample, k, cond)
            sample = sampler.step(eps, k, sample, eta=0.0).prev_sample
        return sample.clamp(-1.0, 1.0)


def batch_to_tensors(batch: dict[str, np.ndarray], dtype: torch.dtype = torch.float32) -> dict[str, Tensor]:
    return {k: torch.as_tensor(np.asarray(v), dtype=dtype) for k, v in batch.items()}


def observation_tensors(
    history: list[Observation],
    variant: Variant,
    stats: NormalizationStats,
    dtype: torch.dtype = torch.float32,
) -> dict[str, Tensor]:
    """Batch of one from the last obs_horizon runtime observations."""
    variant = Variant(variant)
    images = {}
    for key in IMAGE_KEYS[variant]:
        frames = []
        for obs in history:
            if key == "rgb":
                frame = obs.rgb
            elif key == "tactile":
                frame = obs.tactile_image
                if frame is None and obs.tactile_raw_grid is not None:
                    frame = normalize_channels(obs.tactile_raw_grid, stats.tactile_bounds)
            else:
                frame = obs.raw_tactile_image
            if frame is None:
                raise VariantFieldMismatch(f"{variant.value} needs the {key} image")
            frames.append(np.asarray(frame, dtype=np.float32))
        images[key] = np.stack(frames)[None]

    sources = {
        "pose": lambda o: o.pose,
        "width": lambda o: o.grip_width,
        "force": lambda o: o.scalar_normal_force,
        "binary": lambda o: o.binary_gripper,
    }
    low = {}
    for key in LOW_DIM_KEYS[variant]:
        values = [sources[key](o) for o in history]
        if any(v is None for v in values):
            raise VariantFieldMismatch(f"{variant.value} needs the {key} observation")
        low[key] = np.asarray(values, dtype=np.float64).reshape(len(history), LOW_DIM_SIZES[key])
    images["low_dim"] = stats.normalize_concat(LOW_DIM_KEYS[variant], low)[None]
    return batch_to_tensors(images, dtype)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def final_loss(self) -> float:
        return running_mean(self.losses, 100)[-1] if self.losses else float("nan")


def running_mean(values, window: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return values
    csum = np.cumsum(np.insert(values, 0, 0.0))
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def ddpm_train_step(
    policy: DiffusionPolicy,
    optimizer: torch.optim.Optimizer,
    batch: dict[str, Tensor],
    generator: torch.Generator | None = None,
    ema: EMAModel | None = None,
) -> float:
    """One optimizer update on the noise-prediction loss; returns the loss."""
    policy.train()
    loss = policy.compute_loss(batch, generator=generator)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NonFiniteLoss(f"training loss became {value}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    if ema is not None:
        ema.step(policy.parameters())
    return value


def train_policy(
    dataset,
    stats: NormalizationStats,
    cfg: PolicyConfig,
    seed: int | None = None,
) -> tuple[DiffusionPolicy, TrainResult]:
    """Train from scratch. One seed drives weight init, data order and noise.
    Returns the policy holding its EMA weights."""
    seed = cfg.seed if seed is None else int(seed)
    torch.manual_seed(seed)
    policy = DiffusionPolicy(cfg)
    optimizer = torch.optim.AdamW(policy.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    ema = EMAModel(policy.parameters(), decay=cfg.ema_decay)
    data_rng = np.random.default_rng(seed)
    generator = torch.Generator().manual_seed(seed)

    n_params = sum(p.numel() for p in policy.parameters())
    _log(f"[TRAIN] {cfg.variant.value}: {n_params:,} parameters, {cfg.train_iters} iterations")
    result = TrainResult()
    for it in range(cfg.train_iters):
        batch = sample_batch(dataset, data_rng, stats, cfg.variant, cfg.batch_size, cfg.obs_horizon, cfg.pred_horizon)
        result.losses.append(ddpm_train_step(policy, optimizer, batch_to_tensors(batch), generator, ema))
        result.iterations = it + 1
        if (it + 1) % cfg.log_every == 0:
            _log(f"[TRAIN] iter {it + 1}/{cfg.train_iters}  loss {np.mean(result.losses[-cfg.log_every:]):.4f}")

    ema.copy_to(policy.parameters())
    policy.eval()
    return policy, result


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def policy_config_dict(cfg: PolicyConfig) -> dict:
    out = asdict(cfg)
    out["variant"] = Variant(cfg.variant).value
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def policy_config_from_dict(data: dict) -> PolicyConfig:
    return PolicyConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass
class LoadedPolicy:
    policy: DiffusionPolicy
    stats: NormalizationStats
    task_id: TaskId
    meta: dict


def save_checkpoint(
    path: str | Path,
    policy: DiffusionPolicy,
    stats: NormalizationStats,
    task_id: TaskId,
    seed: int,
    config: dict | None = None,
    version: str | None = None,
    train: TrainResult | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": CHECKPOINT_SCHEMA,
        "version": version,
        "task_id": TaskId(task_id).value,
        "variant": policy.variant.value,
        "policy_config": policy_config_dict(policy.cfg),
        "stats": stats.to_dict(),
        "state_dict": policy.state_dict(),
        "seed": int(seed),
        "config": config or {},
        "train": {
            "iterations": train.iterations if train else 0,
            "final_loss": float(train.final_loss) if train else None,
        },
    }
    torch.save(payload, path)
    _log(f"[LOG] Saved checkpoint to {path}")
    return path


def load_checkpoint(
    path: str | Path,
    task_id: TaskId | None = None,
    variant: Variant | None = None,
) -> LoadedPolicy:
    path = Path(path)
    if not path.is_file():
        raise CorruptFile(f"{path}: missing checkpoint; run train first")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CorruptFile(f"{path}: unreadable checkpoint ({e})") from e
    if payload.get("schema_version") != CHECKPOINT_SCHEMA:
        raise VersionMismatch(f"{path}: checkpoint schema {payload.get('schema_version')} != {CHECKPOINT_SCHEMA}")
    if task_id is not None and payload["task_id"] != TaskId(task_id).value:
        raise CheckpointVariantMismatch(f"{path} was trained on {payload['task_id']}, not {TaskId(task_id).value}")
    if variant is not None and payload["variant"] != Variant(variant).value:
        raise CheckpointVariantMismatch(f"{path} holds variant {payload['variant']}, not {Variant(variant).value}")

    policy = DiffusionPolicy(policy_config_from_dict(payload["policy_config"]))
    policy.load_state_dict(payload["state_dict"])
    policy.eval()
    meta = {k: v for k, v in payload.items() if k not in ("state_dict", "stats")}
    return LoadedPolicy(policy, NormalizationStats.from_dict(payload["stats"]), TaskId(payload["task_id"]), meta)
