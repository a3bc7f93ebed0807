"""Run configuration: flat dotenv documents with prefixed sections.

A config file looks like::

    # --- run ---
    RUN_TASK=fragile_pick
    RUN_SEED=7
    # --- policy ---
    POLICY_VARIANT=farm
    POLICY_DOWN_DIMS=64,128,256

Precedence is file < process environment < command-line flags.
"""

from __future__ import annotations

import os
import subprocess
import sys
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path

from dotenv import dotenv_values

from core.errors import UsageError
from core.world import TaskId, TaskSpec, default_task

_log = lambda *a, **kw: print(*a, file=sys.stderr, **kw)

FALLBACK_VERSION = "0.1.0"


class Variant(str, Enum):
    FARM = "farm"
    FORCE_AWARE = "force_aware"
    TACTILE_AWARE = "tactile_aware"
    VISION_ONLY = "vision_only"


@dataclass
class PolicyConfig:
    variant: Variant = Variant.FARM
    obs_horizon: int = 2
    pred_horizon: int = 32
    exec_horizon: int = 16
    ddpm_steps: int = 100
    ddim_steps: int = 10
    train_iters: int = 60000
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-6
    ema_decay: float = 0.995
    beta_schedule: str = "squaredcos_cap_v2"
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256)
    image_feature_dim: int = 128
    down_dims: tuple[int, ...] = (128, 256, 512)
    kernel_size: int = 5
    n_groups: int = 8
    step_embed_dim: int = 128
    film_placement: str = "post_first_conv"
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.obs_horizon < 1:
            raise UsageError("obs_horizon must be >= 1")
        if self.exec_horizon > self.pred_horizon or self.exec_horizon < 1:
            raise UsageError("exec_horizon must lie in [1, pred_horizon]")
        if not 1 <= self.ddim_steps <= self.ddpm_steps:
            raise UsageError("ddim_steps must lie in [1, ddpm_steps]")
        if self.pred_horizon % (2 ** (len(self.down_dims) - 1)):
            raise UsageError("pred_horizon must be divisible by 2**(len(down_dims)-1)")


# iterations, widths and demo counts per training profile
PROFILES: dict[str, dict] = {
    "full": {},
    "toy": {
        "train_iters": 2000,
        "encoder_channels": (8, 16, 32, 32),
        "image_feature_dim": 32,
        "down_dims": (32, 64, 128),
        "step_embed_dim": 32,
        "n_groups": 4,
        "batch_size": 32,
        "lr": 1e-3,
    },
    "toy_plus": {
        "train_iters": 10000,
        "encoder_channels": (16, 32, 64, 64),
        "image_feature_dim": 64,
        "down_dims": (64, 128, 256),
        "step_embed_dim": 64,
        "batch_size": 64,
        "lr": 5e-4,
    },
}
PROFILE_DEMOS = {"full": 30, "toy": 5, "toy_plus": 30}


@dataclass
class ControllerConfig:
    switch_threshold: float = -0.5
    kp: float = 1.0e-3
    ki: float = 5e-4
    kd: float = 5e-6
    integral_clamp: float = 0.005
    output_clamp: float = 0.002
    force_loop_rate: float = 25.0
    motor_rate: float = 50.0
    filter_taps: int = 2
    w_max: float = 0.08

    def __post_init__(self):
        if self.switch_threshold >= 0:
            raise UsageError("switch_threshold must be negative")
        if self.integral_clamp <= 0 or self.output_clamp <= 0:
            raise UsageError("controller clamps must be positive")
        if self.filter_taps < 1:
            raise UsageError("filter_taps must be >= 1")


@dataclass
class TactileConfig:
    rows: int = 40
    cols: int = 54
    cell_noise_std: float = 5e-4
    bias_std: float = 0.05
    policy_size: int = 96

    def __post_init__(self):
        if self.cell_noise_std < 0 or self.bias_std < 0:
            raise UsageError("tactile noise stds must be >= 0")


@dataclass
class DemoConfig:
    n_demos: int = 30
    rgb_rate: float = 30.0
    pose_rate: float = 120.0
    width_rate: float = 30.0
    tactile_rate: float = 25.0
    force_rate: float = 25.0
    timestamp_jitter: float = 1e-3
    waypoint_jitter: float = 0.002
    force_jitter: float = 0.05
    max_skew_factor: float = 1.5
    max_failures: int = 2

    def __post_init__(self):
        rates = (self.rgb_rate, self.pose_rate, self.width_rate, self.tactile_rate, self.force_rate)
        if min(rates) <= 0:
            raise UsageError("stream rates must be positive")


@dataclass
class EvalConfig:
    n_rollouts: int = 20
    seed_offset: int = 1000
    assist_until_grasp: bool = True
    contact_threshold: float = 0.5
    bootstrap_resamples: int = 1000
    confidence: float = 0.95


@dataclass
class RunConfig:
    task: TaskId = TaskId.FRAGILE_PICK
    task_overrides: dict = field(default_factory=dict)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    tactile: TactileConfig = field(default_factory=TactileConfig)
    demo: DemoConfig = field(default_factory=DemoConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out_dir: str = "out"
    profile: str = "full"
    workers: int = 0  # 0: FARM_MAX_WORKERS, else 1

    @property
    def task_spec(self) -> TaskSpec:
        return apply_task_overrides(default_task(self.task), self.task_overrides)

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    def dataset_dir(self, task: TaskId | None = None) -> Path:
        return self.out / "dataset" / TaskId(task or self.task).value

    def checkpoint_path(self, task: TaskId | None = None, variant: Variant | None = None) -> Path:
        task = TaskId(task or self.task)
        variant = Variant(variant or self.policy.variant)
        return self.out / "checkpoints" / f"{task.value}_{variant.value}.pt"

    def rollout_dir(self, task: TaskId | None = None, label: str | None = None) -> Path:
        """`label` is a variant value or a reference source name."""
        task = TaskId(task or self.task)
        label = str(getattr(label, "value", label) or self.policy.variant.value)
        return self.out / "rollouts" / f"{task.value}_{label}"

    @property
    def eval_dir(self) -> Path:
        return self.out / "eval"


# section prefix -> RunConfig attribute
SECTIONS = {
    "POLICY_": "policy",
    "CONTROLLER_": "controller",
    "TACTILE_": "tactile",
    "DEMO_": "demo",
    "EVAL_": "eval",
}
RUN_KEYS = ("task", "seed", "out_dir", "profile", "workers")
KNOWN_PREFIXES = ("RUN_", "TASK_", *SECTIONS)


def _parse_value(raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, Enum):
            return type(default)(raw.lower())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s for s in raw.replace(" ", "").split(",") if s]
            cast = type(default[0]) if default else float
            return tuple(cast(s) for s in items)
    except ValueError as e:
        raise UsageError(f"cannot parse config value {raw!r}: {e}") from e
    return raw


def _format_value(value) -> str:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def apply_task_overrides(spec: TaskSpec, overrides: dict) -> TaskSpec:
    changes = {}
    for name, raw in overrides.items():
        if not hasattr(spec, name) or name == "task_id":
            raise UsageError(f"unknown task parameter: TASK_{name.upper()}")
        default = getattr(spec, name)
        if default is None:
            default = 0.0
        changes[name] = _parse_value(str(raw), default) if isinstance(raw, str) else raw
    try:
        return replace(spec, **changes)
    except ValueError as e:
        raise UsageError(str(e)) from e


def _section_kwargs(cls, prefix: str, values: dict) -> dict:
    defaults = cls()
    kwargs = {}
    for f in fields(cls):
        key = prefix + f.name.upper()
        if key in values:
            kwargs[f.name] = _parse_value(values[key], getattr(defaults, f.name))
    return kwargs


def resolve_values(path: str | os.PathLike | None = None, env: dict | None = None) -> dict:
    """Merge the config file and the environment into one flat dict."""
    values: dict[str, str] = {}
    if path is not None:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        values.update({k: v for k, v in dotenv_values(path).items() if v is not None})
    env = os.environ if env is None else env
    values.update({k: v for k, v in env.items() if k.startswith(KNOWN_PREFIXES)})
    return values


def build_run_config(values: dict, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from flat KEY=value pairs plus CLI overrides.

    `overrides` uses RunConfig attribute names (``seed``, ``task``, ``variant``,
    ``profile``...) and wins over everything else.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    run_defaults = RunConfig.__dataclass_fields__
    run_kwargs = {}
    for name in RUN_KEYS:
        key = "RUN_" + name.upper()
        if key in values:
            default = run_defaults[name].default
            run_kwargs[name] = _parse_value(values[key], default)
    for name in RUN_KEYS:
        if name in overrides:
            run_kwargs[name] = overrides[name]
    if "task" in run_kwargs:
        try:
            run_kwargs["task"] = TaskId(str(run_kwargs["task"]).lower())
        except ValueError as e:
            raise UsageError(f"unknown task: {run_kwargs['task']}") from e

    profile = run_kwargs.get("profile", "full")
    if profile not in PROFILES:
        raise UsageError(f"unknown profile: {profile} (choose from {', '.join(PROFILES)})")

    policy_kwargs = dict(PROFILES[profile])
    policy_kwargs.update(_section_kwargs(PolicyConfig, "POLICY_", values))
    if "variant" in overrides:
        try:
            policy_kwargs["variant"] = Variant(str(overrides["variant"]).lower())
        except ValueError as e:
            raise UsageError(f"unknown variant: {overrides['variant']}") from e
    policy_kwargs["seed"] = run_kwargs.get("seed", 0)

    demo_kwargs = {"n_demos": PROFILE_DEMOS[profile]}
    demo_kwargs.update(_section_kwargs(DemoConfig, "DEMO_", values))
    if "n_demos" in overrides:
        demo_kwargs["n_demos"] = int(overrides["n_demos"])

    eval_kwargs = _section_kwargs(EvalConfig, "EVAL_", values)
    if "n_rollouts" in overrides:
        eval_kwargs["n_rollouts"] = int(overrides["n_rollouts"])

    task_overrides = {
        k[len("TASK_"):].lower(): v for k, v in values.items() if k.startswith("TASK_")
    }

    cfg = RunConfig(
        task_overrides=task_overrides,
        policy=PolicyConfig(**policy_kwargs),
        controller=ControllerConfig(**_section_kwargs(ControllerConfig, "CONTROLLER_", values)),
        tactile=TactileConfig(**_section_kwargs(TactileConfig, "TACTILE_", values)),
        demo=DemoConfig(**demo_kwargs),
        eval=EvalConfig(**eval_kwargs),
        **run_kwargs,
    )
    cfg.task_spec  # validates overrides early
    return cfg


def load_run_config(path=None, overrides: dict | None = None, env: dict | None = None) -> RunConfig:
    return build_run_config(resolve_values(path, env), overrides)


def dump_run_config(cfg: RunConfig) -> str:
    lines = ["# --- run ---"]
    for name in RUN_KEYS:
        lines.append(f"RUN_{name.upper()}={_format_value(getattr(cfg, name))}")
    lines.append("# --- task ---")
    for name, value in sorted(cfg.task_overrides.items()):
        lines.append(f"TASK_{name.upper()}={_format_value(value)}")
    for prefix, attr in SECTIONS.items():
        lines.append(f"# --- {attr} ---")
        section = getattr(cfg, attr)
        for f in fields(section):
            lines.append(f"{prefix}{f.name.upper()}={_format_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def write_run_config(cfg: RunConfig, directory: str | os.PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "run.env"
    path.write_text(dump_run_config(cfg), encoding="utf-8")
    return path


def config_dict(cfg: RunConfig) -> dict:
    """JSON-friendly view embedded into every artifact."""
    return {
        line.split("=", 1)[0]: line.split("=", 1)[1]
        for line in dump_run_config(cfg).splitlines()
        if line and not line.startswith("#")
    }


def version_string() -> str:
    """git-describe style version, or the package version outside a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.SubprocessError):
        return FALLBACK_VERSION
    if out.returncode != 0 or not out.stdout.strip():
        return FALLBACK_VERSION
    return out.stdout.strip()
