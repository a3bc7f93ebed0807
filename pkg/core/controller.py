"""Dual-mode grip control: width position mode out of contact, PID force
mode in contact, plus the grip-width to motor-unit calibration."""

from __future__ import annotations

import sys
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from core.config import ControllerConfig
from core.errors import DegenerateSamples
from core.geometry import Pose
from core.world import WorldState, remove_object, step

_log = lambda *a, **kw: print(*a, file=sys.stderr, **kw)

TRACE_COLUMNS = ("t", "mode", "e", "integral", "command", "F_hat", "F_d")


class Mode(str, Enum):
    WIDTH = "width"
    FORCE = "force"


@dataclass(frozen=True)
class ControllerState:
    mode: Mode = Mode.WIDTH
    integral: float = 0.0
    prev_error: float = 0.0
    last_width_cmd: float = 0.0
    force_history: tuple[float, ...] = ()
    saturated: bool = False


def select_mode(F_z_d: float, F_z_hat: float, theta: float = -0.5) -> Mode:
    """FORCE only when both the target and the estimate are strictly below theta."""
    if F_z_d < theta and F_z_hat < theta:
        return Mode.FORCE
    return Mode.WIDTH


def force_pid_tick(
    state: ControllerState,
    F_z_hat: float,
    F_z_d: float,
    current_width: float,
    dt: float,
    cfg: ControllerConfig | None = None,
) -> tuple[float, ControllerState]:
    """One PID tick on e = F_z_hat - F_z_d.

    Compression is negative, so e > 0 means the grip is too weak and the
    correction closes the gripper: width_cmd = current_width - delta.
    """
    cfg = cfg or ControllerConfig()
    e = F_z_hat - F_z_d
    integral = float(np.clip(state.integral + cfg.ki * e * dt, -cfg.integral_clamp, cfg.integral_clamp))
    derivative = cfg.kd * (e - state.prev_error) / dt
    raw = cfg.kp * e + integral + derivative
    delta = float(np.clip(raw, -cfg.output_clamp, cfg.output_clamp))
    width_cmd = float(np.clip(current_width - delta, 0.0, cfg.w_max))
    return width_cmd, replace(
        state,
        integral=integral,
        prev_error=e,
        last_width_cmd=width_cmd,
        saturated=delta != raw,
    )


@dataclass(frozen=True)
class ControlRecord:
    mode: Mode
    error: float
    integral: float
    command: float
    F_hat: float
    F_d: float


def controller_step(
    state: ControllerState,
    target_width: float,
    target_force: float,
    F_z_hat: float,
    current_width: float,
    dt: float,
    cfg: ControllerConfig | None = None,
) -> tuple[float, ControllerState, ControlRecord]:
    """Dual-mode tick. The policy width is ignored while in FORCE mode."""
    cfg = cfg or ControllerConfig()
    history = (state.force_history + (float(F_z_hat),))[-cfg.filter_taps :]
    F_filtered = float(np.mean(history))
    state = replace(state, force_history=history)

    mode = select_mode(target_force, F_filtered, cfg.switch_threshold)
    if mode == Mode.FORCE:
        if state.mode == Mode.WIDTH:
            # bumpless entry: no derivative kick on the first force tick
            state = replace(state, integral=0.0, prev_error=F_filtered - target_force)
        width_cmd, state = force_pid_tick(state, F_filtered, target_force, current_width, dt, cfg)
        state = replace(state, mode=Mode.FORCE)
        error = state.prev_error
    else:
        if state.mode == Mode.FORCE:
            state = replace(state, integral=0.0, prev_error=0.0)
        width_cmd = float(np.clip(target_width, 0.0, cfg.w_max))
        state = replace(state, mode=Mode.WIDTH, last_width_cmd=width_cmd, saturated=False)
        error = 0.0
    return width_cmd, state, ControlRecord(mode, error, state.integral, width_cmd, F_filtered, float(target_force))


def trace_array(times, records: list[ControlRecord]) -> np.ndarray:
    """N x 7 float32 table with TRACE_COLUMNS."""
    rows = [
        (t, 1.0 if r.mode == Mode.FORCE else 0.0, r.error, r.integral, r.command, r.F_hat, r.F_d)
        for t, r in zip(times, records)
    ]
    return np.asarray(rows, dtype=np.float32).reshape(-1, len(TRACE_COLUMNS))


# ---------------------------------------------------------------------------
# Width <-> motor units
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WidthMotorMap:
    """motor_units = a * width + b"""

    a: float
    b: float

    def __post_init__(self):
        if self.a == 0 or not np.isfinite(self.a) or not np.isfinite(self.b):
            raise DegenerateSamples(f"invalid width map slope {self.a}")

    def to_units(self, width: float) -> int:
        return int(round(self.a * width + self.b))

    def to_width(self, units: float) -> float:
        return (units - self.b) / self.a


def calibrate_width_map(samples) -> WidthMotorMap:
    """Ordinary least squares fit of motor units against width."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    if len(samples) < 2 or np.ptp(samples[:, 0]) == 0.0:
        raise DegenerateSamples("need at least two samples with distinct widths")
    A = np.column_stack([samples[:, 0], np.ones(len(samples))])
    (a, b), *_ = np.linalg.lstsq(A, samples[:, 1], rcond=None)
    return WidthMotorMap(float(a), float(b))


# true map of the simulated motor; the calibration has to recover it
TRUE_MOTOR_MAP = WidthMotorMap(-20000.0, 4096.0)


class SimulatedMotor:
    """Integer-unit motor interface in front of the simulated gripper."""

    def __init__(self, true_map: WidthMotorMap = TRUE_MOTOR_MAP, w_max: float = 0.08):
        self.true_map = true_map
        self.w_max = w_max

    def width_for_units(self, units: int) -> float:
        return float(np.clip(self.true_map.to_width(int(units)), 0.0, self.w_max))


def run_calibration(
    world: WorldState,
    motor: SimulatedMotor | None = None,
    n_points: int = 9,
    settle_time: float = 0.4,
    dt: float = 1.0 / 50.0,
    measurement_std: float = 1e-4,
    rng: np.random.Generator | None = None,
) -> WidthMotorMap:
    """Sweep the empty gripper closed in motor units and fit the map."""
    motor = motor or SimulatedMotor(w_max=world.w_max)
    rng = rng if rng is not None else np.random.default_rng(0)
    world = remove_object(world)
    hold = Pose(world.arm_pose.position.copy(), world.arm_pose.rotation6d.copy())

    u_open = motor.true_map.to_units(world.w_max * 0.95)
    u_closed = motor.true_map.to_units(world.w_max * 0.05)
    samples = []
    for units in np.linspace(u_open, u_closed, n_points).round().astype(int):
        target = motor.width_for_units(units)
        for _ in range(int(round(settle_time / dt))):
            world = step(world, hold, target, dt)
        measured = world.gripper.width + (rng.normal(0.0, measurement_std) if measurement_std > 0 else 0.0)
        samples.append((measured, units))
    fit = calibrate_width_map(samples)
    _log(f"[CALIB] a={fit.a:.1f} units/m  b={fit.b:.1f} units  ({n_points} points)")
    return fit
