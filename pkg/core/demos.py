"""Scripted demonstrations, multi-rate stream recording and synchronization
onto the tactile clock."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from core.config import DemoConfig, TactileConfig
from core.errors import MissingStream, NonOverlappingStreams
from core.outcomes import FailureReason, task_outcome
from core.tactile import TactileNoiseModel, TactileSensor, render_gel_image
from core.world import (
    G,
    TaskId,
    TaskSpec,
    WorldState,
    ground_truth_contact,
    new_world,
    render_rgb,
    step,
)
from core.geometry import Pose

_log = lambda *a, **kw: print(*a, file=sys.stderr, **kw)

SIM_DT = 1e-3
EXPERT_RATE = 50.0
TRAVEL_SPEED = 0.15         # m/s
SLOW_SPEED = 0.05           # m/s, insertion and placement
WIDTH_SPEED = 0.05          # m/s
ROTATE_SPEED = 0.8          # rad/s
SQUEEZE_TIME = 0.4
SETTLE_TIME = 0.2
OPEN_MARGIN = 0.03
LIFT_HEIGHT = 0.06
RETREAT_HEIGHT = 0.04
ARRIVE_TOL = 0.002
TIGHT_OVERSHOOT = 0.05      # rad past the tight angle before the expert lets go
TAIL_TIME = 0.3
BINARY_MARGIN = 0.003       # width below object width + margin reads as closed

REQUIRED_STREAMS = ("rgb", "pose", "width", "tactile", "force")


class Phase(str, Enum):
    APPROACH = "approach"
    DESCEND = "descend"
    CLOSE = "close"
    SQUEEZE = "squeeze"
    LIFT = "lift"
    TRANSPORT = "transport"
    LOWER = "lower"
    ROTATE = "rotate"
    RELEASE = "release"
    RETREAT = "retreat"
    DONE = "done"


def hold_force(task: TaskSpec) -> float:
    """Nominal hold force for the task (negative, compression)."""
    if task.task_id == TaskId.HEAVY_TRANSPORT:
        return -1.5 * task.object_mass * G / task.friction_mu
    if task.task_id == TaskId.FRAGILE_PICK:
        return -0.6 * task.crush_force
    return -1.2 * task.engage_force


@dataclass
class ExpertParams:
    force_target: float
    approach_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    grasp_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    goal_offset: float = 0.0
    insert_depth: float = 0.025


def expert_params(task: TaskSpec, rng: np.random.Generator | None, cfg: DemoConfig | None = None) -> ExpertParams:
    """Per-episode expert parameters; `rng=None` gives the noise-free expert."""
    cfg = cfg or DemoConfig()
    force = hold_force(task)
    if rng is None:
        return ExpertParams(force_target=force)

    def jitter(std, bound, size=None):
        return np.clip(rng.normal(0.0, std, size), -bound, bound)

    force *= 1.0 + jitter(cfg.force_jitter, 2.5 * cfg.force_jitter)
    if task.task_id == TaskId.FRAGILE_PICK:
        force = max(force, -0.9 * task.crush_force)
    elif task.task_id == TaskId.TIGHTEN:
        force = min(force, -1.05 * task.engage_force)
    else:
        force = min(force, -1.3 * task.min_hold_force)
    w = cfg.waypoint_jitter
    return ExpertParams(
        force_target=float(force),
        approach_offset=jitter(w, 2.5 * w, 2),
        grasp_offset=np.array([jitter(w, 2.0 * w), jitter(w, 2.5 * w)]),
        goal_offset=float(jitter(w, 2.5 * w)),
        insert_depth=0.025 + float(jitter(w, 1.5 * w)),
    )


@dataclass
class ExpertState:
    """Phase machine memory. `scripted_expert` updates it in place."""

    params: ExpertParams
    phase: Phase = Phase.APPROACH
    phase_start: float = 0.0
    last_time: float | None = None
    cmd_position: np.ndarray | None = None
    cmd_yaw: float = 0.0
    width_cmd: float | None = None
    force_cmd: float = 0.0
    target_z: float | None = None
    done_time: float | None = None

    def enter(self, phase: Phase, t: float) -> None:
        self.phase = phase
        self.phase_start = t
        self.target_z = None
        if phase == Phase.DONE:
            self.done_time = t


def _move_towards(current: np.ndarray, target: np.ndarray, max_step: float) -> np.ndarray:
    delta = target - current
    dist = float(np.linalg.norm(delta))
    if dist <= max_step:
        return target.copy()
    return current + delta * (max_step / dist)


def scripted_expert(task: TaskSpec, world: WorldState, phase_state: ExpertState) -> tuple[Pose, float, float]:
    """Privileged expert: returns (pose_cmd, width_cmd, force_target).

    The expert reads the true object pose, width and stiffness, and turns its
    force target into a width through the contact spring law.
    """
    s, p = phase_state, phase_state.params
    t = world.sim_time
    dt = 0.0 if s.last_time is None else t - s.last_time
    s.last_time = t
    obj = world.obj
    arm = world.arm_pose.position
    w_obj = task.object_width
    open_width = min(w_obj + OPEN_MARGIN, world.w_max)

    if s.cmd_position is None:
        s.cmd_position = arm.copy()
        s.cmd_yaw = world.arm_pose.yaw
        s.width_cmd = world.gripper.width

    def goto(target_xz, speed) -> bool:
        target = np.array([target_xz[0], 0.0, target_xz[1]])
        s.cmd_position = _move_towards(s.cmd_position, target, speed * dt)
        return np.allclose(s.cmd_position, target) and np.linalg.norm(arm - target) < ARRIVE_TOL

    def squeeze_width() -> float:
        return max(w_obj - abs(s.force_cmd) / task.stiffness, 0.0)

    x_o, z_o = obj.position[0], obj.position[2]
    off = obj.grasp_offset

    if s.phase == Phase.APPROACH:
        if goto((x_o + p.approach_offset[0], z_o + 0.05 + p.approach_offset[1]), TRAVEL_SPEED):
            s.enter(Phase.DESCEND, t)
        s.width_cmd = min(s.width_cmd + WIDTH_SPEED * dt, open_width)
    elif s.phase == Phase.DESCEND:
        if goto((x_o + p.grasp_offset[0], z_o + p.grasp_offset[1]), TRAVEL_SPEED):
            s.enter(Phase.CLOSE, t)
    elif s.phase == Phase.CLOSE:
        s.width_cmd = max(s.width_cmd - WIDTH_SPEED * dt, w_obj - 2e-4)
        if world.gripper.contact:
            s.enter(Phase.SQUEEZE, t)
    elif s.phase == Phase.SQUEEZE:
        ramp = min((t - s.phase_start) / SQUEEZE_TIME, 1.0)
        s.force_cmd = p.force_target * ramp
        s.width_cmd = squeeze_width()
        if t - s.phase_start >= SQUEEZE_TIME + SETTLE_TIME:
            s.enter(Phase.ROTATE if task.task_id == TaskId.TIGHTEN else Phase.LIFT, t)
    elif s.phase == Phase.LIFT:
        s.width_cmd = squeeze_width()
        if s.target_z is None:
            s.target_z = s.cmd_position[2] + LIFT_HEIGHT
        if goto((s.cmd_position[0], s.target_z), TRAVEL_SPEED):
            s.enter(Phase.TRANSPORT, t)
    elif s.phase == Phase.TRANSPORT:
        s.width_cmd = squeeze_width()
        if goto((task.goal_x + p.goal_offset - off[0], s.cmd_position[2]), TRAVEL_SPEED):
            s.enter(Phase.LOWER, t)
    elif s.phase == Phase.LOWER:
        s.width_cmd = squeeze_width()
        if task.task_id == TaskId.HEAVY_TRANSPORT:
            obj_z = task.goal_z - p.insert_depth + task.object_half_height
        else:
            obj_z = task.goal_z + task.object_half_height + 0.003
        if goto((s.cmd_position[0], obj_z - off[2]), SLOW_SPEED):
            s.enter(Phase.RELEASE, t)
    elif s.phase == Phase.ROTATE:
        s.width_cmd = squeeze_width()
        if obj.tightness >= task.tight_angle + TIGHT_OVERSHOOT:
            s.cmd_yaw = world.arm_pose.yaw
            s.enter(Phase.RELEASE, t)
        else:
            s.cmd_yaw += ROTATE_SPEED * dt
    elif s.phase == Phase.RELEASE:
        s.force_cmd = 0.0
        s.width_cmd = min(s.width_cmd + WIDTH_SPEED * dt, open_width)
        if world.gripper.width >= open_width - 1e-3:
            s.enter(Phase.RETREAT, t)
    elif s.phase == Phase.RETREAT:
        if s.target_z is None:
            s.target_z = s.cmd_position[2] + RETREAT_HEIGHT
        if goto((s.cmd_position[0], s.target_z), TRAVEL_SPEED):
            s.enter(Phase.DONE, t)

    pose = Pose.from_xyz_yaw(*s.cmd_position, yaw=s.cmd_yaw)
    width_cmd = float(np.clip(s.width_cmd, 0.0, world.w_max))
    return pose, width_cmd, float(s.force_cmd)


# ---------------------------------------------------------------------------
# Recording
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Stream:
    name: str
    rate: float
    times: np.ndarray
    data: np.ndarray


@dataclass(eq=False)
class StreamSet:
    streams: dict[str, Stream]
    meta: dict
    final_world: WorldState | None = None


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def _sample_ticks(rate: float, n_ticks: int, jitter_ms: int, rng: np.random.Generator | None) -> np.ndarray:
    """Integer-millisecond sample ticks of one stream clock."""
    period_ms = 1000.0 / rate
    nominal = np.round(np.arange(0.0, n_ticks + 1, period_ms)).astype(np.int64)
    if jitter_ms and rng is not None:
        nominal = nominal + rng.integers(-jitter_ms, jitter_ms + 1, len(nominal))
    ticks = np.clip(nominal, 0, n_ticks)
    return np.unique(ticks)


def record_streams(
    task: TaskSpec,
    seed: int,
    demo_cfg: DemoConfig | None = None,
    tactile_cfg: TactileConfig | None = None,
    jitter: bool = True,
) -> StreamSet:
    """Run the scripted expert on a fresh seeded world and record every
    sensor stream on its own clock."""
    demo_cfg = demo_cfg or DemoConfig()
    tactile_cfg = tactile_cfg or TactileConfig()
    world_seq, expert_seq, sensor_seq, clock_seq = np.random.SeedSequence(seed).spawn(4)
    world = new_world(task, np.random.default_rng(world_seq))
    expert_rng = np.random.default_rng(expert_seq) if jitter else None
    state = ExpertState(expert_params(world.task, expert_rng, demo_cfg))
    noise = TactileNoiseModel.from_config(tactile_cfg, int(sensor_seq.generate_state(1)[0]))
    sensor = TactileSensor(noise, (tactile_cfg.rows, tactile_cfg.cols))
    clock_rng = np.random.default_rng(clock_seq)

    n_max = int(round(world.task.time_limit / SIM_DT))
    jitter_ms = int(round(demo_cfg.timestamp_jitter * 1000)) if jitter else 0
    rates = {
        "rgb": demo_cfg.rgb_rate,
        "pose": demo_cfg.pose_rate,
        "width": demo_cfg.width_rate,
        "tactile": demo_cfg.tactile_rate,
    }
    schedules = {
        name: _sample_ticks(rate, n_max, 0 if name == "tactile" else jitter_ms, clock_rng)
        for name, rate in rates.items()
    }
    cursor = dict.fromkeys(schedules, 0)
    times = {name: [] for name in (*rates, "gel", "force")}
    data = {name: [] for name in times}

    expert_every = int(round(1.0 / (EXPERT_RATE * SIM_DT)))
    end_tick = n_max
    pose_cmd = width_cmd = None
    for tick in range(n_max + 1):
        t = tick * SIM_DT
        for name, ticks in schedules.items():
            while cursor[name] < len(ticks) and ticks[cursor[name]] == tick:
                cursor[name] += 1
                times[name].append(t)
                if name == "rgb":
                    data[name].append(to_uint8(render_rgb(world)))
                elif name == "pose":
                    data[name].append(world.arm_pose.to_vector())
                elif name == "width":
                    data[name].append(world.gripper.width)
                else:
                    F_n, F_t, patch = ground_truth_contact(world)
                    reading = sensor.read(F_n, F_t, patch)
                    data["tactile"].append(reading.raw_grid.astype(np.float32))
                    times["force"].append(t)
                    data["force"].append(reading.scalar_normal)
                    times["gel"].append(t)
                    data["gel"].append(to_uint8(render_gel_image(F_n, patch, world.task.stiffness)))
        if tick >= end_tick:
            break

        if tick % expert_every == 0:
            pose_cmd, width_cmd, _ = scripted_expert(world.task, world, state)
            if end_tick == n_max and (state.phase == Phase.DONE or world.obj.broken or world.obj.disengaged):
                end_tick = min(n_max, tick + int(round(TAIL_TIME / SIM_DT)))
        world = step(world, pose_cmd, width_cmd, SIM_DT)

    stream_rates = {**rates, "gel": demo_cfg.tactile_rate, "force": demo_cfg.force_rate}
    streams = {
        name: Stream(name, stream_rates[name], np.asarray(times[name]), np.asarray(data[name]))
        for name in times
    }
    success, reason = task_outcome(world)
    meta = {
        "task_id": world.task.task_id.value,
        "seed": int(seed),
        "success": bool(success),
        "failure_reason": reason.value,
        "object_width": float(world.task.object_width),
        "stiffness": float(world.task.stiffness),
        "pretension": float(world.task.pretension),
        "expert_force": float(state.params.force_target),
        "duration": float(end_tick * SIM_DT),
    }
    return StreamSet(streams, meta, world)


# ---------------------------------------------------------------------------
# Synchronization
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Observation:
    """One observation step. Fields a variant does not use stay None."""

    rgb: np.ndarray
    pose: np.ndarray
    grip_width: float | None = None
    tactile_image: np.ndarray | None = None
    scalar_normal_force: float | None = None
    raw_tactile_image: np.ndarray | None = None
    binary_gripper: float | None = None
    tactile_raw_grid: np.ndarray | None = None


@dataclass(eq=False)
class Frame:
    t: float
    obs: Observation
    label_action: np.ndarray


@dataclass(eq=False)
class Trajectory:
    """Synchronized 25 Hz demonstration, stored column-wise."""

    task_id: TaskId
    t: np.ndarray
    rgb: np.ndarray
    gel: np.ndarray
    tactile_raw: np.ndarray
    force: np.ndarray
    width: np.ndarray
    pose: np.ndarray
    binary: np.ndarray
    meta: dict = field(default_factory=dict)

    ARRAY_FIELDS = ("t", "rgb", "gel", "tactile_raw", "force", "width", "pose", "binary")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def action(self) -> np.ndarray:
        """Observed-state action labels: pose(9), width, force."""
        return np.concatenate([self.pose, self.width[:, None], self.force[:, None]], axis=1).astype(np.float32)

    def frame(self, k: int) -> Frame:
        obs = Observation(
            rgb=self.rgb[k].astype(np.float32) / 255.0,
            pose=self.pose[k],
            grip_width=float(self.width[k]),
            scalar_normal_force=float(self.force[k]),
            raw_tactile_image=self.gel[k].astype(np.float32) / 255.0,
            binary_gripper=float(self.binary[k]),
            tactile_raw_grid=self.tactile_raw[k],
        )
        return Frame(float(self.t[k]), obs, self.action[k])


def _nearest(times: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.clip(np.searchsorted(times, ref), 1, len(times) - 1) if len(times) > 1 else np.zeros(len(ref), int)
    if len(times) > 1:
        left = times[idx - 1]
        right = times[idx]
        idx = np.where(np.abs(ref - left) <= np.abs(right - ref), idx - 1, idx)
    return idx, np.abs(times[idx] - ref)


def synchronize(streams: StreamSet, demo_cfg: DemoConfig | None = None) -> Trajectory:
    """Attach to each tactile timestamp the nearest sample of every stream.

    Leading and trailing frames whose nearest neighbour in some stream is
    further than max_skew_factor periods away are dropped.
    """
    demo_cfg = demo_cfg or DemoConfig()
    s = streams.streams
    missing = [name for name in REQUIRED_STREAMS if name not in s or len(s[name].times) == 0]
    if missing:
        raise MissingStream(f"missing streams: {', '.join(missing)}")

    ref = s["tactile"].times
    indices, ok = {}, np.ones(len(ref), dtype=bool)
    for name, stream in s.items():
        if stream.times[-1] < ref[0] or stream.times[0] > ref[-1]:
            raise NonOverlappingStreams(f"stream {name!r} does not overlap the tactile clock")
        idx, skew = _nearest(stream.times, ref)
        indices[name] = idx
        ok &= skew <= demo_cfg.max_skew_factor / stream.rate + 1e-12

    valid = np.flatnonzero(ok)
    if len(valid) == 0:
        raise NonOverlappingStreams("no tactile frame has all streams within the skew bound")
    keep = slice(valid[0], valid[-1] + 1)

    def pick(name):
        return s[name].data[indices[name][keep]]

    width = pick("width").astype(np.float32)
    object_width = streams.meta.get("object_width", np.inf)
    gel = pick("gel") if "gel" in s else np.zeros((len(width), 96, 96, 3), np.uint8)
    return Trajectory(
        task_id=TaskId(streams.meta.get("task_id", TaskId.FRAGILE_PICK.value)),
        t=ref[keep].astype(np.float64),
        rgb=pick("rgb"),
        gel=gel,
        tactile_raw=s["tactile"].data[keep].astype(np.float32),
        force=pick("force").astype(np.float32),
        width=width,
        pose=pick("pose").astype(np.float32),
        binary=(width < object_width + BINARY_MARGIN).astype(np.float32),
        meta=dict(streams.meta),
    )


def collect_demo(
    task: TaskSpec,
    seed: int,
    demo_cfg: DemoConfig | None = None,
    tactile_cfg: TactileConfig | None = None,
    jitter: bool = True,
) -> tuple[Trajectory, bool, FailureReason]:
    streams = record_streams(task, seed, demo_cfg, tactile_cfg, jitter)
    traj = synchronize(streams, demo_cfg)
    traj.meta["n_frames"] = len(traj)
    return traj, streams.meta["success"], FailureReason(streams.meta["failure_reason"])
