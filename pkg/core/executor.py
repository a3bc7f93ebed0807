"""Closed-loop episodes: receding-horizon action execution through the
dual-mode grip controller and the calibrated motor map."""

from __future__ import annotations

import math
import sys
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import torch

from core.config import ControllerConfig, TactileConfig, Variant
from core.controller import (
    ControlRecord,
    ControllerState,
    SimulatedMotor,
    WidthMotorMap,
    controller_step,
    run_calibration,
    trace_array,
)
from core.dataset import ACTION_KEYS
from core.demos import ExpertState, Observation, Phase, expert_params, scripted_expert, to_uint8
from core.geometry import Pose, lag_pose
from core.outcomes import FailureReason, task_outcome
from core.policy import LoadedPolicy, observation_tensors
from core.tactile import TactileNoiseModel, TactileSensor, render_gel_image
from core.world import TaskSpec, WorldState, ground_truth_contact, new_world, render_rgb, step

_log = lambda *a, **kw: print(*a, file=sys.stderr, **kw)

TAIL_TIME = 0.5             # s simulated after a terminal event
RANDOM_POSE_SPAN = 0.03     # m
RANDOM_FORCE_RANGE = (-5.0, 0.0)
GRASPED_PHASES = (Phase.LIFT, Phase.TRANSPORT, Phase.LOWER, Phase.ROTATE, Phase.RELEASE, Phase.RETREAT, Phase.DONE)


@dataclass(frozen=True, eq=False)
class PolicyAction:
    """One denormalized action. Width-and-force sources leave `binary` None,
    the vision-only policy leaves `width` and `force` None."""

    pose: np.ndarray
    width: float | None = None
    force: float | None = None
    binary: float | None = None


# ---------------------------------------------------------------------------
# Action sources
# ---------------------------------------------------------------------------

class ActionSource:
    """Anything the executor can query for an action chunk."""

    pred_horizon: int = 1
    exec_horizon: int = 1
    variant: Variant = Variant.FARM
    obs_horizon: int = 1

    def reset(self, world: WorldState, seed: int) -> None:
        pass

    def plan(self, history: list[Observation], world: WorldState, query: int) -> list[PolicyAction]:
        raise NotImplementedError


class DiffusionActionSource(ActionSource):
    def __init__(self, loaded: LoadedPolicy):
        self.loaded = loaded
        cfg = loaded.policy.cfg
        self.pred_horizon = cfg.pred_horizon
        self.exec_horizon = cfg.exec_horizon
        self.obs_horizon = cfg.obs_horizon
        self.variant = Variant(cfg.variant)
        self.seed = 0

    def reset(self, world: WorldState, seed: int) -> None:
        self.seed = int(seed)

    def plan(self, history, world, query):
        policy, stats = self.loaded.policy, self.loaded.stats
        with torch.no_grad():
            cond = policy.encode_observation(observation_tensors(history, self.variant, stats))
            sample = policy.ddim_sample(cond, seed=self.seed * 1_000 + query)[0].numpy()
        parts = stats.split_denormalize(ACTION_KEYS[self.variant], sample.astype(np.float64))
        actions = []
        for i in range(len(sample)):
            raw = Pose.from_vector(parts["pose"][i])
            pose = Pose.from_matrix(raw.position, raw.matrix).to_vector()
            if self.variant == Variant.VISION_ONLY:
                actions.append(PolicyAction(pose, binary=float(parts["binary"][i, 0])))
            else:
                force = float(parts["force"][i, 0]) if "force" in parts else 0.0
                actions.append(PolicyAction(pose, width=float(parts["width"][i, 0]), force=force))
        return actions


class ExpertActionSource(ActionSource):
    """The privileged scripted expert, replanning every control tick."""

    def __init__(self, task: TaskSpec | None = None):
        self.task = task
        self.state: ExpertState | None = None

    def reset(self, world, seed):
        self.state = ExpertState(expert_params(world.task, None))

    @property
    def grasped(self) -> bool:
        return self.state is not None and self.state.phase in GRASPED_PHASES

    def plan(self, history, world, query):
        pose, width, force = scripted_expert(world.task, world, self.state)
        return [PolicyAction(pose.to_vector(), width=width, force=force)]


class RandomActionSource(ActionSource):
    """Uniform random chunks around the current pose: the lower bound."""

    def __init__(self, pred_horizon: int = 32, exec_horizon: int = 16):
        self.pred_horizon = pred_horizon
        self.exec_horizon = exec_horizon
        self.rng = np.random.default_rng(0)

    def reset(self, world, seed):
        self.rng = np.random.default_rng(seed)

    def plan(self, history, world, query):
        here = world.arm_pose.position
        actions = []
        for _ in range(self.pred_horizon):
            offset = self.rng.uniform(-RANDOM_POSE_SPAN, RANDOM_POSE_SPAN, 3)
            offset[1] = 0.0
            yaw = world.arm_pose.yaw + self.rng.uniform(-0.3, 0.3)
            pose = Pose.from_xyz_yaw(*(here + offset), yaw=yaw).to_vector()
            actions.append(PolicyAction(
                pose,
                width=float(self.rng.uniform(0.0, world.w_max)),
                force=float(self.rng.uniform(*RANDOM_FORCE_RANGE)),
            ))
        return actions


# ---------------------------------------------------------------------------
# Episode
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class EpisodeTrace:
    times: list[float] = field(default_factory=list)
    forces: list[float] = field(default_factory=list)
    widths: list[float] = field(default_factory=list)
    records: list[ControlRecord] = field(default_factory=list)
    queue_lengths: list[int] = field(default_factory=list)
    queries: int = 0
    final_world: WorldState | None = None
    success: bool = False
    failure_reason: FailureReason = FailureReason.TIMEOUT

    @property
    def force_trace(self) -> np.ndarray:
        return np.asarray(self.forces, dtype=np.float32)

    @property
    def controller_trace(self) -> np.ndarray:
        return trace_array(self.times, self.records)

    @property
    def duration(self) -> float:
        return self.times[-1] if self.times else 0.0


def make_observation(world: WorldState, reading, F_n: float, patch, variant: Variant, binary_state: float) -> Observation:
    """Runtime observation with exactly the fields `variant` consumes."""
    variant = Variant(variant)
    obs = Observation(
        rgb=to_uint8(render_rgb(world)).astype(np.float32) / 255.0,
        pose=world.arm_pose.to_vector(),
    )
    if variant != Variant.VISION_ONLY:
        obs.grip_width = float(world.gripper.width)
    if variant in (Variant.FARM, Variant.FORCE_AWARE):
        obs.scalar_normal_force = float(reading.scalar_normal)
    if variant == Variant.FARM:
        obs.tactile_raw_grid = reading.raw_grid
    if variant == Variant.TACTILE_AWARE:
        gel = render_gel_image(F_n, patch, world.task.stiffness)
        obs.raw_tactile_image = to_uint8(gel).astype(np.float32) / 255.0
    if variant == Variant.VISION_ONLY:
        obs.binary_gripper = float(binary_state)
    return obs


def resolve_targets(action: PolicyAction, w_max: float) -> tuple[float, float, float]:
    """(target width, target force, binary state) for the controller.

    A binary action only ever asks for the fully open or fully closed width
    and never enters force mode.
    """
    if action.width is None:
        closed = 1.0 if (action.binary or 0.0) >= 0.5 else 0.0
        return (0.0 if closed else w_max), 0.0, closed
    width = float(np.clip(action.width, 0.0, w_max))
    force = 0.0 if action.force is None else float(action.force)
    return width, force, 0.0


def run_episode(
    source: ActionSource,
    task: TaskSpec,
    seed: int,
    controller_cfg: ControllerConfig | None = None,
    tactile_cfg: TactileConfig | None = None,
    width_map: WidthMotorMap | None = None,
    assist_until_grasp: bool = False,
) -> EpisodeTrace:
    """One seeded closed-loop episode.

    The source is re-queried whenever at most pred_horizon - exec_horizon
    actions remain queued. Each action covers one control tick; the arm
    target is interpolated across the motor substeps of that tick.
    """
    controller_cfg = controller_cfg or ControllerConfig()
    tactile_cfg = tactile_cfg or TactileConfig()
    world_seq, sensor_seq, calib_seq = np.random.SeedSequence(seed).spawn(3)
    world = new_world(task, np.random.default_rng(world_seq))
    noise = TactileNoiseModel.from_config(tactile_cfg, int(sensor_seq.generate_state(1)[0]))
    sensor = TactileSensor(noise, (tactile_cfg.rows, tactile_cfg.cols))
    motor = SimulatedMotor(w_max=world.w_max)
    if width_map is None:
        width_map = run_calibration(world, motor, rng=np.random.default_rng(calib_seq))

    dt = 1.0 / controller_cfg.force_loop_rate
    n_sub = max(1, int(round(controller_cfg.motor_rate / controller_cfg.force_loop_rate)))
    sub_dt = dt / n_sub
    max_ticks = int(math.ceil(world.task.time_limit / dt - 1e-9))
    tail_ticks = int(round(TAIL_TIME / dt))

    source.reset(world, seed)
    expert = None
    if assist_until_grasp:
        expert = ExpertActionSource(world.task)
        expert.reset(world, seed)

    trace = EpisodeTrace()
    history: deque[Observation] = deque(maxlen=max(source.obs_horizon, 1))
    queue: deque[PolicyAction] = deque()
    cstate = ControllerState(last_width_cmd=world.gripper.width)
    binary_state = 0.0
    prev_target = world.arm_pose
    end_tick = None

    for tick in range(max_ticks):
        t_now = float(world.sim_time)
        F_n, F_t, patch = ground_truth_contact(world)
        reading = sensor.read(F_n, F_t, patch)
        obs = make_observation(world, reading, F_n, patch, source.variant, binary_state)
        history.append(obs)
        while len(history) < history.maxlen:
            history.appendleft(obs)

        if expert is not None and expert.grasped:
            _log(f"[ROLLOUT] seed {seed}: grasp detected at t={world.sim_time:.2f}s, handing over")
            expert = None
            queue.clear()
        active = expert or source
        if len(queue) <= active.pred_horizon - active.exec_horizon:
            queue = deque(active.plan(list(history), world, trace.queries))
            if active is source:
                trace.queries += 1
                trace.queue_lengths.append(len(queue))
        action = queue.popleft()

        target_width, target_force, binary_state = resolve_targets(action, world.w_max)
        width_cmd, cstate, record = controller_step(
            cstate, target_width, target_force, reading.scalar_normal, world.gripper.width, dt, controller_cfg
        )
        motor_width = motor.width_for_units(width_map.to_units(width_cmd))
        target = Pose.from_vector(action.pose)
        for j in range(n_sub):
            world = step(world, lag_pose(prev_target, target, (j + 1) / n_sub), motor_width, sub_dt)
        prev_target = target

        trace.times.append(t_now)
        trace.forces.append(float(reading.scalar_normal))
        trace.widths.append(float(world.gripper.width))
        trace.records.append(record)

        if end_tick is None and world.is_terminal:
            end_tick = tick + tail_ticks
        if end_tick is not None and tick >= end_tick:
            break

    trace.final_world = world
    trace.success, trace.failure_reason = task_outcome(world)
    return trace
