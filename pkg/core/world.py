"""Planar grasping world: kinematic arm, parallel-jaw gripper, one task object.

Every function here is pure: `step` returns a new `WorldState` and never
mutates its input. Compression normal forces are negative throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from core.geometry import Pose, lag_pose

G = 9.81
W_MAX = 0.08
DEFAULT_DT = 1.0 / 50.0
TAU_ARM = 0.05

# Motor: internal PD position loop, ticked at GripperState.motor_rate.
MOTOR_KP = 0.8
MOTOR_KD = 0.05
MOTOR_MAX_STEP = 0.002          # m per motor tick (0.1 m/s at 50 Hz)

GRASP_TOL_X = 0.010             # object centre must sit between the pads
GRASP_TOL_Z = 0.020             # half length of the finger pad
LIFT_EPS = 1e-3
SLIP_SPEED = 0.05               # m/s relative slide of a slipping object
HARD_SUPPORT_STIFFNESS = 2000.0  # N/m, ground and bowl floor
KEY_PULL_OUT = 0.006            # m of vertical travel that pulls the key out
ROTATION_EPS = 1e-6

# Gel geometry shared with the tactile model.
GEL_ROWS = 40
GEL_COLS = 54
GEL_PITCH = 4e-4                # m per cell
PATCH_RADIUS_MIN = 1.5
PATCH_RADIUS_MAX = 12.0

IMAGE_SIZE = 96
VIEW_SPAN = 0.10                # m covered by the in-hand camera


class TaskId(str, Enum):
    HEAVY_TRANSPORT = "heavy_transport"
    FRAGILE_PICK = "fragile_pick"
    TIGHTEN = "tighten"


@dataclass(frozen=True)
class TaskSpec:
    """Task parameters. Ranges are half-widths around the nominal values.

    `randomized` draws the per-episode realization; a realized spec keeps the
    ranges so it can be logged and re-randomized.
    """

    task_id: TaskId
    object_width: float
    object_mass: float
    friction_mu: float
    stiffness: float = 500.0
    object_half_height: float = 0.02
    crush_force: float | None = None
    detach_force: float = 0.0
    engage_force: float | None = None
    tightness_profile: tuple[tuple[float, float], ...] = ()
    tight_torque: float = 0.0
    key_lever: float = 0.05
    overtighten_margin: float = 0.3
    pretension_choices: tuple[float, ...] = (0.0,)
    pretension: float = 0.0
    start_xz: tuple[float, float] = (0.0, 0.08)
    start_range: tuple[float, float] = (0.01, 0.005)
    width_range: float = 0.0015
    stiffness_range: tuple[float, float] = (400.0, 600.0)
    goal_x: float = 0.2
    goal_halfwidth: float = 0.03
    goal_z: float = 0.0
    soil_stiffness: float = 0.0
    min_insert_depth: float = 0.0
    time_limit: float = 14.0

    def __post_init__(self):
        if self.object_width <= 0 or self.object_width >= W_MAX:
            raise ValueError(f"object_width must lie in (0, {W_MAX}) m")
        if self.object_mass <= 0 or self.friction_mu <= 0 or self.stiffness <= 0:
            raise ValueError("mass, friction and stiffness must be positive")
        if self.task_id == TaskId.FRAGILE_PICK:
            if self.crush_force is None:
                raise ValueError("FRAGILE_PICK needs crush_force")
            if self.crush_force <= self.min_hold_force:
                raise ValueError(
                    f"infeasible task: crush_force {self.crush_force:.3f} N <= "
                    f"minimum holding force {self.min_hold_force:.3f} N"
                )
        if self.task_id == TaskId.TIGHTEN:
            if self.engage_force is None or not self.tightness_profile:
                raise ValueError("TIGHTEN needs engage_force and tightness_profile")
            angles = [a for a, _ in self.tightness_profile]
            torques = [t for _, t in self.tightness_profile]
            if np.any(np.diff(angles) <= 0):
                raise ValueError("tightness_profile angles must be increasing")
            if np.any(np.diff(torques) < 0):
                raise ValueError("tightness_profile must be non-decreasing")
            if self.tight_torque > torques[-1]:
                raise ValueError("tight_torque is never reached by the profile")

    @property
    def weight(self) -> float:
        return self.object_mass * G

    @property
    def min_hold_force(self) -> float:
        """Smallest |F_n| that keeps the object from slipping while lifted."""
        return (self.weight + self.detach_force) / self.friction_mu

    def resistance_torque(self, angle: float) -> float:
        angles = [a for a, _ in self.tightness_profile]
        torques = [t for _, t in self.tightness_profile]
        return float(np.interp(angle, angles, torques))

    @property
    def tight_angle(self) -> float:
        """First angle at which the resistance reaches `tight_torque`."""
        prev_a, prev_t = self.tightness_profile[0]
        if prev_t >= self.tight_torque:
            return prev_a
        for a, t in self.tightness_profile[1:]:
            if t >= self.tight_torque:
                return prev_a + (a - prev_a) * (self.tight_torque - prev_t) / (t - prev_t)
            prev_a, prev_t = a, t
        return prev_a

    def randomized(self, rng: np.random.Generator) -> "TaskSpec":
        x0, z0 = self.start_xz
        dx, dz = self.start_range
        lo, hi = self.stiffness_range
        return replace(
            self,
            start_xz=(x0 + rng.uniform(-dx, dx), z0 + rng.uniform(-dz, dz)),
            object_width=self.object_width + rng.uniform(-self.width_range, self.width_range),
            stiffness=rng.uniform(lo, hi) if hi > lo else self.stiffness,
            pretension=float(rng.choice(self.pretension_choices)),
        )


def default_task(task_id: TaskId | str) -> TaskSpec:
    task_id = TaskId(task_id)
    if task_id == TaskId.HEAVY_TRANSPORT:
        return TaskSpec(
            task_id=task_id,
            object_width=0.012,
            object_mass=0.15,
            friction_mu=0.8,
            object_half_height=0.04,
            start_xz=(0.0, 0.10),
            goal_x=0.20,
            goal_halfwidth=0.03,
            goal_z=0.0,
            soil_stiffness=108.0,
            min_insert_depth=0.015,
            time_limit=14.0,
        )
    if task_id == TaskId.FRAGILE_PICK:
        return TaskSpec(
            task_id=task_id,
            object_width=0.02,
            object_mass=0.008,
            friction_mu=0.6,
            object_half_height=0.01,
            crush_force=4.0,
            detach_force=0.6,
            start_xz=(0.0, 0.08),
            width_range=0.002,
            goal_x=0.18,
            goal_halfwidth=0.04,
            goal_z=0.02,
            time_limit=12.0,
        )
    return TaskSpec(
        task_id=task_id,
        object_width=0.01,
        object_mass=0.02,
        friction_mu=0.9,
        object_half_height=0.03,
        engage_force=1.5,
        tightness_profile=((0.0, 0.004), (1.0, 0.012), (1.4, 0.05), (1.7, 0.09), (3.0, 0.3)),
        tight_torque=0.05,
        key_lever=0.05,
        overtighten_margin=0.3,
        pretension_choices=(0.0, 0.5),
        start_xz=(0.0, 0.06),
        start_range=(0.008, 0.003),
        width_range=0.0005,
        time_limit=12.0,
    )


@dataclass(frozen=True)
class GripperState:
    width: float
    width_cmd: float
    motor_rate: float = 50.0
    contact: bool = False
    applied_normal_force: float = 0.0
    motor_prev_error: float = 0.0
    motor_phase: float = 0.0


@dataclass(frozen=True, eq=False)
class ObjectState:
    position: np.ndarray
    rest_z: float
    present: bool = True
    attached: bool = False
    grasp_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    on_stick: bool = False
    lifted: bool = False
    broken: bool = False
    slipped: bool = False
    dropped: bool = False
    placed: bool = False
    released: bool = False
    insert_depth: float = 0.0
    tightness: float = 0.0
    key_angle: float = 0.0
    contact_ref_z: float = 0.0
    disengaged: bool = False
    required_load: np.ndarray = field(default_factory=lambda: np.zeros(2))


@dataclass(frozen=True, eq=False)
class WorldState:
    task: TaskSpec
    arm_pose: Pose
    gripper: GripperState
    obj: ObjectState
    sim_time: float = 0.0
    w_max: float = W_MAX
    tau_arm: float = TAU_ARM

    def snapshot(self) -> dict:
        """Flat numeric view, used for equality checks and logging."""
        out = {
            "sim_time": self.sim_time,
            "arm_pose": self.arm_pose.to_vector(),
            "obj_position": self.obj.position,
            "grasp_offset": self.obj.grasp_offset,
            "required_load": self.obj.required_load,
        }
        for name, value in vars(self.gripper).items():
            out[f"gripper.{name}"] = value
        for name, value in vars(self.obj).items():
            if not isinstance(value, np.ndarray):
                out[f"obj.{name}"] = value
        return out

    @property
    def is_terminal(self) -> bool:
        return self.obj.broken or self.obj.disengaged or self.obj.released


def snapshots_equal(a: dict, b: dict, ignore=("sim_time",)) -> bool:
    if a.keys() != b.keys():
        return False
    for key in a:
        if key in ignore:
            continue
        if not np.array_equal(np.asarray(a[key]), np.asarray(b[key])):
            return False
    return True


def new_world(task: TaskSpec, rng: np.random.Generator | None = None) -> WorldState:
    """Fresh episode. With an rng the task is randomized first."""
    if rng is not None:
        task = task.randomized(rng)
    x0, z0 = task.start_xz
    obj = ObjectState(
        position=np.array([x0, 0.0, z0]),
        rest_z=z0,
        on_stick=task.task_id == TaskId.FRAGILE_PICK,
        tightness=task.pretension,
    )
    open_width = min(task.object_width + 0.03, W_MAX)
    arm = Pose.from_xyz_yaw(x0, 0.0, z0 + 0.08)
    return WorldState(task=task, arm_pose=arm, gripper=GripperState(open_width, open_width), obj=obj)


def remove_object(world: WorldState) -> WorldState:
    return replace(world, obj=replace(world.obj, present=False, attached=False))


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def step(world: WorldState, pose_cmd: Pose, width_cmd: float, dt: float) -> WorldState:
    if not np.isfinite(dt) or dt <= 0:
        raise ValueError(f"dt must be positive and finite, got {dt}")
    if not pose_cmd.is_finite() or not np.isfinite(width_cmd):
        raise ValueError("non-finite command")
    if width_cmd < 0 or width_cmd > world.w_max:
        raise ValueError(f"width_cmd {width_cmd} outside [0, {world.w_max}]")

    alpha = 1.0 - np.exp(-dt / world.tau_arm)
    arm = lag_pose(world.arm_pose, pose_cmd, alpha)
    gripper = _advance_motor(world.gripper, float(width_cmd), dt, world.w_max)
    obj, contact, F_n = _advance_object(world, arm, gripper, dt)
    gripper = replace(gripper, contact=contact, applied_normal_force=F_n)
    return replace(world, arm_pose=arm, gripper=gripper, obj=obj, sim_time=world.sim_time + dt)


def _advance_motor(g: GripperState, width_cmd: float, dt: float, w_max: float) -> GripperState:
    period = 1.0 / g.motor_rate
    phase = g.motor_phase + dt
    width, prev_error = g.width, g.motor_prev_error
    while phase >= period - 1e-12:
        error = width_cmd - width
        delta = MOTOR_KP * error + MOTOR_KD * (error - prev_error)
        delta = float(np.clip(delta, -MOTOR_MAX_STEP, MOTOR_MAX_STEP))
        width = float(np.clip(width + delta, 0.0, w_max))
        prev_error = error
        phase -= period
    return replace(g, width=width, width_cmd=width_cmd, motor_prev_error=prev_error, motor_phase=max(phase, 0.0))


def _aligned(obj: ObjectState, grip: np.ndarray) -> bool:
    d = obj.position - grip
    return abs(d[0]) <= GRASP_TOL_X and abs(d[2]) <= GRASP_TOL_Z


def _advance_object(world: WorldState, arm: Pose, gripper: GripperState, dt: float):
    task, obj = world.task, world.obj
    if not obj.present or obj.released:
        return replace(obj, required_load=np.zeros(2)), False, 0.0

    grip = arm.position
    if obj.attached:
        # an attached object rides with the fingers, alignment is by offset
        in_contact = gripper.width <= task.object_width and abs(obj.grasp_offset[2]) <= GRASP_TOL_Z
    else:
        in_contact = _aligned(obj, grip) and gripper.width <= task.object_width
    penetration = max(task.object_width - gripper.width, 0.0) if in_contact else 0.0
    F_n = -task.stiffness * penetration
    capacity = task.friction_mu * abs(F_n)

    if task.task_id == TaskId.TIGHTEN:
        obj = _advance_key(task, obj, world.arm_pose, arm, in_contact, F_n, capacity)
    else:
        obj = _advance_carried(task, obj, grip, in_contact, F_n, capacity, dt)
        if task.task_id == TaskId.FRAGILE_PICK and abs(F_n) > task.crush_force:
            obj = replace(obj, broken=True)

    if obj.released:
        in_contact, F_n = False, 0.0
    return obj, bool(in_contact), float(F_n)


def _support_force(task: TaskSpec, pos: np.ndarray) -> tuple[float, float]:
    """Upward support force on a held object and its depth in the goal region."""
    bottom = pos[2] - task.object_half_height
    in_goal = abs(pos[0] - task.goal_x) <= task.goal_halfwidth
    if in_goal and task.task_id == TaskId.HEAVY_TRANSPORT:
        depth = max(task.goal_z - bottom, 0.0)
        return task.soil_stiffness * depth, depth
    floor = task.goal_z if in_goal else 0.0
    return HARD_SUPPORT_STIFFNESS * max(floor - bottom, 0.0), 0.0


def _advance_carried(task, obj, grip, in_contact, F_n, capacity, dt) -> ObjectState:
    if not obj.attached:
        if in_contact and F_n < 0:
            return replace(obj, attached=True, grasp_offset=obj.position - grip, required_load=np.zeros(2))
        return replace(obj, required_load=np.zeros(2))

    if not in_contact:
        return _release(task, obj)

    target = grip + obj.grasp_offset
    lifted = obj.lifted or target[2] > obj.rest_z + LIFT_EPS
    if not lifted:
        # still resting on its holder or stick; the support carries the weight
        target[2] = max(target[2], obj.rest_z)
        return replace(obj, position=target, required_load=np.zeros(2))

    load = task.weight
    if obj.on_stick:
        load += task.detach_force
    support, depth = _support_force(task, target)
    load -= support

    offset = obj.grasp_offset.copy()
    slipped = obj.slipped
    on_stick = obj.on_stick
    if abs(load) <= capacity:
        position = target
        on_stick = False
    else:
        slipped = True
        offset[2] -= np.sign(load) * SLIP_SPEED * dt
        position = grip + offset
        if on_stick:
            # the pads slide over the object, which stays on its stick
            position = obj.position.copy()
            offset = obj.position - grip
    obj = replace(
        obj,
        position=position,
        grasp_offset=offset,
        lifted=True,
        slipped=slipped,
        on_stick=on_stick,
        insert_depth=depth,
        required_load=np.array([0.0, load]),
    )
    if abs(offset[2]) > GRASP_TOL_Z:
        return _release(task, obj)
    return obj


def _release(task: TaskSpec, obj: ObjectState) -> ObjectState:
    if not obj.lifted or obj.on_stick:
        return replace(obj, attached=False, required_load=np.zeros(2))
    pos = obj.position.copy()
    in_goal = abs(pos[0] - task.goal_x) <= task.goal_halfwidth
    if task.task_id == TaskId.HEAVY_TRANSPORT:
        placed = in_goal and obj.insert_depth >= task.min_insert_depth
        if not placed:
            floor = task.goal_z if in_goal else 0.0
            pos[2] = floor + task.object_half_height
    else:
        placed = in_goal
        floor = task.goal_z if in_goal else 0.0
        pos[2] = floor + task.object_half_height
    return replace(
        obj,
        position=pos,
        attached=False,
        released=True,
        placed=placed,
        dropped=not placed,
        required_load=np.zeros(2),
    )


def _advance_key(task, obj, prev_arm: Pose, arm: Pose, in_contact, F_n, capacity) -> ObjectState:
    rotated = obj.tightness > task.pretension + 0.05
    if not in_contact:
        if rotated and obj.attached:
            return replace(obj, attached=False, released=True, required_load=np.zeros(2))
        return replace(obj, attached=False, required_load=np.zeros(2))

    if not obj.attached:
        obj = replace(obj, attached=True, contact_ref_z=float(arm.position[2]))

    if arm.position[2] - obj.contact_ref_z > KEY_PULL_OUT:
        return replace(obj, disengaged=True, required_load=np.zeros(2))

    d_yaw = float(np.angle(np.exp(1j * (arm.yaw - prev_arm.yaw))))
    tightness, key_angle, slipped = obj.tightness, obj.key_angle, obj.slipped
    shear = task.resistance_torque(tightness) / task.key_lever
    if d_yaw > ROTATION_EPS:
        if abs(F_n) < task.engage_force:
            return replace(obj, disengaged=True, required_load=np.zeros(2))
        if shear <= capacity:
            tightness += d_yaw
            key_angle += d_yaw
            shear = task.resistance_torque(tightness) / task.key_lever
        else:
            slipped = True
    elif tightness <= task.pretension:
        shear = 0.0

    disengaged = tightness > task.tight_angle + task.overtighten_margin
    return replace(
        obj,
        tightness=tightness,
        key_angle=key_angle,
        slipped=slipped,
        disengaged=disengaged,
        required_load=np.array([shear, 0.0]),
    )


# ---------------------------------------------------------------------------
# Contact readout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContactPatch:
    """Centre (row, col) and radius in gel cells; radius 0 means no contact."""

    row: float = 0.0
    col: float = 0.0
    radius: float = 0.0

    @property
    def empty(self) -> bool:
        return self.radius <= 0.0


def friction_cone_clip(required: np.ndarray, F_n: float, mu: float) -> tuple[np.ndarray, bool]:
    """Clip a required tangential load to |F_t| <= mu*|F_n|. Returns (F_t, slipping)."""
    required = np.asarray(required, dtype=np.float64)
    limit = mu * abs(F_n)
    norm = float(np.linalg.norm(required))
    if norm <= limit:
        return required.copy(), False
    if norm == 0.0:
        return np.zeros(2), False
    return required * (limit / norm), True


def ground_truth_contact(world: WorldState) -> tuple[float, np.ndarray, ContactPatch]:
    g, obj, task = world.gripper, world.obj, world.task
    F_n = g.applied_normal_force
    if not g.contact or F_n >= 0.0:
        return 0.0, np.zeros(2), ContactPatch()

    F_t, _ = friction_cone_clip(obj.required_load, F_n, task.friction_mu)

    penetration = abs(F_n) / task.stiffness
    radius = np.sqrt(0.5 * task.object_width * penetration) / GEL_PITCH
    radius = float(np.clip(radius, PATCH_RADIUS_MIN, PATCH_RADIUS_MAX))
    d = obj.position - world.arm_pose.position
    row = float(np.clip((GEL_ROWS - 1) / 2.0 - d[2] / GEL_PITCH, 0, GEL_ROWS - 1))
    col = float(np.clip((GEL_COLS - 1) / 2.0 + d[1] / GEL_PITCH, 0, GEL_COLS - 1))
    return float(F_n), F_t, ContactPatch(row, col, radius)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_BACKGROUND_TOP = np.array([0.82, 0.86, 0.90])
_BACKGROUND_BOTTOM = np.array([0.62, 0.66, 0.72])
_GROUND = np.array([0.45, 0.38, 0.30])
_GOAL = np.array([0.55, 0.30, 0.18])
_SOIL = np.array([0.30, 0.22, 0.15])
_HOLDER = np.array([0.55, 0.55, 0.58])
_FINGER = np.array([0.15, 0.15, 0.17])
_STEM = np.array([0.20, 0.55, 0.22])
_LEAF = np.array([0.30, 0.70, 0.30])
_GRAPE = np.array([0.45, 0.20, 0.55])
_CRUSHED = np.array([0.55, 0.08, 0.10])
_STICK = np.array([0.85, 0.75, 0.55])
_KEY = np.array([0.75, 0.65, 0.20])
_SCREW = np.array([0.40, 0.40, 0.42])

FINGER_THICKNESS = 0.008
FINGER_LENGTH = 0.04


def _pixel_grid(world: WorldState) -> tuple[np.ndarray, np.ndarray]:
    cx = world.arm_pose.position[0]
    cz = world.arm_pose.position[2] - 0.02
    s = VIEW_SPAN / IMAGE_SIZE
    idx = np.arange(IMAGE_SIZE) + 0.5
    xs = cx - VIEW_SPAN / 2 + idx * s
    zs = cz + VIEW_SPAN / 2 - idx * s
    X, Z = np.meshgrid(xs, zs)
    return X, Z


def render_rgb(world: WorldState) -> np.ndarray:
    """96x96x3 float image in [0, 1] seen from the gripper camera."""
    X, Z = _pixel_grid(world)
    task, obj = world.task, world.obj

    t = np.linspace(0.0, 1.0, IMAGE_SIZE)[:, None, None]
    img = (1 - t) * _BACKGROUND_TOP + t * _BACKGROUND_BOTTOM
    img = np.broadcast_to(img, (IMAGE_SIZE, IMAGE_SIZE, 3)).copy()

    img[Z < 0.0] = _GROUND
    in_goal = np.abs(X - task.goal_x) <= task.goal_halfwidth
    if task.task_id == TaskId.HEAVY_TRANSPORT:
        img[in_goal & (Z < task.goal_z)] = _SOIL
        rim = in_goal & (np.abs(np.abs(X - task.goal_x) - task.goal_halfwidth) < 0.003) & (Z < 0.02)
        img[rim] = _GOAL
    elif task.task_id == TaskId.FRAGILE_PICK:
        img[in_goal & (Z < task.goal_z) & (Z > task.goal_z - 0.015)] = _GOAL

    x0, z0 = task.start_xz
    base = z0 - task.object_half_height
    if task.task_id == TaskId.HEAVY_TRANSPORT:
        img[(np.abs(X - x0) < 0.02) & (Z < base) & (Z >= 0.0)] = _HOLDER
    elif task.task_id == TaskId.TIGHTEN:
        img[(np.abs(X - x0) < 0.015) & (Z < base) & (Z >= 0.0)] = _SCREW

    if obj.present:
        _draw_object(img, X, Z, task, obj)

    gx, gz = world.arm_pose.position[0], world.arm_pose.position[2]
    half = world.gripper.width / 2.0
    vertical = (Z > gz - FINGER_LENGTH / 2) & (Z < gz + FINGER_LENGTH / 2 + 0.03)
    left = (X > gx - half - FINGER_THICKNESS) & (X <= gx - half)
    right = (X >= gx + half) & (X < gx + half + FINGER_THICKNESS)
    img[vertical & (left | right)] = _FINGER
    return np.clip(img, 0.0, 1.0)


def _draw_object(img, X, Z, task: TaskSpec, obj: ObjectState) -> None:
    px, pz = obj.position[0], obj.position[2]
    r = task.object_width / 2.0
    h = task.object_half_height
    if task.task_id == TaskId.HEAVY_TRANSPORT:
        img[(np.abs(X - px) <= r) & (np.abs(Z - pz) <= h)] = _STEM
        leaves = ((X - px) / (3 * r)) ** 2 + ((Z - (pz + h)) / (0.5 * h)) ** 2 <= 1.0
        img[leaves] = _LEAF
    elif task.task_id == TaskId.FRAGILE_PICK:
        if obj.on_stick:
            img[(np.abs(X - px) <= 0.0012) & (Z < pz) & (Z >= 0.0)] = _STICK
        if obj.broken:
            blob = ((X - px) / (1.5 * r)) ** 2 + ((Z - pz + 0.4 * r) / (0.6 * r)) ** 2 <= 1.0
            img[blob] = _CRUSHED
            spots = blob & (np.sin(X * 900.0) * np.sin(Z * 700.0) > 0.5)
            img[spots] = 0.5 * _CRUSHED
        else:
            img[(X - px) ** 2 + (Z - pz) ** 2 <= r * r] = _GRAPE
    else:
        shade = 0.75 + 0.25 * np.cos(obj.key_angle)
        key = (np.abs(X - px) <= r) & (np.abs(Z - pz) <= h)
        img[key] = _KEY * shade
        stripe = key & (np.abs(X - px - 0.6 * r * np.sin(obj.key_angle)) < 0.3 * r)
        img[stripe] = _KEY * 0.4
