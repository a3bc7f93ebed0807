"""Per-task success predicates on the final world state."""

from __future__ import annotations

from enum import Enum

from core.world import TaskId, WorldState


class FailureReason(str, Enum):
    NONE = "none"
    SLIP = "slip"
    CRUSH = "crush"
    PREMATURE_RELEASE = "premature_release"
    DISENGAGE = "disengage"
    TIMEOUT = "timeout"


def task_outcome(world: WorldState) -> tuple[bool, FailureReason]:
    obj, task = world.obj, world.task

    if task.task_id == TaskId.FRAGILE_PICK:
        if obj.broken:
            return False, FailureReason.CRUSH
        if obj.released:
            return (True, FailureReason.NONE) if obj.placed else (False, FailureReason.PREMATURE_RELEASE)
        return False, FailureReason.SLIP if obj.slipped else FailureReason.TIMEOUT

    if task.task_id == TaskId.HEAVY_TRANSPORT:
        if obj.slipped:
            return False, FailureReason.SLIP
        if obj.released:
            return (True, FailureReason.NONE) if obj.placed else (False, FailureReason.PREMATURE_RELEASE)
        return False, FailureReason.TIMEOUT

    if obj.disengaged:
        return False, FailureReason.DISENGAGE
    if obj.released:
        if obj.tightness >= task.tight_angle:
            return True, FailureReason.NONE
        return False, FailureReason.PREMATURE_RELEASE
    return False, FailureReason.TIMEOUT
