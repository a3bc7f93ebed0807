"""Domain errors raised across the pipeline.

Command handlers never let these escape: `core.command_registry.dispatch`
turns them into ``{"ok": False, "error": ...}`` results.
"""

from __future__ import annotations


class FarmError(Exception):
    """Base class for every error raised by the pipeline."""


class UsageError(FarmError, ValueError):
    """Bad command-line or config input (exit code 2)."""


# --- world / geometry ---

class DegenerateInput(FarmError, ValueError):
    pass


# --- demo pipeline ---

class MissingStream(FarmError, ValueError):
    pass


class NonOverlappingStreams(FarmError, ValueError):
    pass


# --- dataset store ---

class CorruptFile(FarmError, IOError):
    pass


class VersionMismatch(FarmError, IOError):
    pass


class EmptyDataset(FarmError, ValueError):
    pass


# --- policy engine ---

class VariantFieldMismatch(FarmError, ValueError):
    pass


class ShapeMismatch(FarmError, ValueError):
    pass


class NonFiniteLoss(FarmError, RuntimeError):
    pass


# --- controller / evaluation ---

class DegenerateSamples(FarmError, ValueError):
    pass


class CheckpointVariantMismatch(FarmError, ValueError):
    pass


class EmptyTrajectory(FarmError, ValueError):
    pass
