"""Rollout batches, success statistics and force-domain comparison."""

from __future__ import annotations

import sys
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from core.config import ControllerConfig, EvalConfig, TactileConfig, Variant
from core.controller import WidthMotorMap, run_calibration
from core.errors import EmptyTrajectory, UsageError
from core.executor import (
    DiffusionActionSource,
    ExpertActionSource,
    RandomActionSource,
    run_episode,
)
from core.outcomes import FailureReason
from core.policy import load_checkpoint
from core.world import TaskId, TaskSpec, new_world
from tools.plots import ecdf_overlay, success_bar_chart, write_results_table
from tools.rollout_pool import run_jobs

_log = lambda *a, **kw: print(*a, file=sys.stderr, **kw)

EXPERT = "expert"
RANDOM = "random"
WEIGHT_TOL = 1e-9


@dataclass(eq=False)
class RolloutResult:
    task_id: TaskId
    variant: str
    seed: int
    success: bool
    failure_reason: FailureReason
    force_trace: np.ndarray
    controller_trace: np.ndarray
    n_queries: int = 0
    duration: float = 0.0

    def __post_init__(self):
        self.failure_reason = FailureReason(self.failure_reason)
        if self.success != (self.failure_reason == FailureReason.NONE):
            raise ValueError(f"success={self.success} contradicts failure reason {self.failure_reason.value}")

    def summary(self) -> dict:
        return {
            "task_id": TaskId(self.task_id).value,
            "variant": self.variant,
            "seed": int(self.seed),
            "success": bool(self.success),
            "failure_reason": self.failure_reason.value,
            "n_queries": int(self.n_queries),
            "duration": float(self.duration),
        }

    def same_as(self, other: "RolloutResult") -> bool:
        return (
            self.summary() == other.summary()
            and np.array_equal(self.force_trace, other.force_trace)
            and np.array_equal(self.controller_trace, other.controller_trace)
        )


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

def rollout_seeds(n: int, master_seed: int = 0, offset: int = 1000) -> list[int]:
    return [master_seed * 100_000 + offset + i for i in range(n)]


@lru_cache(maxsize=4)
def _cached_checkpoint(path: str):
    return load_checkpoint(path)


def _make_source(policy: str):
    if policy == EXPERT:
        return ExpertActionSource(), EXPERT
    if policy == RANDOM:
        return RandomActionSource(), RANDOM
    loaded = _cached_checkpoint(policy)
    return DiffusionActionSource(loaded), loaded.policy.variant.value


def rollout_job(job: dict) -> RolloutResult:
    """One episode; module level so worker processes can unpickle it."""
    source, variant = _make_source(job["policy"])
    trace = run_episode(
        source,
        job["task"],
        job["seed"],
        job["controller"],
        job["tactile"],
        WidthMotorMap(*job["width_map"]),
        job["assist"],
    )
    return RolloutResult(
        task_id=job["task"].task_id,
        variant=variant,
        seed=job["seed"],
        success=trace.success,
        failure_reason=trace.failure_reason,
        force_trace=trace.force_trace,
        controller_trace=trace.controller_trace,
        n_queries=trace.queries,
        duration=trace.duration,
    )


def run_rollouts(
    policy: str | Path,
    task: TaskSpec,
    n: int = 20,
    seeds: list[int] | None = None,
    variant: Variant | None = None,
    controller_cfg: ControllerConfig | None = None,
    tactile_cfg: TactileConfig | None = None,
    eval_cfg: EvalConfig | None = None,
    workers: int | None = 1,
) -> list[RolloutResult]:
    """Seeded closed-loop rollouts of a checkpoint, or of the "expert" /
    "random" reference sources. Results come back in seed order."""
    eval_cfg = eval_cfg or EvalConfig()
    seeds = list(seeds) if seeds is not None else rollout_seeds(n, offset=eval_cfg.seed_offset)
    if len(seeds) < 1:
        raise UsageError("need at least one rollout")
    policy = str(policy)
    if policy not in (EXPERT, RANDOM):
        # fail fast in this process on missing files or mismatched checkpoints
        load_checkpoint(policy, task.task_id, variant)

    calib_world = new_world(task)
    width_map = run_calibration(calib_world, rng=np.random.default_rng(seeds[0]))
    assist = bool(eval_cfg.assist_until_grasp) and task.task_id == TaskId.HEAVY_TRANSPORT
    jobs = [
        {
            "policy": policy,
            "task": task,
            "seed": int(seed),
            "controller": controller_cfg or ControllerConfig(),
            "tactile": tactile_cfg or TactileConfig(),
            "width_map": (width_map.a, width_map.b),
            "assist": assist and policy != EXPERT,
        }
        for seed in seeds
    ]
    _log(f"[ROLLOUT] {len(jobs)} rollouts of {Path(policy).name} on {task.task_id.value}"
         f"{' (expert-assisted until grasp)' if jobs[0]['assist'] else ''}")
    outcomes = run_jobs(rollout_job, jobs, workers)
    results = []
    for job, outcome in zip(jobs, outcomes):
        if not outcome["ok"]:
            raise RuntimeError(f"rollout seed {job['seed']} failed: {outcome['error']}")
        results.append(outcome["data"])
    n_ok = sum(r.success for r in results)
    _log(f"[ROLLOUT] {n_ok}/{len(results)} successful")
    return results


def success_rate(results: list[RolloutResult]) -> float:
    return float(np.mean([r.success for r in results])) if results else 0.0


def bootstrap_ci(successes, n_resamples: int = 1000, confidence: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean success."""
    x = np.asarray(successes, dtype=np.float64)
    if len(x) == 0:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    means = x[rng.integers(0, len(x), size=(n_resamples, len(x)))].mean(axis=1)
    alpha = (1.0 - confidence) / 2.0
    return float(np.quantile(means, alpha)), float(np.quantile(means, 1.0 - alpha))


# ---------------------------------------------------------------------------
# Force distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WeightedForceDistribution:
    samples: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if len(self.samples) == 0 or len(self.samples) != len(self.weights):
            raise EmptyTrajectory("distribution needs matching, non-empty samples and weights")
        if np.any(self.weights <= 0) or abs(float(np.sum(self.weights)) - 1.0) > WEIGHT_TOL:
            raise ValueError("weights must be positive and sum to 1")


def _force_samples(item) -> np.ndarray:
    for name in ("force_trace", "force"):
        if hasattr(item, name):
            return np.asarray(getattr(item, name), dtype=np.float64).reshape(-1)
    return np.asarray(item, dtype=np.float64).reshape(-1)


def weighted_distribution(
    trajs,
    contact_threshold: float | None = 0.5,
    skip_empty: bool = False,
) -> WeightedForceDistribution:
    """Equal-mass pooling: sample k of trajectory m gets weight 1/(M*n_m).

    `trajs` holds force arrays, Trajectory objects or RolloutResults. With a
    contact threshold only samples with |F| above it are kept.
    """
    per_traj = []
    for m, item in enumerate(trajs):
        x = _force_samples(item)
        if contact_threshold is not None:
            x = x[np.abs(x) > contact_threshold]
        if len(x) == 0:
            if skip_empty:
                continue
            raise EmptyTrajectory(f"trajectory {m} has no samples in contact")
        per_traj.append(x)
    if not per_traj:
        raise EmptyTrajectory("no trajectory contributes samples")
    M = len(per_traj)
    samples = np.concatenate(per_traj)
    weights = np.concatenate([np.full(len(x), 1.0 / (M * len(x))) for x in per_traj])
    return WeightedForceDistribution(samples, weights)


def _cdf_at(dist: WeightedForceDistribution, points: np.ndarray) -> np.ndarray:
    order = np.argsort(dist.samples, kind="stable")
    xs = dist.samples[order]
    cum = np.cumsum(dist.weights[order])
    idx = np.searchsorted(xs, points, side="right")
    return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)


def wasserstein1(u: WeightedForceDistribution, v: WeightedForceDistribution) -> float:
    """Exact 1-D transport cost: integral of |CDF_u - CDF_v| over the merged
    sorted support."""
    support = np.sort(np.concatenate([u.samples, v.samples]))
    gaps = np.diff(support)
    if len(gaps) == 0:
        return 0.0
    left = support[:-1]
    return float(np.sum(np.abs(_cdf_at(u, left) - _cdf_at(v, left)) * gaps))


def weighted_ecdf(dist: WeightedForceDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Step points (x, F) of the weighted ECDF, starting at F = 0."""
    order = np.argsort(dist.samples, kind="stable")
    xs = dist.samples[order]
    F = np.minimum(np.cumsum(dist.weights[order]), 1.0)
    return np.concatenate([[xs[0]], xs]), np.concatenate([[0.0], F])


# ---------------------------------------------------------------------------
# Aggregation and figures
# ---------------------------------------------------------------------------

def summarize(
    task_id: TaskId,
    variant: str,
    results: list[RolloutResult],
    demo_dist: WeightedForceDistribution | None = None,
    eval_cfg: EvalConfig | None = None,
) -> dict:
    eval_cfg = eval_cfg or EvalConfig()
    successes = [r.success for r in results]
    lo, hi = bootstrap_ci(successes, eval_cfg.bootstrap_resamples, eval_cfg.confidence)
    w1 = None
    if demo_dist is not None:
        try:
            dist = weighted_distribution(results, eval_cfg.contact_threshold, skip_empty=True)
            w1 = round(wasserstein1(dist, demo_dist), 6)
        except EmptyTrajectory:
            _log(f"[EVAL] {TaskId(task_id).value}/{variant}: no rollout made contact, W1 undefined")
    row = {
        "task": TaskId(task_id).value,
        "variant": variant,
        "n": len(results),
        "successes": int(sum(successes)),
        "success_rate": round(success_rate(results), 6),
        "ci_low": round(lo, 6),
        "ci_high": round(hi, 6),
        "w1_to_demos": w1,
    }
    for reason in FailureReason:
        if reason != FailureReason.NONE:
            row[reason.value] = sum(r.failure_reason == reason for r in results)
    return row


def emit_figures(
    result_sets: dict[tuple[str, str], list[RolloutResult]],
    demo_forces: dict[str, list],
    out_dir: str | Path,
    eval_cfg: EvalConfig | None = None,
) -> dict:
    """Results table, success bar chart and one ECDF overlay per task.

    `result_sets` maps (task, variant) to rollouts, `demo_forces` maps a task
    to its demonstrations (anything weighted_distribution accepts).
    """
    eval_cfg = eval_cfg or EvalConfig()
    if not result_sets:
        raise UsageError("no rollout results to evaluate; run rollout first")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    demo_dists = {}
    for task, demos in demo_forces.items():
        try:
            demo_dists[task] = weighted_distribution(demos, eval_cfg.contact_threshold, skip_empty=True)
        except EmptyTrajectory:
            _log(f"[EVAL] {task}: demonstrations carry no contact samples")

    rows = [
        summarize(task, variant, results, demo_dists.get(task), eval_cfg)
        for (task, variant), results in sorted(result_sets.items())
    ]
    table = write_results_table(rows, out_dir / "results.csv")
    bars = success_bar_chart(rows, out_dir / "success_rates.png")

    ecdf_paths, annotations = {}, {}
    for task in sorted({task for task, _ in result_sets}):
        curves, notes = {}, {}
        if task in demo_dists:
            curves["demos"] = weighted_ecdf(demo_dists[task])
        for row in rows:
            if row["task"] != task:
                continue
            try:
                dist = weighted_distribution(result_sets[(task, row["variant"])], eval_cfg.contact_threshold, skip_empty=True)
            except EmptyTrajectory:
                continue
            curves[row["variant"]] = weighted_ecdf(dist)
            if row["w1_to_demos"] is not None:
                notes[row["variant"]] = row["w1_to_demos"]
        if not curves:
            continue
        path = out_dir / f"force_ecdf_{task}.png"
        ecdf_overlay(curves, notes, path, task)
        ecdf_paths[task] = path
        annotations[task] = notes

    _log(f"[EVAL] Wrote {table} ({len(rows)} rows), {len(ecdf_paths)} ECDF figure(s)")
    return {"rows": rows, "table": table, "bars": bars, "ecdf": ecdf_paths, "annotations": annotations}
