"""Pipeline commands: collect, train, rollout, eval, plot.

Each command is defined once via @command; `main.py` builds the command
line from the registry and prints the returned dict.
"""

from __future__ import annotations

import csv
import json
import shutil
import sys
from pathlib import Path

from core.command_registry import command
from core.config import RunConfig, Variant, config_dict, version_string, write_run_config
from core.dataset import (
    compute_normalization,
    fields_for_variant,
    list_trajectories,
    load_dataset,
    load_stats,
    save_stats,
    save_trajectory,
)
from core.demos import collect_demo
from core.errors import EmptyDataset, UsageError
from core.evaluation import EXPERT, RANDOM, emit_figures, rollout_seeds, run_rollouts, summarize
from core.policy import running_mean, save_checkpoint, train_policy
from core.state import ExperimentState
from core.world import TaskId
from tools.plots import loss_curve, read_results_table, success_bar_chart

_log = lambda *a, **kw: print(*a, file=sys.stderr, **kw)

STATS_FIELDS = ("force", "width", "pose", "binary", "tactile_raw")


def demo_seed(master_seed: int, index: int) -> int:
    return master_seed * 100_000 + index


def _check_out_dir(cfg: RunConfig) -> Path:
    if not str(cfg.out_dir).strip():
        raise UsageError("no output directory given (--out or RUN_OUT_DIR)")
    out = cfg.out
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path {out} exists and is not a directory")
    return out


def _train_dir(cfg: RunConfig) -> Path:
    return cfg.out / "train" / f"{cfg.task.value}_{cfg.policy.variant.value}"


# ---------------------------------------------------------------------------
# collect
# ---------------------------------------------------------------------------

@command(name="collect", help="Record scripted-expert demonstrations into the dataset store.")
def cmd_collect(cfg: RunConfig, args) -> dict:
    _check_out_dir(cfg)
    task = cfg.task_spec
    root = cfg.dataset_dir()
    for stale in list_trajectories(root):
        shutil.rmtree(stale)
    root.mkdir(parents=True, exist_ok=True)

    version = version_string()
    meta_config = config_dict(cfg)
    outcomes, failures, index, saved = [], 0, 0, 0
    target = cfg.demo.n_demos
    while saved < target:
        seed = demo_seed(cfg.seed, index)
        index += 1
        traj, success, reason = collect_demo(task, seed, cfg.demo, cfg.tactile)
        line = {"seed": seed, "success": success, "failure_reason": reason.value, "frames": len(traj), "saved": None}
        outcomes.append(line)
        if not success:
            failures += 1
            _log(f"[COLLECT] seed {seed}: expert failed ({reason.value}), {failures} failure(s)")
            if failures > cfg.demo.max_failures:
                raise RuntimeError(
                    f"{failures} failed expert demos exceed the tolerance of {cfg.demo.max_failures}"
                )
            continue
        line["saved"] = str(save_trajectory(traj, root, f"demo_{saved:03d}", meta_config, version))
        saved += 1
        _log(f"[COLLECT] demo {saved}/{target}  seed {seed}  {len(traj)} frames  "
             f"expert force {traj.meta['expert_force']:.2f} N")

    dataset = load_dataset(root, STATS_FIELDS)
    stats_path = save_stats(compute_normalization(dataset), root)
    write_run_config(cfg, root)
    return {
        "ok": True,
        "dataset": str(root),
        "n_demos": saved,
        "failures": failures,
        "stats": str(stats_path),
        "demos": outcomes,
    }


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

@command(name="train", help="Train one policy variant on the task's dataset.")
def cmd_train(cfg: RunConfig, args) -> dict:
    _check_out_dir(cfg)
    root = cfg.dataset_dir()
    if not list_trajectories(root):
        raise EmptyDataset(f"no demonstrations under {root}; run collect first")
    stats = load_stats(root)
    dataset = load_dataset(root, fields_for_variant(cfg.policy.variant))

    policy, result = train_policy(dataset, stats, cfg.policy, cfg.seed)
    checkpoint = save_checkpoint(
        cfg.checkpoint_path(),
        policy,
        stats,
        cfg.task,
        cfg.seed,
        config=config_dict(cfg),
        version=version_string(),
        train=result,
    )

    train_dir = _train_dir(cfg)
    train_dir.mkdir(parents=True, exist_ok=True)
    running = running_mean(result.losses, cfg.policy.log_every)
    loss_csv = train_dir / "loss.csv"
    with loss_csv.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss", "running_mean"])
        for i, (loss, mean) in enumerate(zip(result.losses, running), start=1):
            writer.writerow([i, f"{loss:.8f}", f"{mean:.8f}"])
    if result.losses:
        loss_curve(result.losses, running, train_dir / "loss.png")
    write_run_config(cfg, train_dir)
    return {
        "ok": True,
        "checkpoint": str(checkpoint),
        "iterations": result.iterations,
        "final_loss": round(result.final_loss, 6),
        "loss_csv": str(loss_csv),
    }


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------

@command(
    name="rollout",
    help="Run seeded closed-loop rollouts of a trained policy (or the expert / random baselines).",
    arguments=(
        (("--policy",), {"default": None, "help": "checkpoint path, 'expert' or 'random' (default: trained checkpoint)"}),
    ),
)
def cmd_rollout(cfg: RunConfig, args) -> dict:
    _check_out_dir(cfg)
    reference = getattr(args, "policy", None)
    if reference in (EXPERT, RANDOM):
        label, policy, variant = reference, reference, None
    else:
        policy = Path(reference) if reference else cfg.checkpoint_path()
        label, variant = cfg.policy.variant.value, cfg.policy.variant

    seeds = rollout_seeds(cfg.eval.n_rollouts, cfg.seed, cfg.eval.seed_offset)
    results = run_rollouts(
        policy,
        cfg.task_spec,
        seeds=seeds,
        variant=variant,
        controller_cfg=cfg.controller,
        tactile_cfg=cfg.tactile,
        eval_cfg=cfg.eval,
        workers=cfg.workers or None,
    )
    rollout_dir = cfg.rollout_dir(cfg.task, label)
    ExperimentState(cfg.out).record_rollouts(
        cfg.task,
        label,
        results,
        rollout_dir,
        checkpoint=None if variant is None else policy,
        config=config_dict(cfg),
        version=version_string(),
        seed=cfg.seed,
    )
    write_run_config(cfg, rollout_dir)
    row = summarize(cfg.task, label, results, eval_cfg=cfg.eval)
    return {"ok": True, "rollouts": str(rollout_dir), "summary": row}


# ---------------------------------------------------------------------------
# eval / plot
# ---------------------------------------------------------------------------

def _demo_forces(cfg: RunConfig, tasks) -> dict:
    forces = {}
    for task in tasks:
        root = cfg.dataset_dir(TaskId(task))
        if not list_trajectories(root):
            _log(f"[EVAL] no demonstrations for {task}; W1 column left empty")
            continue
        forces[task] = load_dataset(root, ("force",))
    return forces


@command(
    name="eval",
    help="Aggregate recorded rollouts into the results table and figures.",
    arguments=(
        (("--compare",), {"default": None, "help": "comma-separated variants to include, e.g. farm,vision_only"}),
        (("--all-tasks",), {"action": "store_true", "help": "include every task in the ledger, not only --task"}),
    ),
)
def cmd_eval(cfg: RunConfig, args) -> dict:
    _check_out_dir(cfg)
    state = ExperimentState(cfg.out)
    compare = getattr(args, "compare", None)
    variants = None
    if compare:
        variants = [v.strip() for v in compare.split(",") if v.strip()]
        known = {v.value for v in Variant} | {EXPERT, RANDOM}
        unknown = [v for v in variants if v not in known]
        if unknown:
            raise UsageError(f"unknown variant(s): {', '.join(unknown)}")
    task = None if getattr(args, "all_tasks", False) else cfg.task
    result_sets = state.all_results(task, variants)
    if variants:
        missing = [v for v in variants if not any(key[1] == v for key in result_sets)]
        if missing:
            raise UsageError(f"no rollouts recorded for: {', '.join(missing)}; run rollout first")
    if not result_sets:
        raise UsageError(f"no rollouts recorded under {cfg.out}; run rollout first")

    demo_forces = _demo_forces(cfg, sorted({t for t, _ in result_sets}))
    out = emit_figures(result_sets, demo_forces, cfg.eval_dir, cfg.eval)
    summary = {
        "rows": out["rows"],
        "config": config_dict(cfg),
        "version": version_string(),
        "seed": cfg.seed,
    }
    (cfg.eval_dir / "results.json").write_text(json.dumps(summary, indent=2, default=str), encoding="utf-8")
    write_run_config(cfg, cfg.eval_dir)
    return {"ok": True, "table": str(out["table"]), "rows": out["rows"], "figures": [str(p) for p in out["ecdf"].values()]}


@command(name="plot", help="Redraw figures from saved results tables and loss curves.")
def cmd_plot(cfg: RunConfig, args) -> dict:
    _check_out_dir(cfg)
    written = []
    table = cfg.eval_dir / "results.csv"
    if table.is_file():
        rows = read_results_table(table)
        if rows:
            success_bar_chart(rows, cfg.eval_dir / "success_rates.png")
            written.append(str(cfg.eval_dir / "success_rates.png"))
    for loss_csv in sorted((cfg.out / "train").glob("*/loss.csv")):
        with loss_csv.open(newline="", encoding="utf-8") as f:
            records = list(csv.DictReader(f))
        if not records:
            continue
        losses = [float(r["loss"]) for r in records]
        running = [float(r["running_mean"]) for r in records]
        loss_curve(losses, running, loss_csv.with_suffix(".png"))
        written.append(str(loss_csv.with_suffix(".png")))
    if not written:
        raise UsageError(f"nothing to plot under {cfg.out}; run train or eval first")
    return {"ok": True, "figures": written}
