import json
import os
import sys
from datetime import datetime
from pathlib import Path

from core.evaluation import RolloutResult
from core.outcomes import FailureReason
from core.world import TaskId
from tools.array_file import read_array, write_array

_log = lambda *a, **kw: print(*a, file=sys.stderr, **kw)

LEDGER_FILE = "experiments.json"


def _generate_result_key(task, variant):
    """One ledger entry per task and policy variant"""
    return f"{TaskId(task).value}:{variant}"


class ExperimentState:
    """Rollout result sets of one output directory, persisted as a JSON ledger.

    Per-rollout force and controller traces live next to the ledger as array
    files; the ledger keeps their paths and checksums.
    """

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.path = self.out_dir / LEDGER_FILE
        self.entries = {}
        self.load_log()

    def keys(self):
        return sorted(self.entries)

    def record_rollouts(self, task, variant, results, rollout_dir, checkpoint=None, config=None, version=None, seed=0):
        """Write traces for `results` and replace the ledger entry for (task, variant)."""
        rollout_dir = Path(rollout_dir)
        rollout_dir.mkdir(parents=True, exist_ok=True)
        rollouts = []
        for r in results:
            force_path = rollout_dir / f"force_{r.seed:06d}.bin"
            trace_path = rollout_dir / f"controller_trace_{r.seed:06d}.bin"
            entry = r.summary()
            entry["force_trace"] = {"path": os.path.relpath(force_path, self.out_dir), "sha256": write_array(force_path, r.force_trace)}
            entry["controller_trace"] = {"path": os.path.relpath(trace_path, self.out_dir), "sha256": write_array(trace_path, r.controller_trace)}
            rollouts.append(entry)

        key = _generate_result_key(task, variant)
        self.entries[key] = {
            "task": TaskId(task).value,
            "variant": variant,
            "checkpoint": str(checkpoint) if checkpoint else None,
            "n": len(rollouts),
            "successes": sum(1 for e in rollouts if e["success"]),
            "rollouts": rollouts,
            "config": config or {},
            "version": version,
            "seed": int(seed),
            "last_updated": datetime.now().isoformat(),
        }
        self.save_log()
        return key

    def load_results(self, task, variant):
        key = _generate_result_key(task, variant)
        if key not in self.entries:
            return None
        results = []
        for e in self.entries[key]["rollouts"]:
            results.append(RolloutResult(
                task_id=TaskId(e["task_id"]),
                variant=e["variant"],
                seed=e["seed"],
                success=e["success"],
                failure_reason=FailureReason(e["failure_reason"]),
                force_trace=read_array(self.out_dir / e["force_trace"]["path"], e["force_trace"]["sha256"]),
                controller_trace=read_array(self.out_dir / e["controller_trace"]["path"], e["controller_trace"]["sha256"]),
                n_queries=e.get("n_queries", 0),
                duration=e.get("duration", 0.0),
            ))
        return results

    def all_results(self, task=None, variants=None):
        """{(task, variant): [RolloutResult]} for the requested subset."""
        out = {}
        for key in self.keys():
            entry = self.entries[key]
            if task is not None and entry["task"] != TaskId(task).value:
                continue
            if variants is not None and entry["variant"] not in variants:
                continue
            out[(entry["task"], entry["variant"])] = self.load_results(entry["task"], entry["variant"])
        return out

    def save_log(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as f:
            json.dump(self.entries, f, indent=2, default=str)
        _log(f"[LOG] Saved {len(self.entries)} result set(s) to {self.path}")

    def load_log(self):
        if not os.path.exists(self.path):
            return False
        try:
            with open(self.path, "r", encoding="utf-8") as f:
                self.entries = json.load(f)
        except (json.JSONDecodeError, OSError) as e:
            _log(f"[LOG] Ignoring unreadable ledger {self.path}: {e}")
            self.entries = {}
            return False
        _log(f"[LOG] Loaded {len(self.entries)} result set(s) from {self.path}")
        return True
