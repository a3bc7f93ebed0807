"""Figure and table writers for evaluation results."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RESULT_COLUMNS = (
    "task",
    "variant",
    "n",
    "successes",
    "success_rate",
    "ci_low",
    "ci_high",
    "w1_to_demos",
    "slip",
    "crush",
    "premature_release",
    "disengage",
    "timeout",
)


def write_results_table(rows: list[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in RESULT_COLUMNS})
    return path


def read_results_table(path: Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def success_bar_chart(rows: list[dict], path: Path) -> list[float]:
    """Grouped bars, one group per task, one bar per variant. Returns the
    plotted heights in row order."""
    tasks = list(dict.fromkeys(r["task"] for r in rows))
    variants = list(dict.fromkeys(r["variant"] for r in rows))
    width = 0.8 / max(len(variants), 1)

    fig, ax = plt.subplots(figsize=(2.2 + 1.6 * len(tasks), 3.6), constrained_layout=True)
    heights = []
    for j, variant in enumerate(variants):
        xs, ys, err = [], [], []
        for i, task in enumerate(tasks):
            row = next((r for r in rows if r["task"] == task and r["variant"] == variant), None)
            if row is None:
                continue
            rate = 100.0 * float(row["success_rate"])
            xs.append(i + (j - (len(variants) - 1) / 2) * width)
            ys.append(rate)
            lo, hi = row.get("ci_low"), row.get("ci_high")
            if lo is None or hi is None:
                err.append((0.0, 0.0))
            else:
                err.append((rate - 100.0 * float(lo), 100.0 * float(hi) - rate))
        ax.bar(xs, ys, width, label=variant, yerr=np.asarray(err).T if err else None, capsize=2)
    for row in rows:
        heights.append(100.0 * float(row["success_rate"]))
    ax.set_xticks(range(len(tasks)), tasks)
    ax.set_ylabel("Success rate [%]")
    ax.set_ylim(0.0, 105.0)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return heights


def ecdf_overlay(curves: dict[str, tuple[np.ndarray, np.ndarray]], annotations: dict[str, float], path: Path, title: str) -> None:
    """Step plot of weighted ECDFs; `annotations` maps a curve label to its
    W1 distance from the demonstrations."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6), constrained_layout=True)
    for label, (x, F) in curves.items():
        text = f"{label} (W1 = {annotations[label]:.4f} N)" if label in annotations else label
        ax.step(x, F, where="post", label=text)
    ax.set_xlabel("Grip force F_z [N]")
    ax.set_ylabel("Cumulative weight")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def loss_curve(losses, running, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.2), constrained_layout=True)
    ax.plot(losses, lw=0.5, alpha=0.4, label="loss")
    ax.plot(running, lw=1.2, label="running mean")
    ax.set_yscale("log")
    ax.set_xlabel("Iteration")
    ax.set_ylabel("Noise-prediction MSE")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.savefig(path, dpi=150)
    plt.close(fig)
