"""Artifact writers: CSV tables, policy and automaton text, PNG figures."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .abstraction import Partition  # noqa: E402
from .explorer import IterationReport, SynthesisResult  # noqa: E402

ITERATION_COLUMNS = ["iteration", "m", "p_low", "p_high", "t_unc_total", "wall_seconds"]


def _fmt(v) -> str:
    return repr(float(v))


def write_iterations(path, reports: list[IterationReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ITERATION_COLUMNS)
        for r in reports:
            w.writerow([r.iteration, r.m, _fmt(r.p_low), _fmt(r.p_high), _fmt(r.t_unc_total),
                        f"{r.wall_seconds:.6f}"])


def write_trajectory(path, result: SynthesisResult, n: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"x{i + 1}" for i in range(n)] + ["region", "automaton_state", "action"]
                   + [f"y{i + 1}" for i in range(n)])
        for row in result.trajectory:
            w.writerow([row.step] + [_fmt(v) for v in row.x] + [row.region, row.automaton_state, row.action]
                       + [_fmt(v) for v in row.y])


def write_policy(path, policy: dict[tuple[int, int], int]) -> None:
    lines = ["# region automaton_state -> action (target region)"]
    lines += [f"{q} {s} {a}" for (q, s), a in sorted(policy.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def write_field(path, points: np.ndarray, values: np.ndarray) -> None:
    n = points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(n)] + [f"g{i + 1}" for i in range(n)])
        for p, v in zip(points, values):
            w.writerow([_fmt(a) for a in p] + [_fmt(b) for b in v])


def plot_iterations(path, reports: list[IterationReport]) -> None:
    it = [r.iteration for r in reports]
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.5))
    left.plot(it, [r.t_unc_total for r in reports], marker="o", ms=3)
    left.set_xlabel("iteration")
    left.set_ylabel("total interval width")
    right.plot(it, [r.p_low for r in reports], marker="o", ms=3, label="lower bound")
    right.plot(it, [r.p_high for r in reports], marker="s", ms=3, label="upper bound")
    right.set_ylim(-0.05, 1.05)
    right.set_xlabel("iteration")
    right.set_ylabel("satisfaction probability")
    right.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


_COLORS = {"none": "white", "Goal": "#8fd18f", "Haz": "#e58a8a", "Init": "#9fc5e8"}


def plot_grid(path, partition: Partition, result: SynthesisResult) -> None:
    """Labelled 2-D grid with the explored trajectory and the last sampled cycle."""
    if partition.n != 2:
        return
    fig, ax = plt.subplots(figsize=(5, 5))
    last_cycle = set(result.reports[-1].cycle_regions) if result.reports else set()
    for r in partition.regions:
        color = _COLORS.get(r.label, "#dddddd")
        w, h = r.upper - r.lower
        ax.add_patch(plt.Rectangle(r.lower, w, h, facecolor=color, edgecolor="black", lw=0.8))
        if r.id in last_cycle:
            ax.add_patch(plt.Rectangle(r.lower, w, h, fill=False, hatch="//", edgecolor="#444444", lw=0))
        if r.label != "none":
            ax.text(*r.center, r.label, ha="center", va="center", fontsize=8)
    if result.trajectory:
        xs = np.array([row.x for row in result.trajectory])
        ax.plot(xs[:, 0], xs[:, 1], color="#d4a017", lw=0.6, alpha=0.8)
    ax.set_xlim(partition.lower[0], partition.upper[0])
    ax.set_ylim(partition.lower[1], partition.upper[1])
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
