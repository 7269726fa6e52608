"""Figures for the report command, rendered to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path as FsPath
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .objectives import OBJECTIVES, LossReport, smoothed  # noqa: E402
from .pipeline import AxisPoint  # noqa: E402

AXIS_TITLES = {
    "objectives": "Training objectives",
    "neg_ratio": "Negatives per positive",
    "masks": "Masks per path",
    "k": "Candidates per source concept",
}


def plot_losses(reports: Sequence[LossReport], path: str | FsPath, window: int = 25) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = [r.step for r in reports]
    for name in (*OBJECTIVES, "total"):
        values = [getattr(r, name) for r in reports]
        if any(v is None for v in values):
            continue
        ax.plot(steps, smoothed(values, window), label=name, lw=2 if name == "total" else 1)
    ax.set_xlabel("step")
    ax.set_ylabel(f"loss (moving average, {window})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_axis(points: Sequence[AxisPoint], path: str | FsPath) -> None:
    axis = points[0].axis
    labels = [p.value for p in points]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(points) + 2), 3.5))
    if axis == "objectives":
        xs = range(len(points))
        width = 0.27
        for i, (name, attr) in enumerate((("P", "precision"), ("R", "recall"), ("F", "f1"))):
            ax.bar([x + (i - 1) * width for x in xs], [getattr(p, attr) for p in points], width, label=name)
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    else:
        for name, attr in (("P", "precision"), ("R", "recall"), ("F", "f1")):
            ax.plot(labels, [getattr(p, attr) for p in points], marker="o", label=name)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel(AXIS_TITLES.get(axis, axis))
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
