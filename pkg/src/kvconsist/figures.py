"""Matplotlib renderers for the CLI report paths.

Each renderer writes one figure file next to the delimited/JSON output it
illustrates: training curves for train reports, a confusion-matrix heatmap
for eval reports, and the structure-quality scatter with its fitted
polynomial for ablation sweeps.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import LABEL_ORDER


def save_training_curves(report, path: str | Path) -> None:
    records = report.records
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    stages = []
    for r in records:
        if r.stage not in stages:
            stages.append(r.stage)
    for stage in stages:
        xs = [i + 1 for i, r in enumerate(records) if r.stage == stage]
        ax_loss.plot(xs, [r.train_loss for r in records if r.stage == stage],
                     marker="o", label=stage)
        val = [(x, r.val_accuracy) for x, r in zip(xs, (r for r in records if r.stage == stage))
               if r.val_accuracy is not None]
        if val:
            ax_acc.plot([v[0] for v in val], [v[1] for v in val], marker="o", label=stage)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_loss.legend()
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("validation accuracy")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_confusion_matrix(report, path: str | Path) -> None:
    conf = np.asarray(report.confusion)
    names = [lab.value.lower() for lab in LABEL_ORDER]
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(conf, cmap="Blues")
    ax.set_xticks(range(3), names, rotation=30, ha="right")
    ax.set_yticks(range(3), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    ax.set_title(f"accuracy {report.accuracy:.3f} (n={report.n})")
    for i in range(3):
        for j in range(3):
            color = "white" if conf[i, j] > conf.max() / 2 else "black"
            ax.text(j, i, str(conf[i, j]), ha="center", va="center", color=color)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_curve(points: Sequence[tuple[float, float]], coeffs: Sequence[float],
                     path: str | Path, baseline: float | None = None) -> None:
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    fig, ax = plt.subplots(figsize=(5, 3.8))
    ax.scatter(xs, ys, color="tab:red", zorder=3, label="sweep points")
    grid = np.linspace(xs.min(), xs.max(), 200)
    ax.plot(grid, np.polynomial.polynomial.polyval(grid, np.asarray(coeffs)),
            color="tab:blue", label=f"degree-{len(coeffs) - 1} fit")
    if baseline is not None:
        ax.axhline(baseline, color="tab:red", linestyle="--",
                   label="no-structure baseline")
    ax.set_xlabel("structure-only accuracy")
    ax.set_ylabel("joint accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
