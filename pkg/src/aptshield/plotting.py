"""PNG figures for the report command.

Figures are drawn with the Agg backend and saved without the software
metadata chunk, so identical inputs give byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KW = {"format": "png", "dpi": 100, "metadata": {"Software": None}}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def plot_roc(points: Sequence[Sequence[float]], auc: float | None, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    fpr = [p[0] for p in points]
    tpr = [p[1] for p in points]
    label = "detector" if auc is None else f"detector (AUC = {auc:.4f})"
    ax.plot(fpr, tpr, lw=1.5, label=label)
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="grey", label="chance")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right", fontsize=8)
    return _save(fig, path)


def plot_losses(logs: dict[str, Sequence[tuple[int, float]]], path) -> Path:
    """One panel per training log, sharing nothing but the figure."""
    names = [n for n, rows in logs.items() if rows]
    fig, axes = plt.subplots(1, max(len(names), 1), figsize=(4.0 * max(len(names), 1), 3.2), squeeze=False)
    for ax, name in zip(axes[0], names):
        epochs = [r[0] for r in logs[name]]
        losses = [r[1] for r in logs[name]]
        ax.plot(epochs, losses, lw=1.2)
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
    if not names:
        axes[0][0].text(0.5, 0.5, "no training logs", ha="center", va="center")
        axes[0][0].set_axis_off()
    return _save(fig, path)


def plot_reduction(nodes: tuple[int, int], edges: tuple[int, int], path) -> Path:
    """Grouped bars: full attribute graph against the evidence-chain subgraph."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    xs = [0, 1]
    width = 0.35
    ax.bar([x - width / 2 for x in xs], [nodes[0], edges[0]], width, label="attribute graph")
    ax.bar([x + width / 2 for x in xs], [nodes[1], edges[1]], width, label="chain subgraph")
    ax.set_xticks(xs)
    ax.set_xticklabels(["nodes", "directed edges"])
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_confusion(labels: Sequence[str], confusion: Sequence[Sequence[int]], path) -> Path:
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * len(labels), 1.0 + 0.6 * len(labels)))
    ax.imshow(confusion, cmap="Blues")
    ax.set_xticks(range(len(labels)))
    ax.set_yticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_yticklabels(labels, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i, row in enumerate(confusion):
        for j, v in enumerate(row):
            ax.text(j, i, str(v), ha="center", va="center", fontsize=7)
    return _save(fig, path)
