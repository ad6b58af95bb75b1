"""Report figures written to PNG files (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import BREAKDOWN_COLUMNS, CLASS_NAMES, BreakdownReport, ConfusionMatrix  # noqa: E402

_META = {"Software": "baroslip"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def training_curves(history, path) -> Path:
    """Loss and accuracy per epoch for the train and validation splits."""
    epochs = [h.epoch for h in history]
    fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_l.plot(epochs, [h.train_loss for h in history], label="train")
    ax_l.plot(epochs, [h.val_loss for h in history], label="val")
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("cross-entropy")
    ax_l.legend()
    ax_a.plot(epochs, [h.train_acc for h in history], label="train")
    ax_a.plot(epochs, [h.val_acc for h in history], label="val")
    ax_a.set_xlabel("epoch")
    ax_a.set_ylabel("accuracy")
    ax_a.set_ylim(0, 1)
    ax_a.legend()
    fig.tight_layout()
    return _save(fig, path)


def confusion_matrix(cm: ConfusionMatrix, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(3.6, 3.2))
    ax.imshow(cm.counts, cmap="Blues")
    for i in range(2):
        for j in range(2):
            ax.text(j, i, str(cm.counts[i, j]), ha="center", va="center")
    ax.set_xticks([0, 1], CLASS_NAMES)
    ax.set_yticks([0, 1], CLASS_NAMES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def breakdown_heatmap(report: BreakdownReport, path) -> Path:
    """F1 per motion/speed row and curvature column; absent cells left blank."""
    grid = np.full((len(report.rows), len(BREAKDOWN_COLUMNS)), np.nan)
    for i, (g, r) in enumerate(report.rows):
        for j, col in enumerate(BREAKDOWN_COLUMNS):
            v = report.cells.get((g, r, col))
            if v is not None:
                grid[i, j] = v
    fig, ax = plt.subplots(figsize=(6, 0.45 * len(report.rows) + 1.5))
    im = ax.imshow(np.ma.masked_invalid(grid), cmap="viridis", vmin=0, vmax=1, aspect="auto")
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{100 * grid[i, j]:.1f}", ha="center", va="center", color="w", fontsize=8)
    ax.set_xticks(range(len(BREAKDOWN_COLUMNS)), BREAKDOWN_COLUMNS)
    ax.set_yticks(range(len(report.rows)), [f"{g} {r}" for g, r in report.rows], fontsize=8)
    fig.colorbar(im, ax=ax, label="F1")
    fig.tight_layout()
    return _save(fig, path)
