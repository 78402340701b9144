"""Report figures written next to the CSV/text outputs.

Figures are built on bare :class:`matplotlib.figure.Figure` objects so no
pyplot state or interactive backend is involved.
"""

from __future__ import annotations

import io

import matplotlib as mpl
import numpy as np
from matplotlib.figure import Figure

from .formats import atomic_write

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig: Figure, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", bbox_inches="tight")
    atomic_write(path, buf.getvalue())


def loss_curve(report, path) -> None:
    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(5, 3.2))
        ax = fig.add_subplot()
        ep = [e.epoch for e in report.epochs]
        ax.semilogy(ep, [e.train_loss for e in report.epochs], label="train (total)")
        ax.semilogy(ep, [e.val_recon for e in report.epochs], "--", label="val reconstruction")
        ax.semilogy(ep, [e.val_pred for e in report.epochs], "--", label="val prediction")
        ax.set_xlabel("epoch")
        ax.set_ylabel("MSE")
        ax.legend(frameon=False)
        _save(fig, path)


def horizon_mse(metrics, path) -> None:
    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(5, 3.2))
        ax = fig.add_subplot()
        h = np.arange(1, len(metrics.horizon_mse) + 1)
        w = 0.27
        ax.bar(h - w, metrics.horizon_mse, w, label="model")
        ax.bar(h, metrics.copy_mse, w, label="copy last frame")
        ax.bar(h + w, metrics.linear_mse, w, label="linear extrapolation")
        ax.set_xticks(h, [f"t+{k}" for k in h])
        ax.set_ylabel("per-pixel MSE")
        ax.legend(frameon=False)
        _save(fig, path)


def prediction_grid(inputs: np.ndarray, predicted: np.ndarray, truth: np.ndarray, path) -> None:
    """Inputs on top, then predicted and ground-truth futures, one column per time step."""
    cols = max(len(inputs), len(predicted))
    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(1.2 * cols, 3.8))
        axes = fig.subplots(3, cols, squeeze=False)
        t_in = len(inputs)
        rows = [
            ("input", inputs, [f"t-{t_in - 1 - k}" if k < t_in - 1 else "t" for k in range(t_in)]),
            ("predicted", predicted, [f"t+{k + 1}" for k in range(len(predicted))]),
            ("ground truth", truth, [f"t+{k + 1}" for k in range(len(truth))]),
        ]
        for r, (label, frames, titles) in enumerate(rows):
            for c in range(cols):
                ax = axes[r, c]
                ax.set_xticks([])
                ax.set_yticks([])
                if c < len(frames):
                    ax.imshow(frames[c], cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
                    ax.set_title(titles[c])
                else:
                    ax.axis("off")
            axes[r, 0].set_ylabel(label)
        _save(fig, path)
