"""Figures for refinement runs (written to files; no display needed)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .loss import TERMS  # noqa: E402


def moving_average(x, window=100):
    x = np.asarray(x, dtype=np.float64)
    if len(x) < window:
        return x.copy()
    return np.convolve(x, np.ones(window) / window, mode="valid")


def loss_figure(runlog_or_metrics, path, window=100):
    """Loss terms per iteration (log scale) and mesh size, as a two-panel PNG."""
    if hasattr(runlog_or_metrics, "column"):
        col = runlog_or_metrics.column
    else:
        col = runlog_or_metrics.__getitem__
    it = np.asarray(col("iteration"))
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    total = np.asarray(col("total"), dtype=float)
    ax0.plot(it, total, color="0.6", lw=0.8, label="total")
    ma = moving_average(total, window)
    if len(ma) < len(total):
        ax0.plot(it[window - 1:], ma, color="k", lw=1.5, label=f"total ({window}-iter mean)")
    for name in TERMS:
        ax0.plot(it, col(name), lw=0.8, label=name)
    ax0.set_yscale("log")
    ax0.set_ylabel("loss")
    ax0.legend(fontsize=8)
    ax1.plot(it, col("n_vertices"), color="tab:purple")
    ax1.set_ylabel("vertices")
    ax1.set_xlabel("iteration")
    fig.tight_layout()
    tmp = f"{path}.tmp.png"
    fig.savefig(tmp, dpi=100, metadata={"Software": None})
    plt.close(fig)
    os.replace(tmp, path)
    return path
