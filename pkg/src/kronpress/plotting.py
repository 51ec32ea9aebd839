"""Figures for loss histories and benchmark tables (written to files, never shown)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_history(history: Sequence, path, title: str | None = None) -> Path:
    """Loss and best-so-far loss per epoch."""
    epochs = np.array([r.epoch for r in history])
    losses = np.array([r.loss for r in history])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, losses, lw=1, label="epoch loss")
    if losses.size:
        ax.plot(epochs, np.minimum.accumulate(losses), lw=1.5, ls="--", label="best so far")
    ax.set_xlabel("epoch")
    ax.set_ylabel("squared error")
    if losses.size and losses.min() > 0:
        ax.set_yscale("log")
    ax.legend()
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_inference(rows: Sequence, path) -> Path:
    sizes = np.array([r.size for r in rows], dtype=float)
    mean = np.array([r.mean_latency_ns for r in rows])
    std = np.array([r.std for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(np.log2(sizes), mean / 1e3, yerr=std / 1e3, marker="o", capsize=3)
    ax.set_xlabel("log2 rows (= log2 cols)")
    ax.set_ylabel("latency per entry (us)")
    return _save(fig, path)


def plot_epoch_scaling(rows: Sequence, path) -> Path:
    nnz = np.array([r.nnz for r in rows], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for field, label in (("total_s", "total"), ("model_opt_s", "model optimization"),
                         ("order_opt_s", "order optimization")):
        ax.plot(nnz, [getattr(r, field) for r in rows], marker="o", label=label)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("non-zeros")
    ax.set_ylabel("seconds per epoch")
    ax.legend()
    return _save(fig, path)
