"""Report figures written to image files (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import linear_to_srgb8  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def _display(image: np.ndarray, exposure: float = 1.0) -> np.ndarray:
    return linear_to_srgb8(image, exposure)


def plot_loss_curve(history: Sequence[Mapping], path, title: str = "") -> Path:
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for key, style in (("total", "-"), ("data", "--"), ("sparsity", ":"), ("smoothness", "-.")):
        vals = np.array([h[key] for h in history])
        if np.any(vals > 0):
            ax.plot(epochs, vals, style, label=key)
    if history and "step_mean" in history[0]:
        ax.plot(epochs, [h["step_mean"] for h in history], ".", ms=3, color="0.5", label="batch mean")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_srms(srms: Sequence[np.ndarray], path, truth: Sequence[np.ndarray] | None = None,
              mask: np.ndarray | None = None, exposure: float = 1.0) -> Path:
    """Recovered bases in the top row; ground truth and the observed mask below when given."""
    rows = 1 + (truth is not None)
    cols = max(len(srms), len(truth) if truth is not None else 0) + (mask is not None)
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 1.9 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for i, s in enumerate(srms):
        axes[0, i].imshow(_display(s, exposure))
        axes[0, i].set_title(f"SRM {i}", fontsize=9)
    if truth is not None:
        for i, s in enumerate(truth):
            axes[1, i].imshow(_display(s, exposure))
            axes[1, i].set_title(f"ground truth {i}", fontsize=9)
    if mask is not None:
        ax = axes[0, -1]
        ax.imshow(mask, cmap="gray", vmin=0, vmax=1)
        ax.axis("on")
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_title(f"observed texels ({mask.mean():.0%})", fontsize=9)
    return _save(fig, path)


def plot_components(images: Mapping[str, np.ndarray], path, exposure: float = 1.0) -> Path:
    names = list(images)
    fig, axes = plt.subplots(1, len(names), figsize=(2.6 * len(names), 2.2), squeeze=False)
    for ax, name in zip(axes[0], names):
        img = images[name]
        if name == "R":
            ax.imshow(np.clip(0.5 * (img + 1.0), 0, 1))
        elif img.ndim == 2:
            ax.imshow(img, cmap="gray", vmin=0, vmax=1)
        else:
            ax.imshow(_display(img, exposure))
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    return _save(fig, path)


def plot_error_vs_angle(angles: Sequence[float], errors: Sequence[float], path, ylabel: str = "L1") -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.scatter(angles, errors, s=14)
    ax.set_xlabel("angle to nearest training view [deg]")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_albedo_scatter(estimate: np.ndarray, truth: np.ndarray, path) -> Path:
    fig, ax = plt.subplots(figsize=(3.8, 3.8))
    for c, color in enumerate("rgb"):
        ax.scatter(truth[:, c], estimate[:, c], s=2, color=color, alpha=0.4)
    hi = float(max(truth.max(), estimate.max(), 1e-6))
    ax.plot([0, hi], [0, hi], "k--", lw=0.8)
    ax.set_xlabel("ground truth")
    ax.set_ylabel("estimate")
    return _save(fig, path)


def plot_observation_counts(counts: np.ndarray, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.hist(counts, bins=np.arange(0, max(int(counts.max()), 1) + 2) - 0.5)
    ax.set_xlabel("observations per vertex")
    ax.set_ylabel("vertices")
    return _save(fig, path)
