"""Figures written next to the text reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .complexity import COMPONENTS, FlopReport  # noqa: E402


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_complexity(reports: dict[str, FlopReport], path: str | Path) -> Path:
    """Per-component parameters and GFLOPS/s, one bar group per decoder variant."""
    fig, (ax_p, ax_f) = plt.subplots(1, 2, figsize=(10, 4))
    names = [c for c in COMPONENTS if any(r.params[c] or r.costs[c].flops for r in reports.values())]
    x = np.arange(len(names))
    width = 0.8 / max(len(reports), 1)
    for k, (label, rep) in enumerate(reports.items()):
        off = (k - (len(reports) - 1) / 2) * width
        ax_p.bar(x + off, [rep.params[c] / 1e6 for c in names], width, label=label)
        ax_f.bar(x + off, [rep.costs[c].flops / 1e9 for c in names], width, label=label)
    for ax, title in ((ax_p, "parameters (M)"), (ax_f, "GFLOPS per second of audio")):
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=40, ha="right")
        ax.set_title(title)
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    ax_f.legend(frameon=False)
    return _finish(fig, path)


def plot_first_frame(reports: dict[str, FlopReport], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3.5))
    labels = list(reports)
    vals = [reports[k].first_frame.flops / 1e9 for k in labels]
    ax.bar(labels, vals, color=["tab:blue", "tab:orange"][: len(labels)])
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom")
    ax.set_ylabel("GFLOPs before first frame")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return _finish(fig, path)


def plot_loss_curve(curve: Sequence, path: str | Path) -> Path:
    steps = [r.step for r in curve]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("total", "aco_coarse", "aco_refined", "dur"):
        ax.plot(steps, [getattr(r, key) for r in curve], label=key, lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("MAE")
    ax.legend(frameon=False)
    return _finish(fig, path)


def plot_features(frames: np.ndarray, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 3))
    im = ax.imshow(frames.T, aspect="auto", origin="lower", interpolation="nearest")
    ax.set_xlabel("frame")
    ax.set_ylabel("feature")
    fig.colorbar(im, ax=ax)
    return _finish(fig, path)
