"""SVG figures: learning curves, Q-value error, joint-angle gait curves."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import CURVE_NAMES, ema_smooth  # noqa: E402

# fixed metadata and hash salt keep SVG output stable across runs
matplotlib.rcParams["svg.hashsalt"] = "atd3gait"
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def learning_curves(series: dict, path, ylabel="evaluation reward", smooth=0.8):
    """``series``: label -> list of (steps, values) per trial. Plots mean +/- std of EMA curves."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, trials in series.items():
        trials = [t for t in trials if len(t[0])]
        if not trials:
            continue
        n = min(len(t[0]) for t in trials)
        steps = np.asarray(trials[0][0][:n])
        ys = np.array([ema_smooth(t[1][:n], smooth) for t in trials])
        mean, std = ys.mean(axis=0), ys.std(axis=0)
        ax.plot(steps, mean, label=label)
        ax.fill_between(steps, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("time steps")
    ax.set_ylabel(ylabel)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def q_error_plot(series: dict, path):
    """``series``: label -> list of (steps, normalised errors) per trial."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, trials in series.items():
        trials = [t for t in trials if len(t[0])]
        if not trials:
            continue
        n = min(len(t[0]) for t in trials)
        steps = np.asarray(trials[0][0][:n])
        ys = np.array([t[1][:n] for t in trials]) * 100.0
        mean, std = ys.mean(axis=0), ys.std(axis=0)
        ax.plot(steps, mean, marker="o", label=label)
        ax.fill_between(steps, mean - std, mean + std, alpha=0.2)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("time steps")
    ax.set_ylabel("normalised Q error (%)")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def joint_angle_figure(robot_curves: dict, reference, path):
    """Six panels (right/left hip, knee, ankle) in normalised units.

    ``robot_curves``: label -> (100, 6) normalised curves; ``reference``: (100, 6).
    """
    fig, axes = plt.subplots(2, 3, figsize=(9, 5), sharex=True)
    pct = np.linspace(0.0, 100.0, reference.shape[0])
    for j, ax in enumerate(axes.ravel()):
        ax.plot(pct, reference[:, j], "k--", lw=1.5, label="reference")
        for label, curves in robot_curves.items():
            ax.plot(pct, curves[:, j], lw=1.0, label=label)
        ax.set_title(CURVE_NAMES[j].replace("_", " "), fontsize=9)
        ax.grid(alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("gait cycle (%)")
    axes[0, 0].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
