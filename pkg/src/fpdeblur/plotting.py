"""Matplotlib figure helpers for reports (ROC curves, quality histograms, loss curves)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "figure.dpi": 100,
    "savefig.dpi": 120,
}

# deterministic PNG bytes: no software/date chunks
_PNG_META = {"Software": None}


def figure(width: float = 4.5, height: float = 3.4):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def roc_logfar(curves: dict, path, title: str = "ROC (log FAR)"):
    """TAR against log-scaled FAR, one line per named (far, tar) curve.

    FAR = 0 points cannot sit on a log axis; they are drawn at the smallest
    positive FAR seen in any curve, halved.
    """
    positives = [f[f > 0].min() for f, _ in curves.values() if np.any(f > 0)]
    floor = 0.5 * min(positives) if positives else 1e-4
    with plt.rc_context(STYLE):
        fig, ax = figure()
        for name, (far, tar) in curves.items():
            # sweep order (descending threshold) already traces the staircase
            far = np.maximum(np.asarray(far, dtype=float)[::-1], floor)
            ax.plot(far, np.asarray(tar, dtype=float)[::-1], label=name)
        ax.set_xscale("log")
        ax.set_xlim(floor, 1.0)
        ax.set_ylim(0.0, 1.02)
        ax.set_xlabel("FAR")
        ax.set_ylabel("TAR")
        ax.set_title(title)
        ax.legend(loc="lower right")
    return save(fig, path)


def quality_histogram(groups: dict, path, title: str = "Quality scores"):
    with plt.rc_context(STYLE):
        fig, ax = figure()
        bins = np.linspace(1, 100, 34)
        for name, values in groups.items():
            ax.hist(values, bins=bins, histtype="step", label=name)
        ax.set_xlabel("score (1-100)")
        ax.set_ylabel("count")
        ax.set_title(title)
        ax.legend()
    return save(fig, path)


def loss_curves(steps, series: dict, path, title: str = "Training losses"):
    with plt.rc_context(STYLE):
        fig, ax = figure()
        for name, values in series.items():
            ax.plot(steps, values, label=name)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_title(title)
        ax.legend()
    return save(fig, path)
