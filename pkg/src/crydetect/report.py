"""Figures written next to the CSV/JSON outputs of ``evaluate`` and ``predict``."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_metrics(results: dict, path, title: str = "") -> None:
    """Grouped precision / recall / F1 bars per participant.

    ``results`` maps a run label to an ``EvalResult``; several runs share one axis
    so matched and mismatched runs can be compared side by side.
    """
    names = ("precision", "recall", "f1")
    fig, axes = plt.subplots(1, len(results), figsize=(4.5 * len(results) + 1, 3.6), squeeze=False)
    for ax, (label, res) in zip(axes[0], results.items()):
        pids = list(res.rows)
        x = np.arange(len(pids))
        for k, name in enumerate(names):
            vals = [getattr(res.rows[p], name) for p in pids]
            ax.bar(x + (k - 1) * 0.27, vals, 0.27, label=name)
        ax.set_xticks(x, pids)
        ax.set_ylim(0, 1.05)
        f1 = res.summary()["f1"]
        ax.set_title(f"{label}: F1 {f1['mean']:.3f} ± {f1['std']:.3f}", fontsize=10)
    axes[0][0].set_ylabel("score")
    axes[0][-1].legend(loc="lower right", fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_timeline(analysis: dict, path, truth=None, title: str = "") -> None:
    """Step plot of the per-second products of ``Detector.analyse``."""
    tracks = [("active", analysis["active"]), ("windows", analysis["binned"]), ("crying", analysis["crying"])]
    if truth is not None:
        tracks.append(("truth", np.asarray(truth)[: len(analysis["crying"])]))
    n = len(analysis["crying"])
    fig, ax = plt.subplots(figsize=(10, 0.6 * len(tracks) + 1.2))
    for row, (name, bits) in enumerate(reversed(tracks)):
        bits = np.asarray(bits, dtype=bool)
        starts = np.flatnonzero(np.diff(np.concatenate([[0], bits.astype(int)])) == 1)
        stops = np.flatnonzero(np.diff(np.concatenate([bits.astype(int), [0]])) == -1) + 1
        ax.broken_barh([(a, b - a) for a, b in zip(starts, stops)], (row + 0.1, 0.8), color=f"C{row}")
    ax.set_yticks(np.arange(len(tracks)) + 0.5, [name for name, _ in reversed(tracks)])
    ax.set_xlim(0, max(n, 1))
    ax.set_xlabel("time (s)")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
