"""The three figure builders. Each saves a png and returns its plotted data."""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

SEGMENTS = (("agt_mean", "ground", "#8c8c8c"),
            ("awt_mean", "waiting", "#d62728"),
            ("aat_mean", "air", "#1f77b4"))

_SAVE_OPTS = dict(format="png", dpi=120, metadata={"Software": None})


def decomposition_figure(rows: Sequence[dict], out_path) -> Dict[str, float]:
    """Stacked bar of ground/waiting/air segments per policy.

    Returns each bar's total height, which equals the policy's mean total
    time minus any fixed transfer allowance.
    """
    for row in rows:
        for key, _, _ in SEGMENTS:
            if key not in row:
                raise ValueError(f"summary row for {row.get('policy')} is "
                                 f"missing column {key}")
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(rows), 4.2))
    xs = np.arange(len(rows))
    heights: Dict[str, float] = {}
    bottom = np.zeros(len(rows))
    for key, label, color in SEGMENTS:
        vals = np.array([float(row[key]) for row in rows])
        ax.bar(xs, vals, bottom=bottom, label=label, color=color, width=0.6)
        bottom += vals
    for x, row, total in zip(xs, rows, bottom):
        heights[str(row["policy"])] = float(total)
        ax.text(x, total, f"{total:.1f}", ha="center", va="bottom", fontsize=9)
    ax.set_xticks(xs)
    ax.set_xticklabels([str(row["policy"]) for row in rows])
    ax.set_ylabel("minutes per passenger")
    ax.set_title("travel time decomposition")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_OPTS)
    plt.close(fig)
    return heights


def cdf_figure(curves: Dict[str, Tuple[np.ndarray, np.ndarray]], out_path) -> None:
    """Overlaid cumulative distributions of per-passenger total times."""
    fig, ax = plt.subplots(figsize=(5.6, 4.2))
    for name in sorted(curves):
        totals, fractions = curves[name]
        ax.step(totals, fractions, where="post", label=name)
    ax.set_xlabel("total travel time (min)")
    ax.set_ylabel("fraction of passengers")
    ax.set_ylim(0.0, 1.02)
    ax.set_title("travel time distribution")
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_OPTS)
    plt.close(fig)


def queues_figure(traces: Dict[str, List[dict]], out_path) -> Dict[str, np.ndarray]:
    """Queue length per departure vertiport over steps, one panel per policy.

    Returns each policy's (n_steps, n_ports) queue matrix.
    """
    names = sorted(traces)
    fig, axes = plt.subplots(1, len(names), figsize=(4.2 * len(names), 3.6),
                             sharex=False, squeeze=False)
    series: Dict[str, np.ndarray] = {}
    for ax, name in zip(axes[0], names):
        snaps = [rec for rec in traces[name] if rec.get("kind") == "step"]
        if not snaps:
            raise ValueError(f"trace for {name} has no step records")
        arr = np.array([rec["queues"] for rec in snaps], dtype=float)
        series[name] = arr
        for port in range(arr.shape[1]):
            ax.plot(np.arange(arr.shape[0]), arr[:, port], label=f"port {port}")
        ax.set_title(name)
        ax.set_xlabel("step")
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("waiting passengers")
    axes[0][-1].legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_OPTS)
    plt.close(fig)
    return series
