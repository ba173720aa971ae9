"""Figure rendering for profiles and accuracy reports.

Everything draws through the Agg backend straight to files; no display is
required or touched.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .qa_eval import AXIS_ORDER, EvalReport

__all__ = ["plot_profile", "plot_accuracy"]


def plot_profile(
    scores,
    scores_smooth=None,
    peaks=(),
    indices=(),
    out_path="profile.png",
    title="instability profile",
) -> Path:
    """Render raw/smoothed scores with peak and sampled-frame markers.

    Scores sit on the transition axis; sampled frame indices are drawn as
    vertical lines on the same axis (frame i follows transition i-1).
    """
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(8, 3.2), dpi=120)
    t = range(len(scores))
    ax.plot(t, scores, color="0.6", lw=1.0, label="raw")
    if scores_smooth is not None:
        ax.plot(t, scores_smooth, color="C0", lw=1.6, label="smoothed")
        peak_src = scores_smooth
    else:
        peak_src = scores
    if len(peaks):
        ax.plot(
            list(peaks),
            [peak_src[p] for p in peaks],
            "v",
            color="C3",
            ms=8,
            label="peaks",
        )
    for j, idx in enumerate(indices):
        ax.axvline(
            idx,
            color="C2",
            lw=0.8,
            alpha=0.5,
            label="sampled frame" if j == 0 else None,
        )
    ax.set_xlabel("transition / frame index")
    ax.set_ylabel("flow magnitude (px)")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot_accuracy(report: EvalReport, out_path="accuracy.png", title="ACC") -> Path:
    """Bar chart of per-axis and overall accuracy."""
    out_path = Path(out_path)
    keys = [a.value.lower() for a in AXIS_ORDER] + ["all"]
    labels = [a.value for a in AXIS_ORDER] + ["All"]
    values = [report.acc.get(k) for k in keys]

    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=120)
    xs = range(len(keys))
    bars = ax.bar(
        xs,
        [v if v is not None else 0.0 for v in values],
        color=["C0", "C1", "C2", "0.3"],
    )
    for x, bar, v, k in zip(xs, bars, values, keys):
        text = f"{v:.3f}" if v is not None else "n/a"
        ax.text(
            x,
            bar.get_height() + 0.02,
            f"{text}\n(n={report.counts.get(k, 0)})",
            ha="center",
            va="bottom",
            fontsize=8,
        )
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels)
    ax.set_ylim(0.0, 1.15)
    ax.set_ylabel("accuracy")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
