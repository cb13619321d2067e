"""Matplotlib figures rendered beside the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_episode_figure(path, result, frame_shift_ms: float = 10.0, threshold: float = 0.5) -> None:
    """Probability trace over the query region plus predicted/reference lanes."""
    grid = result.query_grid
    shift_s = frame_shift_ms / 1000.0
    centers = [
        result.query_offset_s + 0.5 * (grid.bounds(i)[0] + grid.bounds(i)[1]) * shift_s
        for i in range(len(grid))
    ]
    p_pos = np.asarray(result.probs)[:, 0]

    fig, (ax_p, ax_e) = plt.subplots(
        2, 1, figsize=(10, 5), sharex=True, gridspec_kw={"height_ratios": [3, 1]}
    )
    ax_p.plot(centers, p_pos, lw=1.0, color="tab:blue")
    ax_p.axhline(threshold, color="tab:red", lw=0.8, ls="--")
    ax_p.set_ylabel("p(positive)")
    ax_p.set_ylim(-0.05, 1.05)
    ax_p.set_title(result.recording)

    pred_bars = [(e.onset_s, e.offset_s - e.onset_s) for e in result.events]
    ref_bars = [(a.onset_s, a.offset_s - a.onset_s) for a in result.reference]
    ax_e.broken_barh(pred_bars, (0.55, 0.35), color="tab:blue", label="predicted")
    ax_e.broken_barh(ref_bars, (0.10, 0.35), color="tab:green", label="reference")
    ax_e.set_ylim(0, 1)
    ax_e.set_yticks([0.275, 0.725])
    ax_e.set_yticklabels(["reference", "predicted"])
    ax_e.set_xlabel("time (s)")

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_benchmark_figure(path, report) -> None:
    """Grouped bars: F-measure per profile for each config, plus the pooled value."""
    if not report.outcomes:
        return
    profiles = sorted({k for o in report.outcomes for k in o.per_profile})
    groups = profiles + ["overall"]
    n_cfg = len(report.outcomes)
    width = 0.8 / n_cfg
    x = np.arange(len(groups))

    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(groups) + 2), 4))
    for ci, o in enumerate(report.outcomes):
        vals = [o.per_profile[p].f_measure if p in o.per_profile else 0.0 for p in profiles]
        vals.append(o.overall.f_measure)
        ax.bar(x + (ci - (n_cfg - 1) / 2) * width, vals, width, label=o.label)
    ax.set_xticks(x)
    ax.set_xticklabels(groups, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("event F-measure")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
