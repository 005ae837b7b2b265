"""Report figures: trajectory map coloured by pose verdict and per-pose ghost ratios."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import EvaluationReport, arclength, translations  # noqa: E402


def plot_report(path, report: EvaluationReport, trajectory, plan=None, dpi=120):
    """Save a two-panel figure for ``report``.

    Left: trajectory in plan view, bad poses red, unevaluated grey, and any
    disturbance areas of ``plan`` outlined. Right: pole and ordinary ghost
    ratios per pose with their thresholds.
    """
    t = translations(trajectory)
    stats = report.per_pose
    bad = np.array([s.is_bad for s in stats], bool)
    evaluated = np.array([s.evaluated for s in stats], bool)
    idx = np.array([s.index for s in stats])

    fig, (ax_map, ax_ratio) = plt.subplots(1, 2, figsize=(13, 5))
    ax_map.plot(t[:, 0], t[:, 1], color="0.75", lw=1, zorder=1)
    good = evaluated & ~bad
    ax_map.scatter(t[good, 0], t[good, 1], s=4, c="tab:green", label="good", zorder=2)
    ax_map.scatter(t[bad, 0], t[bad, 1], s=10, c="tab:red", label="bad", zorder=3)
    if (~evaluated).any():
        ax_map.scatter(t[~evaluated, 0], t[~evaluated, 1], s=6, c="0.4", marker="x", label="unevaluated", zorder=3)
    if plan is not None:
        for k, ids in enumerate(plan.pose_indices(trajectory)):
            if len(ids):
                ax_map.plot(t[ids, 0], t[ids, 1], color="tab:orange", lw=5, alpha=0.35,
                            label="disturbed area" if k == 0 else None, zorder=0)
    ax_map.set_aspect("equal")
    ax_map.set_xlabel("x [m]")
    ax_map.set_ylabel("y [m]")
    ax_map.set_title(f"P_acc = {report.p_acc:.4f}  ({len(report.bad_pose_indices)} bad / {report.n_evaluated})")
    ax_map.legend(loc="best", fontsize=8)

    s = arclength(trajectory)[idx]
    ax_ratio.plot(s, [x.ordi_ratio for x in stats], lw=0.8, label="ordinary ratio")
    ax_ratio.plot(s, [x.pole_ratio for x in stats], lw=0.8, label="pole ratio")
    ax_ratio.axhline(report.config.ordinary_ratio_threshold, color="tab:blue", ls="--", lw=0.8)
    ax_ratio.axhline(report.config.pole_ratio_threshold, color="tab:orange", ls="--", lw=0.8)
    if plan is not None:
        for g in plan.segments:
            ax_ratio.axvspan(g.start_arclen_m, g.end_arclen_m, color="tab:orange", alpha=0.12)
    ax_ratio.set_xlabel("arc length [m]")
    ax_ratio.set_ylabel("ghost ratio")
    ax_ratio.legend(loc="upper right", fontsize=8)

    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path
