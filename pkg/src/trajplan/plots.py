"""SVG figures: corridor map with profile strips, and benchmark histograms.

Output is byte-stable for identical inputs: the SVG id salt is fixed, the
date stamp is dropped and text stays as text instead of glyph paths.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .planner import Trajectory  # noqa: E402
from .scenario import Scenario  # noqa: E402

_STYLE = {
    "svg.hashsalt": "trajplan",
    "svg.fonttype": "none",
    "font.size": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
}
LIMIT_STYLE = {"color": "tab:red", "linestyle": "--", "linewidth": 0.8}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def profile_limits(scenario: Scenario) -> dict[str, tuple[float, float] | None]:
    b = scenario.bounds
    return {
        "theta": None,
        "kappa": (-b.kappa_max, b.kappa_max),
        "kappa_dot": (-b.kappa_dot_max, b.kappa_dot_max),
        "v": (0.0, None),
        "a": (b.a_min, b.a_max),
        "j": (b.j_min, b.j_max),
        "centri_acc": (-b.a_centri_max, b.a_centri_max),
        "centri_jerk": (-b.j_centri_max, b.j_centri_max),
    }


_LABELS = {
    "theta": "heading [rad]", "kappa": "curvature [1/m]", "kappa_dot": "curvature rate [1/(m s)]",
    "v": "speed [m/s]", "a": "accel [m/s²]", "j": "jerk [m/s³]",
    "centri_acc": "centripetal accel [m/s²]", "centri_jerk": "centripetal jerk [m/s³]",
}


def _profiles(traj: Trajectory) -> dict[str, np.ndarray]:
    s = traj.states
    u = traj.knot_controls()
    acc, jerk = traj.centripetal()
    return {"theta": s[:, 2], "kappa": s[:, 3], "kappa_dot": u[:, 1], "v": s[:, 4],
            "a": s[:, 5], "j": u[:, 0], "centri_acc": acc, "centri_jerk": jerk}


def plot_plan(scenario: Scenario, trajectory: Trajectory, path, guess: Trajectory | None = None,
              corridor=None, title: str | None = None) -> None:
    with plt.rc_context(_STYLE):
        _save(plan_figure(scenario, trajectory, guess, corridor, title), path)


def plan_figure(scenario: Scenario, trajectory: Trajectory, guess: Trajectory | None = None,
                corridor=None, title: str | None = None):
    """Map of corridor, reference, guess and plan above eight profile strips.

    Limit lines carry a gid ``limit:<profile>:<index>`` so they can be found again.
    """
    corridor = corridor or scenario.corridor
    with plt.rc_context(_STYLE):
        fig = plt.figure(figsize=(10, 11))
        grid = fig.add_gridspec(5, 2, height_ratios=[1.6, 1, 1, 1, 1], hspace=0.45, wspace=0.25)
        ax = fig.add_subplot(grid[0, :])
        for line, label in ((corridor.left, "left boundary"), (corridor.right, "right boundary")):
            ax.plot(*line.points.T, color="0.2", linewidth=1.0, label=label)
        ax.plot(*corridor.reference.points.T, color="tab:red", linewidth=0.9, label="reference")
        if guess is not None:
            ax.plot(*guess.states[:, :2].T, color="tab:gray", linestyle=":", label="initial guess")
        ax.plot(*trajectory.states[:, :2].T, color="tab:blue", label="trajectory")
        ax.plot(*trajectory.states[0, :2], "o", color="tab:blue", markersize=3)
        xy = np.vstack([trajectory.states[:, :2]] + ([guess.states[:, :2]] if guess is not None else []))
        pad = 5.0
        ax.set_xlim(xy[:, 0].min() - pad, xy[:, 0].max() + pad)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.legend(loc="upper left", fontsize=7, ncol=5)
        if title:
            ax.set_title(title)

        limits = profile_limits(scenario)
        series = _profiles(trajectory)
        guess_series = _profiles(guess) if guess is not None else None
        for i, key in enumerate(series):
            sub = fig.add_subplot(grid[1 + i // 2, i % 2])
            if guess_series is not None:
                sub.plot(guess.times, guess_series[key], color="tab:gray", linestyle=":")
            sub.plot(trajectory.times, series[key], color="tab:blue")
            for k, bound in enumerate(limits[key] or ()):
                if bound is not None:
                    sub.axhline(bound, gid=f"limit:{key}:{k}", **LIMIT_STYLE)
            if key == "v":
                sub.axhline(scenario.v_target, color="tab:green", linestyle=":", linewidth=0.8)
            sub.set_ylabel(_LABELS[key])
            if i >= 6:
                sub.set_xlabel("t [s]")
    return fig


def plot_histograms(histograms: dict, path) -> None:
    """Histograms as produced by ``benchmark.histograms``: metric -> (edges, {series: counts})."""
    labels = {"wall_ms": "wall time [ms]", "iterations": "inner iterations"}
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(histograms), figsize=(4.5 * len(histograms), 3.5),
                                 squeeze=False)
        for ax, (metric, (edges, counts)) in zip(axes[0], histograms.items()):
            for name in sorted(counts):
                c = counts[name]
                ax.stairs(c, edges, fill=True, alpha=0.5, label=f"{name} (n={int(c.sum())})")
            ax.set_xlabel(labels.get(metric, metric))
            ax.set_ylabel("cycles")
            ax.legend(fontsize=7)
        fig.tight_layout()
        _save(fig, path)
