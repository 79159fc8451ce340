"""Matplotlib renderings of the exported metric panels.

Figures are written next to the CSV files produced by
:func:`sagin_sfco.harness.export_plot_data`, from the same reports, so the
picture and the numbers always agree.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import OUTCOME_ORDER  # noqa: E402

_RC = {"figure.dpi": 110, "axes.grid": True, "grid.alpha": 0.3, "font.size": 9,
       "svg.hashsalt": "sagin-sfco", "path.simplify": False}


def _by_policy(reports):
    groups = defaultdict(list)
    for rep in reports:
        groups[rep.policy].append(rep)
    return groups


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_outcomes(reports, path) -> Path:
    """Grouped bars: mean count of each outcome per policy."""
    groups = _by_policy(reports)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7.5, 3.6))
        width = 0.8 / max(1, len(groups))
        x = np.arange(len(OUTCOME_ORDER))
        for j, (policy, reps) in enumerate(groups.items()):
            means = [np.mean([r.histogram()[o] for r in reps]) for o in OUTCOME_ORDER]
            ax.bar(x + j * width - 0.4 + width / 2, means, width, label=policy)
        ax.set_xticks(x, [o.value for o in OUTCOME_ORDER], rotation=20, ha="right")
        ax.set_ylabel("requests (mean over seeds)")
        ax.legend(fontsize=8)
        return _save(fig, Path(path))


def _series_plot(reports, path, values, ylabel) -> Path:
    groups = _by_policy(reports)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.5, 3.4))
        for policy, reps in groups.items():
            hours = [s[1] for s in reps[0].samples]
            ys = np.mean([values(r) for r in reps], axis=0)
            ax.plot(hours, ys, marker=".", label=policy)
        ax.set_xlabel("time (h)")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
        return _save(fig, Path(path))


def plot_active(reports, path) -> Path:
    return _series_plot(reports, path, lambda r: r.active_series, "active SFCs")


def plot_revenue(reports, path) -> Path:
    return _series_plot(reports, path, lambda r: r.revenue_series, "completed SFCs per hour")


def render_figures(reports, out_dir) -> dict:
    """Write ``outcomes.png``, ``active_sfcs.png`` and ``revenue.png``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = list(reports)
    return {
        "outcomes": plot_outcomes(reports, out / "outcomes.png"),
        "active": plot_active(reports, out / "active_sfcs.png"),
        "revenue": plot_revenue(reports, out / "revenue.png"),
    }


def plot_learning_curve(curve_rows, path) -> Path:
    """Per-episode reward (faint) and its moving average."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.5, 3.4))
        ep = [r["episode"] for r in curve_rows]
        ax.plot(ep, [r["reward"] for r in curve_rows], lw=0.4, alpha=0.3, label="episode reward")
        ax.plot(ep, [r["moving_avg_reward"] for r in curve_rows], lw=1.4, label="moving average")
        ax.set_xlabel("episode")
        ax.set_ylabel("reward")
        ax.legend(fontsize=8)
        return _save(fig, Path(path))
