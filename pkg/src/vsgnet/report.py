"""Figures for the CLI report paths: loss curves, PR curves, ablation bars.

Every figure is written with the Agg backend; PNG metadata is stripped so
repeated runs produce identical files.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .datamodel.types import GroundTruthTriplet  # noqa: E402
from .eval import APReport, ScoredTriplet, match_predictions, pr_curve, rank  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "svg.hashsalt": "vsgnet",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curve(losses: Sequence[float], path, title: str = "training loss") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(np.arange(1, len(losses) + 1), losses, color="C0", lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean BCE")
        ax.set_title(title)
        if losses and min(losses) > 0:
            ax.set_yscale("log")
        return _save(fig, path)


def pr_curves(
    preds: Sequence[ScoredTriplet],
    gts: Sequence[GroundTruthTriplet],
    report: APReport,
    path,
    action_names: Optional[Sequence[str]] = None,
) -> Path:
    """One precision/recall curve per evaluated action."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for a in sorted(report.ap):
            g = [t for t in gts if t.action_id == a]
            ranked = rank(p for p in preds if p.action_id == a)
            tp = match_predictions(ranked, g, report.scenario)
            if not tp:
                continue
            recall, precision = pr_curve(tp, len(g))
            name = action_names[a] if action_names else f"a{a}"
            ax.step(recall, precision, where="post", lw=1.0, label=f"{name} ({100 * report.ap[a]:.1f})")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.05)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(f"scenario {report.scenario}, mAP {100 * report.mean_ap:.2f}")
        if ax.lines:
            ax.legend(fontsize=7, loc="lower left")
        return _save(fig, path)


def ablation_bars(reports: Mapping[str, APReport], path) -> Path:
    labels = list(reports)
    values = [100 * reports[k].mean_ap for k in labels]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        bars = ax.bar(range(len(labels)), values, color=[f"C{k}" for k in range(len(labels))])
        for bar, v in zip(bars, values):
            ax.annotate(f"{v:.1f}", (bar.get_x() + bar.get_width() / 2, v), ha="center", va="bottom", fontsize=8)
        ax.set_xticks(range(len(labels)), labels)
        ax.set_ylabel("mAP")
        ax.set_ylim(0, 105)
        return _save(fig, path)
