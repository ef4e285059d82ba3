"""Detection metrics: IoU matching, scenario 1/2 average precision, partitions.

Matching follows the usual greedy protocol. Predictions of one action are
ranked by score (descending); each is matched to the unconsumed ground truth
of the same image with the highest overlap among those it satisfies, and a
ground truth can be consumed once. Equal scores are ordered by a key built
from the prediction's content, so the result does not depend on the order
predictions arrive in.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .datamodel.types import Box, DataError, GroundTruthTriplet, check_box

log = logging.getLogger(__name__)

IOU_THRESHOLD = 0.5
RARE_THRESHOLD = 10


@dataclass(frozen=True)
class ScoredTriplet:
    image_id: str
    human_box: Box
    object_box: Optional[Box]
    action_id: int
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise DataError(f"prediction for {self.image_id} has non-finite score")


@dataclass
class APReport:
    scenario: int
    ap: dict[int, float]
    partitions: dict[str, float] = field(default_factory=dict)

    @property
    def mean_ap(self) -> float:
        return float(np.mean(list(self.ap.values()))) if self.ap else 0.0

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "mAP": self.mean_ap,
            "ap": {str(k): v for k, v in sorted(self.ap.items())},
            "partitions": dict(self.partitions),
        }


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    if area_a <= 0 or area_b <= 0:
        raise ValueError("iou of a degenerate box")
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def pair_overlap(pred: ScoredTriplet, gt: GroundTruthTriplet, scenario: int) -> Optional[float]:
    """Match quality of ``pred`` against ``gt``, or None if it fails the criteria.

    Scenario 1 requires an empty predicted object box for no-object ground
    truth; scenario 2 ignores the object box in that case.
    """
    if pred.action_id != gt.action_id or pred.image_id != gt.image_id:
        return None
    h = iou(pred.human_box, gt.human_box)
    if h < IOU_THRESHOLD:
        return None
    if gt.object_box is None:
        if scenario == 1 and pred.object_box is not None:
            return None
        return h
    if pred.object_box is None:
        return None
    o = iou(pred.object_box, gt.object_box)
    return min(h, o) if o >= IOU_THRESHOLD else None


def _rank_key(p: ScoredTriplet):
    obj = (1,) + tuple(p.object_box) if p.object_box is not None else (0,)
    return (-p.score, p.image_id, tuple(p.human_box), obj)


def rank(preds: Iterable[ScoredTriplet]) -> list[ScoredTriplet]:
    return sorted(preds, key=_rank_key)


def match_predictions(
    preds: Sequence[ScoredTriplet], gts: Sequence[GroundTruthTriplet], scenario: int
) -> list[bool]:
    """True/false-positive flags for ``preds`` in ranked order.

    ``preds`` must already be ranked (see :func:`rank`).
    """
    if scenario not in (1, 2):
        raise ValueError(f"scenario must be 1 or 2, got {scenario}")
    by_image: dict[tuple[str, int], list[int]] = {}
    for k, g in enumerate(gts):
        by_image.setdefault((g.image_id, g.action_id), []).append(k)
    consumed = [False] * len(gts)
    flags = []
    for p in preds:
        best, best_k = -1.0, None
        for k in by_image.get((p.image_id, p.action_id), ()):
            if consumed[k]:
                continue
            q = pair_overlap(p, gts[k], scenario)
            if q is not None and q > best:
                best, best_k = q, k
        if best_k is not None:
            consumed[best_k] = True
        flags.append(best_k is not None)
    return flags


def match_prediction(pred, gts, consumed, scenario) -> Optional[int]:
    """Match one prediction against ``gts`` given a consumption mask (updated in place)."""
    best, best_k = -1.0, None
    for k, g in enumerate(gts):
        if consumed[k]:
            continue
        q = pair_overlap(pred, g, scenario)
        if q is not None and q > best:
            best, best_k = q, k
    if best_k is not None:
        consumed[best_k] = True
    return best_k


def average_precision(tp: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated AP from ranked true-positive flags."""
    if num_gt <= 0:
        raise ValueError("average precision undefined without ground truth")
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / num_gt
    precision = ctp / np.arange(1, tp.size + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def pr_curve(tp: Sequence[bool], num_gt: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(recall, precision)`` at each rank cutoff."""
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    return ctp / max(num_gt, 1), ctp / np.arange(1, tp.size + 1)


def evaluate(
    preds: Iterable[ScoredTriplet],
    gts: Sequence[GroundTruthTriplet],
    num_actions: int,
    scenario: int = 1,
    actions: Optional[Iterable[int]] = None,
) -> APReport:
    """Per-action AP over actions that have ground truth.

    Actions without ground truth are left out of the mean (with a warning when
    they were explicitly requested).
    """
    preds = list(preds)
    wanted = range(num_actions) if actions is None else sorted(set(actions))
    ap = {}
    for a in wanted:
        g = [t for t in gts if t.action_id == a]
        if not g:
            if actions is not None:
                log.warning("action %d has no ground truth; excluded from mAP", a)
            continue
        ranked = rank(p for p in preds if p.action_id == a)
        ap[a] = average_precision(match_predictions(ranked, g, scenario), len(g))
    return APReport(scenario, ap)


def partition_report(report: APReport, train_counts, rare_threshold: int = RARE_THRESHOLD) -> APReport:
    """Add full / rare / non-rare mAP; rare means fewer than ``rare_threshold`` training instances."""
    counts = {int(k): int(v) for k, v in (train_counts.items() if isinstance(train_counts, dict) else enumerate(train_counts))}
    missing = [a for a in report.ap if a not in counts]
    if missing:
        raise ValueError(f"training counts missing for actions {missing}")
    rare = [report.ap[a] for a in report.ap if counts[a] < rare_threshold]
    non_rare = [report.ap[a] for a in report.ap if counts[a] >= rare_threshold]
    parts = {"full": report.mean_ap}
    parts["rare"] = float(np.mean(rare)) if rare else float("nan")
    parts["non_rare"] = float(np.mean(non_rare)) if non_rare else float("nan")
    return APReport(report.scenario, dict(report.ap), parts)


# -- prediction dumps ------------------------------------------------------------


def write_predictions(preds: Iterable[ScoredTriplet], path) -> None:
    with open(path, "w") as fh:
        for p in preds:
            fh.write(
                json.dumps(
                    {
                        "image_id": p.image_id,
                        "human_box": list(p.human_box),
                        "object_box": None if p.object_box is None else list(p.object_box),
                        "action_id": p.action_id,
                        "score": p.score,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_predictions(path) -> list[ScoredTriplet]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"prediction dump not found: {path}")
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                raw = json.loads(line)
                obj = raw.get("object_box")
                out.append(
                    ScoredTriplet(
                        str(raw["image_id"]),
                        check_box(raw["human_box"], where),
                        None if obj is None else check_box(obj, where),
                        int(raw["action_id"]),
                        float(raw["score"]),
                    )
                )
            except (KeyError, json.JSONDecodeError) as exc:
                raise DataError(f"{where}: malformed prediction ({exc})") from None
    return out


def format_table(reports: dict[str, APReport], action_names: Optional[Sequence[str]] = None) -> str:
    """Aligned text table: one row per report, per-action AP columns then mAP."""
    actions = sorted({a for r in reports.values() for a in r.ap})
    names = [action_names[a] if action_names else f"a{a}" for a in actions]
    label_w = max([len("config")] + [len(k) for k in reports])
    header = "config".ljust(label_w) + "".join(f" {n:>7}" for n in names) + f" {'mAP':>7}"
    has_parts = any(r.partitions for r in reports.values())
    if has_parts:
        header += f" {'full':>7} {'rare':>7} {'nonrare':>7}"
    lines = [header, "-" * len(header)]
    for label, r in reports.items():
        row = label.ljust(label_w)
        row += "".join(f" {100 * r.ap[a]:7.2f}" if a in r.ap else f" {'-':>7}" for a in actions)
        row += f" {100 * r.mean_ap:7.2f}"
        if has_parts:
            row += "".join(
                f" {100 * r.partitions.get(k, float('nan')):7.2f}" for k in ("full", "rare", "non_rare")
            )
        lines.append(row)
    return "\n".join(lines)
