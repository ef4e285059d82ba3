"""Synthetic datasets with interactions planted as functions of geometry.

Object class 0 is ``person``. Action ``a`` pairs object class ``1 + a // 2``
with spatial relation ``a % 2``:

* relation 0, *beside*: the object's left edge sits on the human's right
  edge (within ``TOUCH``) and its vertical centre lies inside the human box;
* relation 1, *above*: the object's bottom edge sits on the human's top edge
  and its horizontal centre lies inside the human box.

The generator only keeps layouts in which every human-object pair is either
clearly in one relation or separated by at least ``SEPARATION``, so the rule
is learnable from the spatial maps while the pooled appearance features
carry the object class.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import numpy as np

from .io import write_dataset
from .types import Box, CompatibilityTable, Dataset, DetectionBox, GroundTruthTriplet, ImageRecord

TOUCH = 0.04
CLEAR_TOUCH = 0.025
SEPARATION = 0.08
BESIDE, ABOVE = 0, 1

_MAX_TRIES = 2000


def num_object_classes(num_actions: int) -> int:
    """Non-person object classes needed for ``num_actions`` planted actions."""
    return math.ceil(num_actions / 2)


def action_for(class_id: int, relation: int) -> int:
    return 2 * (class_id - 1) + relation


def relation(human: Box, obj: Box) -> Optional[int]:
    """Planted spatial relation of ``obj`` to ``human`` (None if neither)."""
    hx1, hy1, hx2, hy2 = human
    ox1, oy1, ox2, oy2 = obj
    ocx, ocy = (ox1 + ox2) / 2, (oy1 + oy2) / 2
    if abs(ox1 - hx2) <= TOUCH and hy1 <= ocy <= hy2:
        return BESIDE
    if abs(hy1 - oy2) <= TOUCH and hx1 <= ocx <= hx2:
        return ABOVE
    return None


def _separation(a: Box, b: Box) -> float:
    return max(b[0] - a[2], a[0] - b[2], b[1] - a[3], a[1] - b[3])


def _is_clear(human: Box, obj: Box) -> bool:
    hx1, hy1, hx2, hy2 = human
    ox1, oy1, ox2, oy2 = obj
    ocx, ocy = (ox1 + ox2) / 2, (oy1 + oy2) / 2
    hw, hh = hx2 - hx1, hy2 - hy1
    if abs(ox1 - hx2) <= CLEAR_TOUCH and hy1 + 0.2 * hh <= ocy <= hy2 - 0.2 * hh:
        return True
    if abs(hy1 - oy2) <= CLEAR_TOUCH and hx1 + 0.2 * hw <= ocx <= hx2 - 0.2 * hw:
        return True
    return _separation(human, obj) >= SEPARATION


def _round(box) -> Box:
    return tuple(round(float(v), 4) for v in box)


def _inside(box) -> bool:
    return 0.0 <= box[0] < box[2] <= 1.0 and 0.0 <= box[1] < box[3] <= 1.0


def _human_box(rng) -> Box:
    w, h = rng.uniform(0.15, 0.25), rng.uniform(0.3, 0.45)
    x1, y1 = rng.uniform(0.02, 0.98 - w), rng.uniform(0.02, 0.98 - h)
    return _round((x1, y1, x1 + w, y1 + h))


def _object_box(rng, human: Box, rel: Optional[int]) -> Box:
    w, h = rng.uniform(0.12, 0.2), rng.uniform(0.12, 0.2)
    hx1, hy1, hx2, hy2 = human
    if rel == BESIDE:
        x1 = hx2 + rng.uniform(-0.02, 0.02)
        cy = rng.uniform(hy1 + 0.25 * (hy2 - hy1), hy2 - 0.25 * (hy2 - hy1))
        box = (x1, cy - h / 2, x1 + w, cy + h / 2)
    elif rel == ABOVE:
        y2 = hy1 + rng.uniform(-0.02, 0.02)
        cx = rng.uniform(hx1 + 0.25 * (hx2 - hx1), hx2 - 0.25 * (hx2 - hx1))
        box = (cx - w / 2, y2 - h, cx + w / 2, y2)
    else:
        x1, y1 = rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h)
        box = (x1, y1, x1 + w, y1 + h)
    return _round(box)


def _layout(rng, num_humans: int, num_objects: int, num_actions: int):
    n_classes = num_object_classes(num_actions)
    for _ in range(_MAX_TRIES):
        humans = [_human_box(rng) for _ in range(num_humans)]
        objects = []
        for _ in range(num_objects):
            cls = int(rng.integers(1, n_classes + 1))
            allowed = [r for r in (BESIDE, ABOVE) if action_for(cls, r) < num_actions]
            rel = None if rng.random() < 0.3 else allowed[int(rng.integers(len(allowed)))]
            anchor = humans[int(rng.integers(num_humans))]
            objects.append((_object_box(rng, anchor, rel), cls))
        if not all(_inside(b) for b, _ in objects):
            continue
        if all(_is_clear(h, b) for h in humans for b, _ in objects):
            return humans, objects
    raise RuntimeError("could not place a clear layout; reduce H or O")


def _paint(feature: np.ndarray, box: Box, pattern: np.ndarray) -> None:
    _, hf, wf = feature.shape
    rows = [r for r in range(hf) if box[1] <= (r + 0.5) / hf <= box[3]]
    cols = [c for c in range(wf) if box[0] <= (c + 0.5) / wf <= box[2]]
    if not rows:
        rows = [min(int((box[1] + box[3]) / 2 * hf), hf - 1)]
    if not cols:
        cols = [min(int((box[0] + box[2]) / 2 * wf), wf - 1)]
    feature[:, rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1] += pattern[:, None, None]


def planted_labels(humans: list[Box], objects: list[tuple[Box, int]], num_actions: int):
    """Ground-truth triplets implied by the planted rule (image id left blank)."""
    out = []
    for h in humans:
        for box, cls in objects:
            rel = relation(h, box)
            if rel is not None and action_for(cls, rel) < num_actions:
                out.append((h, box, action_for(cls, rel)))
    return out


def build_fixture(
    seed: int,
    num_images: int,
    num_humans: int,
    num_objects: int,
    num_actions: int,
    feature_dims: tuple[int, int, int] = (16, 16, 16),
    holdout: float = 0.0,
) -> Dataset:
    """In-memory synthetic dataset; see the module docstring for the rule."""
    if num_images < 1 or num_humans < 1 or num_actions < 1 or num_objects < 0:
        raise ValueError("counts must be >= 1 (objects >= 0)")
    rng = np.random.default_rng(seed)
    channels, hf, wf = feature_dims
    n_classes = num_object_classes(num_actions)
    human_pattern = rng.uniform(0.0, 1.0, channels)
    class_patterns = rng.uniform(0.0, 1.0, (n_classes + 1, channels))
    n_test = int(round(holdout * num_images))

    records, triplets = [], []
    for k in range(num_images):
        image_id = f"img_{k:05d}"
        humans, objects = _layout(rng, num_humans, num_objects, num_actions)
        feature = rng.uniform(0.0, 0.2, (channels, hf, wf))
        for h in humans:
            _paint(feature, h, human_pattern)
        for box, cls in objects:
            _paint(feature, box, class_patterns[cls])
        records.append(
            ImageRecord(
                image_id,
                [DetectionBox(h, 0, round(float(rng.uniform(0.9, 1.0)), 4), True) for h in humans],
                [DetectionBox(b, c, round(float(rng.uniform(0.9, 1.0)), 4), False) for b, c in objects],
                split="test" if k >= num_images - n_test else "train",
                _feature=feature.astype(np.float32),
            )
        )
        triplets += [
            GroundTruthTriplet(image_id, h, b, a) for h, b, a in planted_labels(humans, objects, num_actions)
        ]

    matrix = np.zeros((num_actions, n_classes + 1), dtype=bool)
    for a in range(num_actions):
        matrix[a, 1 + a // 2] = True
    classes = ["person"] + [f"class_{c}" for c in range(1, n_classes + 1)]
    return Dataset(num_actions, classes, records, triplets, CompatibilityTable(matrix))


def generate_fixture(
    seed: int,
    num_images: int,
    num_humans: int,
    num_objects: int,
    num_actions: int,
    feature_dims: tuple[int, int, int] = (16, 16, 16),
    out_dir=".",
    holdout: float = 0.0,
) -> Path:
    """Write a synthetic dataset to ``out_dir`` and return its manifest path."""
    ds = build_fixture(seed, num_images, num_humans, num_objects, num_actions, feature_dims, holdout)
    return write_dataset(ds, out_dir)
