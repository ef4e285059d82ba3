from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

Box = tuple[float, float, float, float]


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


def check_box(box: Sequence[float], where: str) -> Box:
    if len(box) != 4:
        raise DataError(f"{where}: box must have 4 coordinates, got {len(box)}")
    x1, y1, x2, y2 = (float(v) for v in box)
    if not all(np.isfinite([x1, y1, x2, y2])):
        raise DataError(f"{where}: non-finite box coordinate")
    if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
        raise DataError(f"{where}: box {(x1, y1, x2, y2)} is not normalized and well-ordered")
    return (x1, y1, x2, y2)


@dataclass(frozen=True)
class DetectionBox:
    box: Box
    class_id: int
    score: float
    is_human: bool

    def __post_init__(self):
        object.__setattr__(self, "box", check_box(self.box, "detection"))
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"detection score {self.score} outside [0, 1]")


@dataclass
class ImageRecord:
    image_id: str
    humans: list[DetectionBox]
    objects: list[DetectionBox]
    feature_path: Optional[Path] = None
    split: str = "train"
    _feature: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        for k, h in enumerate(self.humans):
            if not h.is_human:
                raise DataError(f"image {self.image_id}: humans[{k}] is not flagged is_human")

    @property
    def feature(self) -> np.ndarray:
        """Backbone feature map ``C x H_f x W_f``, loaded on first use."""
        if self._feature is None:
            if self.feature_path is None:
                raise DataError(f"image {self.image_id}: no feature map attached")
            from ..numcore.serialization import load_tensor

            arr = load_tensor(self.feature_path)
            if arr.ndim != 3:
                raise DataError(f"{self.feature_path}: feature map must be rank 3, got {arr.shape}")
            self._feature = arr
        return self._feature

    @feature.setter
    def feature(self, value: np.ndarray) -> None:
        self._feature = value

    def same_as(self, other: "ImageRecord") -> bool:
        return (
            self.image_id == other.image_id
            and self.humans == other.humans
            and self.objects == other.objects
            and self.split == other.split
            and self.feature.dtype == other.feature.dtype
            and np.array_equal(self.feature, other.feature)
        )


@dataclass(frozen=True)
class GroundTruthTriplet:
    image_id: str
    human_box: Box
    object_box: Optional[Box]
    action_id: int


@dataclass
class CompatibilityTable:
    """``matrix[a, c]`` is true iff action ``a`` can involve object class ``c``."""

    matrix: np.ndarray
    human_only: frozenset[int] = frozenset()

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=bool)
        if self.matrix.ndim != 2:
            raise DataError("compatibility matrix must be 2-D (actions x object classes)")
        self.human_only = frozenset(int(a) for a in self.human_only)
        for a in range(self.matrix.shape[0]):
            if not self.matrix[a].any() and a not in self.human_only:
                raise DataError(f"compatibility: action {a} has no valid object class and is not human-only")

    @property
    def num_actions(self) -> int:
        return self.matrix.shape[0]

    def mask(self, class_id: int) -> np.ndarray:
        return self.matrix[:, class_id]

    def __eq__(self, other):
        return (
            isinstance(other, CompatibilityTable)
            and np.array_equal(self.matrix, other.matrix)
            and self.human_only == other.human_only
        )


@dataclass
class Dataset:
    num_actions: int
    object_classes: list[str]
    records: list[ImageRecord]
    triplets: list[GroundTruthTriplet]
    compatibility: CompatibilityTable
    root: Optional[Path] = None

    def split(self, name: Optional[str]) -> "Dataset":
        """Images (and their ground truth) whose split tag is ``name``; None keeps all."""
        if name is None:
            return self
        keep = [r for r in self.records if r.split == name]
        ids = {r.image_id for r in keep}
        return Dataset(
            self.num_actions,
            self.object_classes,
            keep,
            [t for t in self.triplets if t.image_id in ids],
            self.compatibility,
            self.root,
        )

    def triplets_by_image(self) -> dict[str, list[GroundTruthTriplet]]:
        out: dict[str, list[GroundTruthTriplet]] = {r.image_id: [] for r in self.records}
        for t in self.triplets:
            out.setdefault(t.image_id, []).append(t)
        return out

    def action_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_actions, dtype=int)
        for t in self.triplets:
            counts[t.action_id] += 1
        return counts

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_actions == other.num_actions
            and self.object_classes == other.object_classes
            and len(self.records) == len(other.records)
            and all(a.same_as(b) for a, b in zip(self.records, other.records))
            and self.triplets == other.triplets
            and self.compatibility == other.compatibility
        )
