"""Manifest, annotation and compatibility files.

A dataset directory holds::

    manifest.json          {version, A, object_classes, images[], annotations_path, compatibility_path}
    annotations.jsonl      one ground-truth triplet per line
    compatibility.json     {matrix: [[0|1, ...], ...], human_only: [...]}
    features/<id>.vsgt     one feature map per image
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..numcore.serialization import TensorFormatError, load_tensor, save_tensor
from .types import (
    CompatibilityTable,
    DataError,
    Dataset,
    DetectionBox,
    GroundTruthTriplet,
    ImageRecord,
    check_box,
)

MANIFEST_VERSION = 1


def _read_json(path: Path, what: str):
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def _parse_detection(raw: dict, where: str, num_classes: int) -> DetectionBox:
    try:
        box = check_box(raw["box"], where)
        class_id = int(raw["class_id"])
        score = float(raw["score"])
        is_human = bool(raw["is_human"])
    except KeyError as exc:
        raise DataError(f"{where}: missing field {exc.args[0]!r}") from None
    if not 0 <= class_id < num_classes:
        raise DataError(f"{where}: unknown object class id {class_id}")
    if not 0.0 <= score <= 1.0:
        raise DataError(f"{where}: score {score} outside [0, 1]")
    return DetectionBox(box, class_id, score, is_human)


def load_compatibility(path: Path, num_actions: int, num_classes: int) -> CompatibilityTable:
    raw = _read_json(path, "compatibility table")
    matrix = np.asarray(raw.get("matrix", []), dtype=bool)
    if matrix.shape != (num_actions, num_classes):
        raise DataError(
            f"{path}: matrix shape {matrix.shape} != (A={num_actions}, classes={num_classes})"
        )
    human_only = raw.get("human_only", [])
    for a in human_only:
        if not 0 <= int(a) < num_actions:
            raise DataError(f"{path}: human_only lists unknown action id {a}")
    return CompatibilityTable(matrix, frozenset(human_only))


def load_annotations(path: Path, num_actions: int) -> list[GroundTruthTriplet]:
    if not path.is_file():
        raise DataError(f"annotations file not found: {path}")
    triplets = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                raw = json.loads(line)
                image_id = str(raw["image_id"])
                action = int(raw["action_id"])
                human = check_box(raw["human_box"], where)
                obj = raw.get("object_box")
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: invalid JSON ({exc})") from exc
            except KeyError as exc:
                raise DataError(f"{where}: missing field {exc.args[0]!r}") from None
            if not 0 <= action < num_actions:
                raise DataError(f"{where}: unknown action id {action}")
            triplets.append(
                GroundTruthTriplet(image_id, human, None if obj is None else check_box(obj, where), action)
            )
    return triplets


def load_dataset(manifest_path, lazy: bool = False) -> Dataset:
    """Read a dataset directory described by ``manifest_path``.

    With ``lazy`` the feature maps are read on first access instead of here.
    """
    manifest_path = Path(manifest_path)
    manifest = _read_json(manifest_path, "manifest")
    root = manifest_path.parent
    try:
        version = int(manifest["version"])
        num_actions = int(manifest["A"])
        classes = [str(c) for c in manifest["object_classes"]]
        images = manifest["images"]
        ann_path = root / manifest["annotations_path"]
        comp_path = root / manifest["compatibility_path"]
    except KeyError as exc:
        raise DataError(f"{manifest_path}: missing field {exc.args[0]!r}") from None
    if version != MANIFEST_VERSION:
        raise DataError(f"{manifest_path}: unsupported manifest version {version}")
    if num_actions < 1:
        raise DataError(f"{manifest_path}: A must be positive")

    records = []
    seen = set()
    for i, img in enumerate(images):
        where = f"{manifest_path} images[{i}]"
        try:
            image_id = str(img["image_id"])
            feature = root / img["feature"]
            dets = img["detections"]
        except KeyError as exc:
            raise DataError(f"{where}: missing field {exc.args[0]!r}") from None
        if image_id in seen:
            raise DataError(f"{where}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        if not feature.is_file():
            raise DataError(f"{where}: feature file not found: {feature}")
        parsed = [
            _parse_detection(d, f"{where}.detections[{k}]", len(classes)) for k, d in enumerate(dets)
        ]
        rec = ImageRecord(
            image_id,
            [d for d in parsed if d.is_human],
            [d for d in parsed if not d.is_human],
            feature_path=feature,
            split=str(img.get("split", "train")),
        )
        if not lazy:
            try:
                rec.feature  # noqa: B018 - forces the read
            except TensorFormatError as exc:
                raise DataError(f"{where}: {exc}") from exc
        records.append(rec)

    triplets = load_annotations(ann_path, num_actions)
    for t in triplets:
        if t.image_id not in seen:
            raise DataError(f"{ann_path}: annotation references unknown image {t.image_id!r}")
    compat = load_compatibility(comp_path, num_actions, len(classes))
    return Dataset(num_actions, classes, records, triplets, compat, root)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Write ``dataset`` under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    images = []
    for rec in dataset.records:
        rel = f"features/{rec.image_id}.vsgt"
        save_tensor(out_dir / rel, rec.feature)
        images.append(
            {
                "image_id": rec.image_id,
                "feature": rel,
                "split": rec.split,
                "detections": [
                    {"box": list(d.box), "class_id": d.class_id, "score": d.score, "is_human": d.is_human}
                    for d in rec.humans + rec.objects
                ],
            }
        )
    with open(out_dir / "annotations.jsonl", "w") as fh:
        for t in dataset.triplets:
            fh.write(
                _dump(
                    {
                        "image_id": t.image_id,
                        "human_box": list(t.human_box),
                        "object_box": None if t.object_box is None else list(t.object_box),
                        "action_id": t.action_id,
                    }
                )
                + "\n"
            )
    comp = dataset.compatibility
    (out_dir / "compatibility.json").write_text(
        _dump({"matrix": comp.matrix.astype(int).tolist(), "human_only": sorted(comp.human_only)}) + "\n"
    )
    manifest = {
        "version": MANIFEST_VERSION,
        "A": dataset.num_actions,
        "object_classes": list(dataset.object_classes),
        "images": images,
        "annotations_path": "annotations.jsonl",
        "compatibility_path": "compatibility.json",
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path
