from .fixture import build_fixture, generate_fixture, planted_labels, relation
from .io import load_dataset, write_dataset
from .types import (
    Box,
    CompatibilityTable,
    DataError,
    Dataset,
    DetectionBox,
    GroundTruthTriplet,
    ImageRecord,
    check_box,
)

__all__ = [
    "Box",
    "CompatibilityTable",
    "DataError",
    "Dataset",
    "DetectionBox",
    "GroundTruthTriplet",
    "ImageRecord",
    "build_fixture",
    "check_box",
    "generate_fixture",
    "load_dataset",
    "planted_labels",
    "relation",
    "write_dataset",
]
