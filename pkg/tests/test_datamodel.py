import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsgnet.datamodel import (
    CompatibilityTable,
    DataError,
    Dataset,
    DetectionBox,
    GroundTruthTriplet,
    ImageRecord,
    build_fixture,
    check_box,
    generate_fixture,
    load_dataset,
    write_dataset,
)
from vsgnet.head import HeadConfig, enumerate_pairs


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _rewrite_manifest(path, edit):
    manifest = json.loads(path.read_text())
    edit(manifest)
    path.write_text(json.dumps(manifest))


# -- independent re-statement of the planted rule ---------------------------------------


def _oracle_labels(record, num_actions):
    """Action a <-> class 1 + a // 2; even a: object touches the human's right side, odd a: top."""
    labels = set()
    for h in record.humans:
        hx1, hy1, hx2, hy2 = h.box
        for o in record.objects:
            ox1, oy1, ox2, oy2 = o.box
            cx, cy = (ox1 + ox2) / 2, (oy1 + oy2) / 2
            side = abs(ox1 - hx2) <= 0.04 and hy1 <= cy <= hy2
            top = abs(hy1 - oy2) <= 0.04 and hx1 <= cx <= hx2
            for a in range(num_actions):
                if o.class_id != 1 + a // 2:
                    continue
                if (a % 2 == 0 and side) or (a % 2 == 1 and top and not side):
                    labels.add((h.box, o.box, a))
    return labels


class TestTypes:
    def test_check_box_rejects_unordered(self):
        with pytest.raises(DataError):
            check_box((0.5, 0.1, 0.4, 0.3), "here")

    def test_check_box_rejects_out_of_range(self):
        with pytest.raises(DataError):
            check_box((0.0, 0.0, 1.2, 0.5), "here")

    def test_detection_score_range(self):
        with pytest.raises(DataError):
            DetectionBox((0, 0, 0.5, 0.5), 1, 1.5, False)

    def test_humans_must_be_flagged(self):
        with pytest.raises(DataError):
            ImageRecord("x", [DetectionBox((0, 0, 0.5, 0.5), 0, 0.9, False)], [])

    def test_compatibility_needs_class_or_human_only(self):
        with pytest.raises(DataError):
            CompatibilityTable(np.zeros((2, 3), dtype=bool))
        table = CompatibilityTable(np.array([[False, True, False], [False, False, False]]), frozenset({1}))
        assert table.mask(1).tolist() == [True, False]


class TestLoad:
    def test_empty_image_list(self, tmp_path):
        ds = Dataset(2, ["person", "cup"], [], [], CompatibilityTable(np.array([[0, 1], [0, 1]], dtype=bool)))
        manifest = write_dataset(ds, tmp_path)
        loaded = load_dataset(manifest)
        assert loaded.records == [] and loaded.triplets == []

    def test_missing_tensor_file_is_named(self, tmp_path):
        manifest = generate_fixture(0, 2, 1, 1, 2, (2, 4, 4), tmp_path)
        (tmp_path / "features" / "img_00001.vsgt").unlink()
        with pytest.raises(DataError, match="img_00001.vsgt") as info:
            load_dataset(manifest)
        assert "images[1]" in str(info.value)

    def test_round_trip(self, tmp_path):
        ds = build_fixture(5, 6, 2, 3, 6, feature_dims=(3, 8, 8), holdout=0.5)
        loaded = load_dataset(write_dataset(ds, tmp_path))
        assert loaded == ds
        assert [r.split for r in loaded.records] == [r.split for r in ds.records]

    def test_lazy_features(self, tmp_path):
        manifest = generate_fixture(1, 2, 1, 1, 2, (2, 4, 4), tmp_path)
        ds = load_dataset(manifest, lazy=True)
        assert ds.records[0].feature.shape == (2, 4, 4)

    def test_malformed_box_reports_coordinates(self, tmp_path):
        manifest = generate_fixture(0, 2, 1, 1, 2, (2, 4, 4), tmp_path)
        _rewrite_manifest(manifest, lambda m: m["images"][1]["detections"][0].update(box=[0.6, 0.1, 0.2, 0.3]))
        with pytest.raises(DataError, match=r"images\[1\]\.detections\[0\]"):
            load_dataset(manifest)

    def test_unknown_class_id(self, tmp_path):
        manifest = generate_fixture(0, 1, 1, 1, 2, (2, 4, 4), tmp_path)
        _rewrite_manifest(manifest, lambda m: m["images"][0]["detections"][1].update(class_id=99))
        with pytest.raises(DataError, match="class"):
            load_dataset(manifest)

    def test_unknown_action_id(self, tmp_path):
        manifest = generate_fixture(0, 1, 1, 1, 2, (2, 4, 4), tmp_path)
        ann = tmp_path / "annotations.jsonl"
        ann.write_text(
            json.dumps({"image_id": "img_00000", "human_box": [0, 0, 0.5, 0.5], "object_box": None, "action_id": 7})
            + "\n"
        )
        with pytest.raises(DataError, match="action"):
            load_dataset(manifest)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_dataset(tmp_path / "manifest.json")


class TestFixture:
    def test_same_seed_byte_identical(self, tmp_path):
        generate_fixture(4, 3, 2, 2, 4, (3, 6, 6), tmp_path / "a")
        generate_fixture(4, 3, 2, 2, 4, (3, 6, 6), tmp_path / "b")
        assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")

    def test_different_seed_differs(self):
        a = build_fixture(1, 2, 1, 1, 2, (2, 4, 4))
        b = build_fixture(2, 2, 1, 1, 2, (2, 4, 4))
        assert a != b

    def test_single_pair(self):
        ds = build_fixture(0, 1, 1, 1, 2, (2, 4, 4))
        assert len(enumerate_pairs(ds.records[0], HeadConfig())) == 1

    @settings(max_examples=15)
    @given(seed=st.integers(0, 10_000), humans=st.integers(1, 2), objects=st.integers(0, 3), actions=st.integers(1, 6))
    def test_planted_rule_consistency(self, seed, humans, objects, actions):
        ds = build_fixture(seed, 3, humans, objects, actions, (2, 4, 4))
        by_image = ds.triplets_by_image()
        for rec in ds.records:
            written = {(t.human_box, t.object_box, t.action_id) for t in by_image[rec.image_id]}
            assert written == _oracle_labels(rec, actions)

    def test_holdout_tags_tail(self):
        ds = build_fixture(0, 8, 1, 1, 2, (2, 4, 4), holdout=0.25)
        assert [r.split for r in ds.records] == ["train"] * 6 + ["test"] * 2
        assert len(ds.split("test").records) == 2

    def test_compatibility_matches_rule(self):
        ds = build_fixture(0, 1, 1, 1, 6, (2, 4, 4))
        for a in range(6):
            assert np.flatnonzero(ds.compatibility.matrix[a]).tolist() == [1 + a // 2]

    def test_split_filters_triplets(self):
        ds = build_fixture(0, 6, 2, 2, 4, (2, 4, 4), holdout=0.5)
        test = ds.split("test")
        ids = {r.image_id for r in test.records}
        assert all(t.image_id in ids for t in test.triplets)


def test_ground_truth_triplet_allows_missing_object():
    t = GroundTruthTriplet("x", (0, 0, 0.5, 0.5), None, 0)
    assert t.object_box is None
