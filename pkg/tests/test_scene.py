import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from visdist.scene import (
    D_L, D_S, DISTANT, HUMAN, BoundingBox, Dataset, RelationInstance, ValidationError,
    dumps_dataset, iou, load_dataset, load_gold, overlaps, save_dataset, save_gold,
)

from conftest import make_scene


@st.composite
def boxes(draw, limit=40):
    x1 = draw(st.integers(0, limit - 1))
    y1 = draw(st.integers(0, limit - 1))
    x2 = draw(st.integers(x1 + 1, limit))
    y2 = draw(st.integers(y1 + 1, limit))
    return BoundingBox(x1, y1, x2, y2)


def test_overlap_examples():
    assert overlaps(BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 15, 15))
    assert not overlaps(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 6, 6))
    assert not overlaps(BoundingBox(0, 0, 5, 5), BoundingBox(5, 0, 10, 5))


def test_iou_examples():
    b = BoundingBox(0, 0, 2, 2)
    assert iou(b, b) == 1.0
    assert iou(b, BoundingBox(5, 5, 6, 6)) == 0.0
    assert iou(b, BoundingBox(1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-15)


@given(boxes(), boxes())
def test_overlap_and_iou_agree_and_are_symmetric(a, b):
    assert overlaps(a, b) == overlaps(b, a)
    assert iou(a, b) == iou(b, a)
    assert overlaps(a, b) == (iou(a, b) > 0)
    assert 0.0 <= iou(a, b) <= 1.0


@given(boxes())
def test_self_iou_is_one(b):
    assert iou(b, b) == 1.0


@pytest.mark.parametrize("coords", [(5, 0, 1, 3), (0, 0, 0, 1), (-1, 0, 2, 2),
                                    (0, 0, float("nan"), 1)])
def test_bad_boxes_rejected(coords):
    with pytest.raises(ValidationError):
        BoundingBox(*coords)


def _dataset():
    rel = RelationInstance(0, 1, frozenset({1, 3}), DISTANT, np.array([0, 0.25, 0, 0.75]))
    off = RelationInstance(1, 0, frozenset({2}), DISTANT, None, active=False)
    s1 = make_scene([(0, 0, 10, 10), (5, 5, 20, 20)], [0, 1], "a", relations=[rel, off])
    s2 = make_scene([(1, 1, 2, 2)], [2], "b")
    return Dataset([s1, s2], D_S)


def test_round_trip(tmp_path):
    ds = _dataset()
    save_dataset(ds, tmp_path / "d.jsonl")
    back = load_dataset(tmp_path / "d.jsonl")
    assert back.kind == D_S
    assert dumps_dataset(back) == dumps_dataset(ds)
    r0, r1 = back.scenes[0].relations
    np.testing.assert_array_equal(r0.label, [0, 0.25, 0, 0.75])
    assert r1.label is None and not r1.active
    np.testing.assert_array_equal(r0.raw(4), [0, 1, 0, 1])


def test_empty_file_is_empty_dataset(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert load_dataset(tmp_path / "e.jsonl").scenes == []


def test_inverted_box_names_line(tmp_path):
    good = json.dumps({"id": "a", "width": 10, "height": 10,
                       "objects": [{"box": [0, 0, 1, 1], "category": 0}], "relations": []})
    bad = good.replace("[0, 0, 1, 1]", "[4, 0, 1, 1]")
    (tmp_path / "x.jsonl").write_text(good + "\n" + bad + "\n")
    with pytest.raises(ValidationError, match="line 2"):
        load_dataset(tmp_path / "x.jsonl")


def test_malformed_json_names_line(tmp_path):
    (tmp_path / "x.jsonl").write_text("{not json\n")
    with pytest.raises(ValidationError, match="line 1"):
        load_dataset(tmp_path / "x.jsonl")


def test_invariant_violation_names_scene(tmp_path):
    bad_self = RelationInstance(0, 0, frozenset({1}), DISTANT)
    ds = Dataset([make_scene([(0, 0, 5, 5)], [0], "scene-7", relations=[bad_self])], D_S)
    with pytest.raises(ValidationError, match="scene-7"):
        ds.validate()
    outside = Dataset([make_scene([(0, 0, 500, 5)], [0], "wide")], D_S)
    with pytest.raises(ValidationError, match="wide"):
        outside.validate()


def test_label_must_sit_on_candidate_simplex():
    rel = RelationInstance(0, 1, frozenset({1}), DISTANT, np.array([0.5, 0.5, 0.0]))
    ds = Dataset([make_scene([(0, 0, 5, 5), (1, 1, 4, 4)], [0, 1], relations=[rel])], D_S)
    with pytest.raises(ValidationError):
        ds.validate()


def test_kind_must_match_provenance():
    rel = RelationInstance(0, 1, frozenset({1}), HUMAN, np.array([0.0, 1.0]))
    scene = make_scene([(0, 0, 5, 5), (1, 1, 4, 4)], [0, 1], relations=[rel])
    Dataset([scene], D_L).validate()
    with pytest.raises(ValidationError):
        Dataset([scene], D_S).validate()


def test_gold_round_trip(tmp_path):
    gold = {("a", 0, 1): 2, ("a", 1, 0): 1, ("b", 2, 0): 3}
    save_gold(gold, tmp_path / "g.jsonl")
    assert load_gold(tmp_path / "g.jsonl") == gold
