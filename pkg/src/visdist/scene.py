"""Scenes, annotated objects and relation instances, plus the JSON-lines format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NA = 0
HUMAN = "human"
DISTANT = "distant"
D_S = "D_S"
D_L = "D_L"


class ValidationError(ValueError):
    """Input data violates a structural invariant."""


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValidationError(f"non-finite box {coords}")
        if min(coords) < 0:
            raise ValidationError(f"negative coordinate in box {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValidationError(f"degenerate box {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def as_list(self) -> list[float]:
        return [float(self.x1), float(self.y1), float(self.x2), float(self.y2)]


def intersection_area(b1: BoundingBox, b2: BoundingBox) -> float:
    w = min(b1.x2, b2.x2) - max(b1.x1, b2.x1)
    h = min(b1.y2, b2.y2) - max(b1.y1, b2.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def overlaps(b1: BoundingBox, b2: BoundingBox) -> bool:
    """True iff the boxes share positive area; touching edges do not count."""
    return intersection_area(b1, b2) > 0


def iou(b1: BoundingBox, b2: BoundingBox) -> float:
    inter = intersection_area(b1, b2)
    if inter == 0:
        return 0.0
    return inter / (b1.area + b2.area - inter)


def contains(outer: BoundingBox, inner: BoundingBox) -> bool:
    return (
        outer.x1 <= inner.x1
        and outer.y1 <= inner.y1
        and inner.x2 <= outer.x2
        and inner.y2 <= outer.y2
    )


@dataclass(frozen=True)
class ObjectInstance:
    bbox: BoundingBox
    category: int


@dataclass
class RelationInstance:
    """One ordered object pair with its distant candidates and current label.

    ``label`` is a probability vector over the full relation vocabulary
    (NA at index 0), or None while unset.
    """

    subject_idx: int
    object_idx: int
    candidates: frozenset[int]
    provenance: str = DISTANT
    label: np.ndarray | None = None
    active: bool = True

    def raw(self, num_relations: int) -> np.ndarray:
        d = np.zeros(num_relations)
        d[sorted(self.candidates)] = 1.0
        return d

    def candidate_mask(self, num_relations: int) -> np.ndarray:
        return self.raw(num_relations).astype(bool)

    @property
    def pair(self) -> tuple[int, int]:
        return self.subject_idx, self.object_idx


@dataclass
class Scene:
    id: str
    width: float
    height: float
    objects: list[ObjectInstance]
    relations: list[RelationInstance] = field(default_factory=list)

    def validate(self):
        for k, obj in enumerate(self.objects):
            b = obj.bbox
            if b.x2 > self.width or b.y2 > self.height:
                raise ValidationError(f"scene {self.id}: object {k} box outside image")
            if obj.category < 0:
                raise ValidationError(f"scene {self.id}: object {k} has negative category")
        n = len(self.objects)
        for rel in self.relations:
            s, o = rel.pair
            if not (0 <= s < n and 0 <= o < n) or s == o:
                raise ValidationError(f"scene {self.id}: bad relation indices {(s, o)}")
            if rel.provenance not in (HUMAN, DISTANT):
                raise ValidationError(f"scene {self.id}: unknown provenance {rel.provenance!r}")
            if rel.provenance == DISTANT and NA in rel.candidates:
                raise ValidationError(f"scene {self.id}: NA among distant candidates")
            if rel.label is not None:
                _check_label(self.id, rel)


def _check_label(scene_id: str, rel: RelationInstance, tol: float = 1e-9):
    lab = rel.label
    if not np.all(np.isfinite(lab)) or np.any(lab < 0):
        raise ValidationError(f"scene {scene_id}: invalid label on pair {rel.pair}")
    off = np.ones(len(lab), dtype=bool)
    off[[c for c in rel.candidates if c < len(lab)]] = False
    if np.any(lab[off] != 0):
        raise ValidationError(f"scene {scene_id}: label mass outside candidates on pair {rel.pair}")
    if rel.candidates and abs(lab.sum() - 1.0) > tol:
        raise ValidationError(f"scene {scene_id}: label does not sum to 1 on pair {rel.pair}")
    if rel.provenance == HUMAN and np.count_nonzero(lab) != 1:
        raise ValidationError(f"scene {scene_id}: human label is not one-hot on pair {rel.pair}")


@dataclass
class Dataset:
    scenes: list[Scene]
    kind: str = D_S

    def validate(self):
        if self.kind not in (D_S, D_L):
            raise ValidationError(f"unknown dataset kind {self.kind!r}")
        want = HUMAN if self.kind == D_L else DISTANT
        for scene in self.scenes:
            scene.validate()
            for rel in scene.relations:
                if rel.provenance != want:
                    raise ValidationError(
                        f"scene {scene.id}: {rel.provenance} relation in {self.kind} dataset"
                    )

    def instances(self, active_only: bool = False):
        """Yield (scene, relation) pairs in file order."""
        for scene in self.scenes:
            for rel in scene.relations:
                if active_only and not rel.active:
                    continue
                yield scene, rel

    def num_active(self) -> int:
        return sum(1 for _ in self.instances(active_only=True))


# --- serialization -----------------------------------------------------------


def scene_to_record(scene: Scene) -> dict:
    rels = []
    for rel in scene.relations:
        rec = {
            "sub": int(rel.subject_idx),
            "obj": int(rel.object_idx),
            "candidates": sorted(rel.candidates),
            "raw": sorted(rel.candidates),
            "provenance": rel.provenance,
        }
        if rel.label is not None:
            rec["label"] = [float(x) for x in rel.label]
        if not rel.active:
            rec["active"] = False
        rels.append(rec)
    return {
        "id": scene.id,
        "width": float(scene.width),
        "height": float(scene.height),
        "objects": [{"box": o.bbox.as_list(), "category": int(o.category)} for o in scene.objects],
        "relations": rels,
    }


def scene_from_record(rec: dict) -> Scene:
    objects = [
        ObjectInstance(BoundingBox(*map(float, o["box"])), int(o["category"]))
        for o in rec["objects"]
    ]
    relations = []
    for r in rec.get("relations", []):
        cands = frozenset(int(c) for c in r["candidates"])
        if "raw" in r and frozenset(int(c) for c in r["raw"]) != cands:
            raise ValidationError(f"scene {rec['id']}: raw labels disagree with candidates")
        label = r.get("label")
        relations.append(
            RelationInstance(
                subject_idx=int(r["sub"]),
                object_idx=int(r["obj"]),
                candidates=cands,
                provenance=r.get("provenance", DISTANT),
                label=None if label is None else np.asarray(label, dtype=float),
                active=bool(r.get("active", True)),
            )
        )
    return Scene(str(rec["id"]), float(rec["width"]), float(rec["height"]), objects, relations)


def dumps_dataset(ds: Dataset) -> str:
    return "".join(json.dumps(scene_to_record(s), sort_keys=True) + "\n" for s in ds.scenes)


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def load_dataset(path, kind: str | None = None) -> Dataset:
    """Read a JSON-lines dataset.

    ``kind`` defaults to D_L when every relation is human-labeled and to D_S
    otherwise. Raises ValidationError naming the line or scene at fault.
    """
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                scene = scene_from_record(rec)
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"line {lineno}: malformed record ({exc})") from None
            scenes.append(scene)
    if kind is None:
        provs = {r.provenance for s in scenes for r in s.relations}
        kind = D_L if provs == {HUMAN} else D_S
    ds = Dataset(scenes, kind)
    ds.validate()
    return ds


# --- gold relations ------------------------------------------------------------

Gold = dict  # (scene_id, sub, obj) -> relation id


def save_gold(gold: Gold, path) -> None:
    by_scene: dict[str, list] = {}
    for (sid, s, o), r in gold.items():
        by_scene.setdefault(str(sid), []).append({"sub": int(s), "obj": int(o), "relation": int(r)})
    lines = []
    for sid, rels in by_scene.items():
        rels.sort(key=lambda d: (d["sub"], d["obj"]))
        lines.append(json.dumps({"id": sid, "relations": rels}, sort_keys=True) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_gold(path) -> Gold:
    gold = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                for r in rec["relations"]:
                    gold[(str(rec["id"]), int(r["sub"]), int(r["obj"]))] = int(r["relation"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"line {lineno}: malformed gold record ({exc})") from None
    return gold


def gold_from_human(ds: Dataset) -> Gold:
    """Gold triples carried by the human labels of a D_L dataset."""
    gold = {}
    for scene, rel in ds.instances():
        if rel.provenance == HUMAN and rel.label is not None:
            gold[(scene.id, *rel.pair)] = int(np.argmax(rel.label))
    return gold
