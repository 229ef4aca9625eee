"""External semantic signals scoring (object pair, relation) compatibility.

Any object with a ``score(scene, instance, relation)`` method works as a
signal. Two are built in: KB co-occurrence counts and scores precomputed
offline (for instance by an image-text retrieval model) read from a TSV.
"""

from __future__ import annotations

import math

import numpy as np

from .kb import KnowledgeBase
from .scene import RelationInstance, Scene, ValidationError


def _check_candidate(instance: RelationInstance, relation: int):
    if relation not in instance.candidates:
        raise ValueError(f"relation {relation} is not a candidate of pair {instance.pair}")


class CooccurrenceSignal:
    """alpha = ln(count(subject, relation, object) + 1) from the knowledge base."""

    def __init__(self, kb: KnowledgeBase):
        self.kb = kb

    def score(self, scene: Scene, instance: RelationInstance, relation: int) -> float:
        _check_candidate(instance, relation)
        s = scene.objects[instance.subject_idx].category
        o = scene.objects[instance.object_idx].category
        return math.log(self.kb.count(s, relation, o) + 1)


class FileSignal:
    """Precomputed scores keyed by (scene id, subject idx, object idx, relation id).

    Missing keys score ``default`` (0.0).
    """

    def __init__(self, scores: dict | None = None, default: float = 0.0):
        self.scores = dict(scores or {})
        self.default = default

    @classmethod
    def load(cls, path, kb: KnowledgeBase | None = None) -> "FileSignal":
        scores = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                try:
                    sid, s, o, rel, val = line.split("\t")
                    rid = int(rel) if rel.isdigit() or kb is None else kb.relation_id(rel)
                    val = float(val)
                except (ValueError, KeyError) as exc:
                    raise ValidationError(f"line {lineno}: malformed signal row ({exc})") from None
                if not math.isfinite(val):
                    raise ValidationError(f"line {lineno}: non-finite score")
                scores[(sid, int(s), int(o), rid)] = val
        return cls(scores)

    def score(self, scene: Scene, instance: RelationInstance, relation: int) -> float:
        _check_candidate(instance, relation)
        key = (scene.id, instance.subject_idx, instance.object_idx, relation)
        return self.scores.get(key, self.default)


def normalize(alphas, candidates, num_relations: int) -> np.ndarray:
    """Softmax of the scores over the candidate slots; zeros everywhere else.

    ``alphas`` are aligned with ``sorted(candidates)``.
    """
    idx = sorted(candidates)
    if not idx:
        raise ValueError("cannot normalize over an empty candidate set")
    a = np.asarray(alphas, dtype=float)
    if a.shape != (len(idx),) or not np.all(np.isfinite(a)):
        raise ValueError("need one finite score per candidate")
    ex = np.exp(a - a.max())
    e = np.zeros(num_relations)
    e[idx] = ex / ex.sum()
    return e


def estimate_e(signal, scene: Scene, instance: RelationInstance, num_relations: int) -> np.ndarray:
    idx = sorted(instance.candidates)
    alphas = [signal.score(scene, instance, r) for r in idx]
    return normalize(alphas, idx, num_relations)
