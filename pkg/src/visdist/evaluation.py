"""Predicate classification: ranked relation predictions, recall/precision@K, label quality."""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .kb import KnowledgeBase, lookup
from .scene import NA, Dataset, Scene
from .scorer import RelationScorer, featurize_pairs, masked_softmax


@dataclass(frozen=True)
class RankedPrediction:
    scene_id: str
    subject_idx: int
    object_idx: int
    relation: int
    score: float


def predict_scene(scorer: RelationScorer, scene: Scene, kb: KnowledgeBase | None = None):
    """Score every ordered object pair; one prediction per non-NA relation.

    Scores are softmax probabilities over the full vocabulary, NA included.
    With ``kb``, only the pair's KB candidates are emitted. Sorted by score
    descending, ties by (relation, subject, object).
    """
    n = len(scene.objects)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    if not pairs:
        return []
    R = scorer.num_relations
    probs = masked_softmax(scorer.logits(featurize_pairs(scene, pairs, scorer.num_categories)),
                           np.ones((len(pairs), R), dtype=bool))
    out = []
    for k, (i, j) in enumerate(pairs):
        if kb is not None:
            rels = sorted(lookup(kb, scene.objects[i].category, scene.objects[j].category))
        else:
            rels = range(1, R)
        out.extend(RankedPrediction(scene.id, i, j, r, float(probs[k, r])) for r in rels if r != NA)
    out.sort(key=lambda p: (-p.score, p.relation, p.subject_idx, p.object_idx))
    return out


def predict_dataset(scorer, scenes, kb=None, threads: int = 1) -> list[RankedPrediction]:
    scenes = list(scenes.scenes if isinstance(scenes, Dataset) else scenes)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per = list(pool.map(lambda s: predict_scene(scorer, s, kb), scenes))
    else:
        per = [predict_scene(scorer, s, kb) for s in scenes]
    return [p for ps in per for p in ps]


def _mean(values) -> float:
    # fsum is correctly rounded, so the result does not depend on relation order
    return math.fsum(values) / len(values)


def _gold_set(gold) -> set[tuple]:
    if isinstance(gold, dict):
        return {(sid, s, o, r) for (sid, s, o), r in gold.items()}
    return set(gold)


def top_k(preds: Iterable[RankedPrediction], k: int, graph_constraint: bool = True):
    """Top-k predictions per scene, keeping the input order within each scene.

    Under the graph constraint only the first prediction of each ordered
    pair is eligible.
    """
    if k <= 0:
        raise ValueError("K must be positive")
    by_scene: dict[str, list] = defaultdict(list)
    seen: set = set()
    for p in preds:
        chosen = by_scene[p.scene_id]
        if len(chosen) >= k:
            continue
        key = (p.scene_id, p.subject_idx, p.object_idx)
        if graph_constraint:
            if key in seen:
                continue
            seen.add(key)
        chosen.append(p)
    return by_scene


def _hits(preds, gold, k, graph_constraint):
    g = _gold_set(gold)
    chosen = top_k(preds, k, graph_constraint)
    picked = [(p.scene_id, p.subject_idx, p.object_idx, p.relation)
              for ps in chosen.values() for p in ps]
    return g, picked


def recall_at_k(preds, gold, k: int, graph_constraint: bool = True) -> float:
    g, picked = _hits(preds, gold, k, graph_constraint)
    if not g:
        return 0.0
    return len(g & set(picked)) / len(g)


def mean_recall_at_k(preds, gold, k: int, graph_constraint: bool = True) -> float:
    """Per-relation recall averaged over relations with at least one gold triple."""
    g, picked = _hits(preds, gold, k, graph_constraint)
    hit = g & set(picked)
    per = defaultdict(lambda: [0, 0])
    for t in g:
        per[t[3]][1] += 1
    for t in hit:
        per[t[3]][0] += 1
    if not per:
        return 0.0
    return _mean([h / n for h, n in per.values()])


def precision_at_k(preds, gold, k: int, graph_constraint: bool = True) -> float:
    """Hits over the number of predictions actually in the top-K lists."""
    g, picked = _hits(preds, gold, k, graph_constraint)
    if not picked:
        return 0.0
    return sum(1 for t in picked if t in g) / len(picked)


def mean_precision_at_k(preds, gold, k: int, graph_constraint: bool = True) -> float:
    """Per-relation precision averaged over relations that appear in some top-K list."""
    g, picked = _hits(preds, gold, k, graph_constraint)
    per = defaultdict(lambda: [0, 0])
    for t in picked:
        per[t[3]][1] += 1
        per[t[3]][0] += t in g
    if not per:
        return 0.0
    return _mean([h / n for h, n in per.values()])


METRICS = {
    "R": recall_at_k,
    "mR": mean_recall_at_k,
    "P": precision_at_k,
    "mP": mean_precision_at_k,
}


def label_quality(ds: Dataset, gold: dict) -> float:
    """Fraction of active instances whose argmax label is the gold relation."""
    total = correct = 0
    for scene, rel in ds.instances(active_only=True):
        key = (scene.id, *rel.pair)
        if key not in gold:
            raise KeyError(f"no gold relation for {key}")
        total += 1
        if rel.label is not None and int(np.argmax(rel.label)) == gold[key]:
            correct += 1
    return correct / total if total else 0.0
