"""Distant labeling: align a knowledge base to scenes with annotated objects."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .kb import KnowledgeBase, lookup
from .scene import D_S, DISTANT, HUMAN, Dataset, RelationInstance, Scene, overlaps


@dataclass
class AlignStats:
    considered: int = 0
    skipped_unknown: int = 0
    emitted: int = 0

    def add(self, other: "AlignStats"):
        self.considered += other.considered
        self.skipped_unknown += other.skipped_unknown
        self.emitted += other.emitted


def align_scene(kb: KnowledgeBase, scene: Scene, stats: AlignStats | None = None) -> Scene:
    """Return a copy of ``scene`` whose relations are the distant instances.

    An ordered pair gets an instance only when the two boxes overlap and
    the KB has at least one relation for the category pair.
    """
    stats = stats if stats is not None else AlignStats()
    rels = []
    objs = scene.objects
    for i, si in enumerate(objs):
        for j, oj in enumerate(objs):
            if i == j:
                continue
            stats.considered += 1
            if not (si.category < kb.num_categories and oj.category < kb.num_categories):
                stats.skipped_unknown += 1
                continue
            if not overlaps(si.bbox, oj.bbox):
                continue
            cands = lookup(kb, si.category, oj.category)
            if cands:
                rels.append(RelationInstance(i, j, frozenset(cands), DISTANT))
    stats.emitted += len(rels)
    return Scene(scene.id, scene.width, scene.height, list(objs), rels)


def align_dataset(kb: KnowledgeBase, scenes, threads: int = 1) -> tuple[Dataset, AlignStats]:
    scenes = list(scenes.scenes if isinstance(scenes, Dataset) else scenes)
    per = [AlignStats() for _ in scenes]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(lambda a: align_scene(kb, *a), zip(scenes, per)))
    else:
        out = [align_scene(kb, s, st) for s, st in zip(scenes, per)]
    total = AlignStats()
    for st in per:
        total.add(st)
    return Dataset(out, D_S), total


def coverage(ds: Dataset, dl) -> float:
    """Fraction of human-labeled triples whose relation is among the aligned candidates.

    ``dl`` is a D_L Dataset or a gold mapping ``(scene_id, sub, obj) -> relation``.
    """
    if isinstance(dl, Dataset):
        gold = {}
        for scene, rel in dl.instances():
            if rel.provenance != HUMAN:
                raise ValueError(f"scene {scene.id}: coverage needs human-labeled relations")
            if rel.label is not None:
                gold[(scene.id, *rel.pair)] = int(rel.label.argmax())
            else:
                gold[(scene.id, *rel.pair)] = min(rel.candidates)
        ids = {s.id for s in dl.scenes}
    else:
        gold = dict(dl)
        ids = {k[0] for k in gold}
    cand = {(s.id, *r.pair): r.candidates for s, r in ds.instances()}
    if not ids <= {s.id for s in ds.scenes}:
        raise ValueError(f"scene ids missing from D_S: {sorted(ids - {s.id for s in ds.scenes})[:5]}")
    if not gold:
        return 0.0
    hit = sum(1 for key, r in gold.items() if r in cand.get(key, ()))
    return hit / len(gold)

