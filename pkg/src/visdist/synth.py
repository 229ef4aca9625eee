"""Synthetic scenes with geometric ground-truth relations and noisy distant candidates.

Every ordered category pair has one true relation, realized by the box
geometry of each overlapping pair in a scene. The knowledge base holds the
true triples with their corpus counts plus spurious extra relations, so
distant candidate sets are supersets of the truth.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .align import align_dataset
from .kb import KnowledgeBase, RelationTriple, build_kb
from .scene import (
    D_L, D_S, HUMAN, BoundingBox, Dataset, ObjectInstance, RelationInstance, Scene, contains,
    overlaps,
)

RULE_ORDER = ("above", "below", "left-of", "right-of", "overlapping", "inside")
CONVERSE = {
    "above": "below",
    "below": "above",
    "left-of": "right-of",
    "right-of": "left-of",
    "overlapping": "overlapping",
    "inside": "overlapping",
}
MAX_OBJECTS = 8  # four cells, two objects per cell


@dataclass
class SynthConfig:
    num_scenes: int = 2000
    num_categories: int = 10
    num_relations: int = 6
    objects_per_scene: tuple[int, int] = (2, 4)
    seed: int = 0
    extra_candidate_rate: float = 0.22
    spurious_strength: float = 1.5
    image_size: int = 120
    center_tolerance: float = 0.06
    zipf: float = 0.0

    def __post_init__(self):
        if not 2 <= self.num_relations <= len(RULE_ORDER):
            raise ValueError(f"num_relations must be in [2, {len(RULE_ORDER)}]")
        if self.num_categories < 2:
            raise ValueError("need at least two categories")
        lo, hi = self.objects_per_scene
        if not 0 <= lo <= hi <= MAX_OBJECTS:
            raise ValueError(f"objects_per_scene must satisfy 0 <= lo <= hi <= {MAX_OBJECTS}")
        if hi < 2:
            raise ValueError("no scene can hold an overlapping pair; allow at least 2 objects "
                             "per scene so boxes can overlap")
        if not 0.0 <= self.extra_candidate_rate <= 1.0:
            raise ValueError("extra_candidate_rate must lie in [0, 1]")
        if self.num_scenes < 1:
            raise ValueError("num_scenes must be positive")

    @property
    def relation_names(self) -> tuple[str, ...]:
        return RULE_ORDER[: self.num_relations]

    @property
    def category_names(self) -> list[str]:
        width = len(str(self.num_categories - 1))
        return [f"cat{i:0{width}d}" for i in range(self.num_categories)]


def geometry_relation(sub: BoundingBox, obj: BoundingBox, width: float, height: float,
                      tol: float) -> str:
    """Ground-truth rule: containment, else center offset direction, else "overlapping"."""
    if contains(obj, sub):
        return "inside"
    (sx, sy), (ox, oy) = sub.center, obj.center
    dx, dy = (sx - ox) / width, (sy - oy) / height
    if max(abs(dx), abs(dy)) < tol:
        return "overlapping"
    if abs(dy) >= abs(dx):
        return "above" if dy < 0 else "below"
    return "left-of" if dx < 0 else "right-of"


def relation_table(config: SynthConfig) -> dict[tuple[int, int], str]:
    """True relation for every ordered pair of distinct categories."""
    rng = np.random.default_rng([config.seed, 0])
    names = config.relation_names
    allowed = [r for r in names if CONVERSE[r] in names]
    w = 1.0 / np.arange(1, len(allowed) + 1) ** config.zipf
    w /= w.sum()
    table = {}
    for a in range(config.num_categories):
        for b in range(a + 1, config.num_categories):
            r = allowed[rng.choice(len(allowed), p=w)]
            table[(a, b)] = r
            table[(b, a)] = CONVERSE[r]
    return table


def _place_pair(rng, rel: str, cell: tuple[int, int], config: SynthConfig):
    """Integer boxes (subject, object) inside a cell realizing ``rel`` in both directions."""
    S = config.image_size // 2
    W = H = config.image_size
    tol_px = config.center_tolerance * config.image_size
    x0, y0 = cell
    for _ in range(500):
        wo, ho = rng.integers(int(0.25 * S), int(0.6 * S) + 1, size=2)
        if rel == "inside":
            ws = rng.integers(max(2, int(0.3 * wo)), int(0.8 * wo) + 1)
            hs = rng.integers(max(2, int(0.3 * ho)), int(0.8 * ho) + 1)
        else:
            ws, hs = rng.integers(int(0.2 * S), int(0.6 * S) + 1, size=2)
        if rel in ("inside", "overlapping"):
            dx, dy = rng.uniform(-tol_px, tol_px, size=2)
        else:
            reach = (hs + ho) / 2 if rel in ("above", "below") else (ws + wo) / 2
            main = rng.uniform(tol_px, reach)
            side = rng.uniform(-main, main)
            dx, dy = {"above": (side, -main), "below": (side, main),
                      "left-of": (-main, side), "right-of": (main, side)}[rel]
        ox1 = rng.integers(x0, x0 + S - wo + 1)
        oy1 = rng.integers(y0, y0 + S - ho + 1)
        cx, cy = ox1 + wo / 2 + dx, oy1 + ho / 2 + dy
        sx1, sy1 = int(round(cx - ws / 2)), int(round(cy - hs / 2))
        if not (x0 <= sx1 and sx1 + ws <= x0 + S and y0 <= sy1 and sy1 + hs <= y0 + S):
            continue
        sub = BoundingBox(sx1, sy1, sx1 + int(ws), sy1 + int(hs))
        obj = BoundingBox(int(ox1), int(oy1), int(ox1 + wo), int(oy1 + ho))
        if sub == obj or not overlaps(sub, obj):
            continue
        if (geometry_relation(sub, obj, W, H, config.center_tolerance) == rel
                and geometry_relation(obj, sub, W, H, config.center_tolerance) == CONVERSE[rel]):
            return sub, obj
    raise RuntimeError(f"could not place a pair for relation {rel!r}; enlarge the image")


def _single_box(rng, cell, config: SynthConfig) -> BoundingBox:
    S = config.image_size // 2
    w, h = rng.integers(int(0.2 * S), int(0.6 * S) + 1, size=2)
    x1 = rng.integers(cell[0], cell[0] + S - w + 1)
    y1 = rng.integers(cell[1], cell[1] + S - h + 1)
    return BoundingBox(int(x1), int(y1), int(x1 + w), int(y1 + h))


def generate_scenes(config: SynthConfig, start: int = 0, count: int | None = None):
    """Scenes ``start .. start+count`` as (id, boxes, category indices) without relations.

    Scene ``i`` draws from its own seed stream, so any slice is reproducible
    on its own.
    """
    table = relation_table(config)
    count = config.num_scenes if count is None else count
    S = config.image_size // 2
    cells = [(0, 0), (S, 0), (0, S), (S, S)]
    lo, hi = config.objects_per_scene
    out = []
    for idx in range(start, start + count):
        rng = np.random.default_rng([config.seed, 1, idx])
        n = int(rng.integers(lo, hi + 1))
        order = rng.permutation(len(cells))
        boxes, cats = [], []
        for c in range(n // 2):
            # place in canonical order: "inside" has no converse that maps back to it
            a, b = sorted(int(x) for x in rng.choice(config.num_categories, size=2, replace=False))
            sub, obj = _place_pair(rng, table[(a, b)], cells[order[c]], config)
            pair = [(sub, a), (obj, b)]
            if rng.random() < 0.5:
                pair.reverse()
            for box, cat in pair:
                boxes.append(box)
                cats.append(cat)
        if n % 2:
            boxes.append(_single_box(rng, cells[order[n // 2]], config))
            cats.append(int(rng.integers(config.num_categories)))
        out.append((f"s{idx:06d}", boxes, cats))
    return out


@dataclass
class SynthCorpus:
    config: SynthConfig
    kb: KnowledgeBase
    scenes: list[Scene]
    gold: dict = field(default_factory=dict)
    ds: Dataset | None = None


def _to_scenes(raw, kb: KnowledgeBase, config: SynthConfig):
    names = config.category_names
    scenes, gold = [], {}
    W = H = config.image_size
    for sid, boxes, cats in raw:
        objs = [ObjectInstance(b, kb.category_id(names[c])) for b, c in zip(boxes, cats)]
        scenes.append(Scene(sid, W, H, objs))
        for i, bi in enumerate(boxes):
            for j, bj in enumerate(boxes):
                if i != j and overlaps(bi, bj):
                    rel = geometry_relation(bi, bj, W, H, config.center_tolerance)
                    gold[(sid, i, j)] = kb.relation_id(rel)
    return scenes, gold


def generate(config: SynthConfig | None = None) -> SynthCorpus:
    config = config or SynthConfig()
    raw = generate_scenes(config)
    names = config.category_names
    W = H = config.image_size
    counts: Counter = Counter()
    for _, boxes, cats in raw:
        for i, bi in enumerate(boxes):
            for j, bj in enumerate(boxes):
                if i != j and overlaps(bi, bj):
                    rel = geometry_relation(bi, bj, W, H, config.center_tolerance)
                    counts[(names[cats[i]], rel, names[cats[j]])] += 1
    if not counts:
        raise ValueError("configuration produced no overlapping pairs; use larger boxes or "
                         "more objects per scene")
    true_by_pair = {(s, o): (r, n) for (s, r, o), n in counts.items()}
    rng = np.random.default_rng([config.seed, 2])
    triples = [RelationTriple(s, r, o, n) for (s, r, o), n in sorted(counts.items())]
    for (s, o), (true_rel, n) in sorted(true_by_pair.items()):
        for r in config.relation_names:
            if r == true_rel or rng.random() >= config.extra_candidate_rate:
                continue
            c = max(1, int(round(rng.uniform(0, config.spurious_strength) * n)))
            triples.append(RelationTriple(s, r, o, c))
    kb = build_kb(triples, min_count=1, categories=names, relations=config.relation_names)
    scenes, gold = _to_scenes(raw, kb, config)
    ds, _ = align_dataset(kb, scenes)
    return SynthCorpus(config, kb, scenes, gold, ds)


def heldout(corpus: SynthCorpus, count: int) -> tuple[list[Scene], dict]:
    """Fresh scenes from the same category-relation table, disjoint from the corpus."""
    raw = generate_scenes(corpus.config, start=corpus.config.num_scenes, count=count)
    return _to_scenes(raw, corpus.kb, corpus.config)


def split(ds: Dataset, human_fraction: float, seed: int, gold: dict,
          num_relations: int) -> tuple[Dataset, Dataset]:
    """Scene-level split into a human-labeled D_L (gold one-hot labels) and the remaining D_S."""
    if not 0.0 < human_fraction < 1.0:
        raise ValueError("human_fraction must lie in (0, 1)")
    n = len(ds.scenes)
    k = int(round(human_fraction * n))
    if k == 0 or k == n:
        raise ValueError("split leaves one side empty")
    rng = np.random.default_rng([seed, 3])
    human = set(rng.permutation(n)[:k].tolist())
    by_scene: dict[str, list] = {}
    for (sid, i, j), r in sorted(gold.items()):
        by_scene.setdefault(sid, []).append((i, j, r))
    dl, rest = [], []
    for idx, scene in enumerate(ds.scenes):
        if idx not in human:
            rest.append(scene)
            continue
        rels = []
        for i, j, r in by_scene.get(scene.id, []):
            lab = np.zeros(num_relations)
            lab[r] = 1.0
            rels.append(RelationInstance(i, j, frozenset([r]), HUMAN, lab))
        dl.append(Scene(scene.id, scene.width, scene.height, list(scene.objects), rels))
    return Dataset(dl, D_L), Dataset(rest, D_S)
