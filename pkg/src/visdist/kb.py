"""Commonsense knowledge base of (subject, relation, object) triples mined from captions."""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

NA_NAME = "__NA__"
HEADER = "#kbv1"

DETERMINERS = {
    "a", "an", "the", "some", "any", "this", "that", "these", "those", "his", "her",
    "their", "its", "my", "our", "your", "one", "two", "three", "four", "five",
    "several", "many", "few", "each", "every", "another", "other",
}
AUXILIARIES = {"is", "are", "was", "were", "be", "been", "being", "and", "while", "who", "which"}
ADJECTIVES = {
    "young", "old", "little", "small", "big", "large", "tall", "short", "white", "black",
    "red", "blue", "green", "yellow", "brown", "gray", "grey", "orange", "pink", "purple",
    "beautiful", "happy", "cute", "pretty", "empty", "full", "wooden", "metal", "new",
    "dark", "bright", "sunny", "cloudy", "wet", "dry", "long", "huge", "tiny", "busy",
}
STOP_WORDS = DETERMINERS | AUXILIARIES | ADJECTIVES

VERBS = {
    "rides", "ride", "holds", "hold", "wears", "wear", "has", "have", "eats", "eat",
    "carries", "carry", "watches", "watch", "sits", "sit", "stands", "stand", "walks",
    "walk", "plays", "play", "uses", "use", "covers", "cover", "throws", "throw",
    "catches", "catch", "drinks", "drink", "pulls", "pull", "flies", "fly", "looks",
    "look", "lies", "lie", "hangs", "hang", "parks", "park", "leans", "lean",
}
# Words ending in -ing that are nouns far more often than verbs.
ING_NOUNS = {"building", "ceiling", "painting", "clothing", "wedding", "evening", "morning",
             "ring", "king", "thing", "string", "wing", "spring", "swing", "sibling", "ping"}
PREPOSITIONS = {
    "on", "in", "at", "with", "under", "above", "below", "near", "behind", "beside",
    "by", "inside", "over", "along", "across", "against", "into", "onto", "of",
    "beneath", "underneath", "outside", "around", "through", "between", "atop",
}

_PUNCT = string.punctuation + "“”‘’"


@dataclass(frozen=True)
class RelationTriple:
    subject: str
    relation: str
    object: str
    count: int = 1

    def __post_init__(self):
        for name in (self.subject, self.relation, self.object):
            if not name or name != name.strip():
                raise ValueError(f"bad triple field {name!r}")
        if self.count < 0:
            raise ValueError("negative triple count")

    @property
    def key(self) -> tuple[str, str, str]:
        return self.subject, self.relation, self.object


def _tag(token: str) -> str:
    if token in PREPOSITIONS:
        return "P"
    if token in VERBS or (token.endswith("ing") and len(token) > 4 and token not in ING_NOUNS):
        return "V"
    return "N"


def extract_triples(caption: str) -> list[RelationTriple]:
    """Pattern-match N V P N, N V N and N P N over the caption's content words.

    Stop words (determiners, auxiliaries, common adjectives) are dropped
    first, so N always binds to the nearest content word.
    """
    tokens = [t.strip(_PUNCT) for t in caption.lower().split()]
    tokens = [t for t in tokens if t and t not in STOP_WORDS]
    tags = [_tag(t) for t in tokens]
    out = []
    i = 0
    while i < len(tokens) - 2:
        if tags[i] != "N":
            i += 1
            continue
        if tags[i + 1] == "V":
            if i + 3 < len(tokens) and tags[i + 2] == "P" and tags[i + 3] == "N":
                out.append(RelationTriple(tokens[i], f"{tokens[i + 1]} {tokens[i + 2]}", tokens[i + 3]))
                i += 3
                continue
            if tags[i + 2] == "N":
                out.append(RelationTriple(tokens[i], tokens[i + 1], tokens[i + 2]))
                i += 2
                continue
        elif tags[i + 1] == "P" and tags[i + 2] == "N":
            out.append(RelationTriple(tokens[i], tokens[i + 1], tokens[i + 2]))
            i += 2
            continue
        i += 1
    return out


def merge_plurals(triples: Iterable[RelationTriple]) -> list[RelationTriple]:
    """Map a category ending in "s" onto its stem when the stem is also a category."""
    triples = list(triples)
    names = {t.subject for t in triples} | {t.object for t in triples}

    def single(word: str) -> str:
        if word.endswith("s") and len(word) > 1 and word[:-1] in names:
            return word[:-1]
        return word

    return [RelationTriple(single(t.subject), t.relation, single(t.object), t.count) for t in triples]


@dataclass
class KnowledgeBase:
    categories: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=lambda: [NA_NAME])
    pair_index: dict[tuple[int, int], dict[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        self._cat_id = {c: i for i, c in enumerate(self.categories)}
        self._rel_id = {r: i for i, r in enumerate(self.relations)}

    @property
    def num_categories(self) -> int:
        return len(self.categories)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def category_id(self, name: str) -> int:
        return self._cat_id[name]

    def relation_id(self, name: str) -> int:
        return self._rel_id[name]

    def count(self, subj: int, rel: int, obj: int) -> int:
        return self.pair_index.get((subj, obj), {}).get(rel, 0)

    def triples(self) -> list[RelationTriple]:
        out = [
            RelationTriple(self.categories[s], self.relations[r], self.categories[o], n)
            for (s, o), rels in self.pair_index.items()
            for r, n in rels.items()
        ]
        out.sort(key=lambda t: t.key)
        return out


def build_kb(
    triples: Iterable[RelationTriple],
    min_count: int = 2,
    categories: Iterable[str] = (),
    relations: Iterable[str] = (),
) -> KnowledgeBase:
    """Merge triples by summing counts and index the survivors.

    Extra ``categories``/``relations`` are added to the vocabularies even when
    no surviving triple uses them.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter = Counter()
    for t in triples:
        counts[t.key] += t.count
    kept = {k: n for k, n in counts.items() if n >= min_count}
    cats = sorted({s for s, _, _ in kept} | {o for _, _, o in kept} | set(categories))
    rels = sorted(({r for _, r, _ in kept} | set(relations)) - {NA_NAME})
    kb = KnowledgeBase(cats, [NA_NAME] + rels)
    for (s, r, o), n in sorted(kept.items()):
        kb.pair_index.setdefault((kb.category_id(s), kb.category_id(o)), {})[kb.relation_id(r)] = n
    return kb


def lookup(kb: KnowledgeBase, subj: int, obj: int) -> set[int]:
    """Candidate relation ids for an ordered category pair; never contains NA."""
    n = kb.num_categories
    if not (0 <= subj < n and 0 <= obj < n):
        raise IndexError(f"category id out of range: {(subj, obj)} with {n} categories")
    return set(kb.pair_index.get((subj, obj), {}))


def kb_stats(kb: KnowledgeBase) -> dict:
    entries = sum(len(v) for v in kb.pair_index.values())
    pairs = len(kb.pair_index)
    return {
        "num_categories": kb.num_categories,
        "num_relations": kb.num_relations,
        "num_triples": entries,
        "avg_relations_per_pair": entries / pairs if pairs else 0,
    }


# --- TSV format ------------------------------------------------------------------


def dumps_kb(kb: KnowledgeBase) -> str:
    """Serialize as ``#kbv1`` plus sorted TSV triples.

    Vocabulary entries that no triple mentions are written as ``#category`` /
    ``#relation`` comment lines so ids survive a round trip.
    """
    triples = kb.triples()
    used_c = {t.subject for t in triples} | {t.object for t in triples}
    used_r = {t.relation for t in triples}
    lines = [HEADER]
    lines += [f"#category\t{c}" for c in kb.categories if c not in used_c]
    lines += [f"#relation\t{r}" for r in kb.relations[1:] if r not in used_r]
    lines += [f"{t.subject}\t{t.relation}\t{t.object}\t{t.count}" for t in triples]
    return "\n".join(lines) + "\n"


def save_kb(kb: KnowledgeBase, path) -> None:
    Path(path).write_text(dumps_kb(kb), encoding="utf-8")


def load_kb(path) -> KnowledgeBase:
    from .scene import ValidationError

    triples, cats, rels = [], [], []
    with open(path, encoding="utf-8") as fh:
        lineno = 0
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if lineno == 1:
                if line != HEADER:
                    raise ValidationError(f"line 1: expected {HEADER} header")
                continue
            if not line:
                continue
            parts = line.split("\t")
            if parts[0] == "#category" and len(parts) == 2:
                cats.append(parts[1])
                continue
            if parts[0] == "#relation" and len(parts) == 2:
                rels.append(parts[1])
                continue
            if line.startswith("#"):
                continue
            try:
                s, r, o, n = parts
                triples.append(RelationTriple(s, r, o, int(n)))
            except ValueError as exc:
                raise ValidationError(f"line {lineno}: malformed triple ({exc})") from None
    if lineno == 0:
        raise ValidationError(f"empty file; expected {HEADER} header")
    return build_kb(triples, min_count=1, categories=cats, relations=rels)
