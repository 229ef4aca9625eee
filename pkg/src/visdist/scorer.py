"""Trainable relation model f(s, o; theta) over geometric and categorical pair features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scene import NA, Dataset, RelationInstance, Scene, ValidationError

GEOM_DIM = 15
GEOM_NAMES = (
    "sub_x1", "sub_y1", "sub_x2", "sub_y2",
    "obj_x1", "obj_y1", "obj_x2", "obj_y2",
    "dx", "dy", "log_w_ratio", "log_h_ratio", "log_area_ratio",
    "iou", "sub_covered",
)
EPS = 1e-7


class NumericalError(ArithmeticError):
    """Training produced a non-finite loss."""


def feature_dim(num_categories: int) -> int:
    return GEOM_DIM + 2 * num_categories


def featurize_pairs(scene: Scene, pairs, num_categories: int) -> np.ndarray:
    """Feature rows for ordered (subject, object) index pairs of one scene.

    Geometric slice (15): both boxes normalized by image size, center offset
    (subject minus object) normalized, log width/height/area ratios, IoU,
    and the fraction of the subject box covered by the object box. Then a
    subject-category one-hot and an object-category one-hot.
    """
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    boxes = np.array([o.bbox.as_list() for o in scene.objects], dtype=float).reshape(-1, 4)
    cats = np.array([o.category for o in scene.objects], dtype=int)
    if len(pairs) and cats.size and cats.max() >= num_categories:
        raise ValidationError(f"scene {scene.id}: category id outside vocabulary of {num_categories}")
    s, o = boxes[pairs[:, 0]], boxes[pairs[:, 1]]
    scale = np.array([scene.width, scene.height, scene.width, scene.height])
    ws, hs = s[:, 2] - s[:, 0], s[:, 3] - s[:, 1]
    wo, ho = o[:, 2] - o[:, 0], o[:, 3] - o[:, 1]
    iw = np.clip(np.minimum(s[:, 2], o[:, 2]) - np.maximum(s[:, 0], o[:, 0]), 0, None)
    ih = np.clip(np.minimum(s[:, 3], o[:, 3]) - np.maximum(s[:, 1], o[:, 1]), 0, None)
    inter = iw * ih
    area_s, area_o = ws * hs, wo * ho
    geom = np.column_stack([
        s / scale,
        o / scale,
        ((s[:, 0] + s[:, 2]) - (o[:, 0] + o[:, 2])) / (2 * scene.width),
        ((s[:, 1] + s[:, 3]) - (o[:, 1] + o[:, 3])) / (2 * scene.height),
        np.log(ws / wo),
        np.log(hs / ho),
        np.log(area_s / area_o),
        inter / (area_s + area_o - inter),
        inter / area_s,
    ])
    onehots = np.zeros((len(pairs), 2 * num_categories))
    rows = np.arange(len(pairs))
    onehots[rows, cats[pairs[:, 0]]] = 1.0
    onehots[rows, num_categories + cats[pairs[:, 1]]] = 1.0
    return np.hstack([geom, onehots])


def featurize(scene: Scene, instance: RelationInstance, num_categories: int) -> np.ndarray:
    return featurize_pairs(scene, [instance.pair], num_categories)[0]


@dataclass
class RelationScorer:
    """Linear softmax scorer, or a one-hidden-layer ReLU network when ``hidden > 0``.

    ``params`` holds ``W``/``b`` (output layer) and, for the hidden variant,
    ``W1``/``b1``.
    """

    num_categories: int
    num_relations: int
    seed: int = 0
    hidden: int = 0
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, num_categories: int, num_relations: int, seed: int = 0, hidden: int = 0):
        rng = np.random.default_rng(seed)
        d = feature_dim(num_categories)
        params = {}
        if hidden:
            s = 1.0 / math.sqrt(d)
            params["W1"] = rng.uniform(-s, s, size=(d, hidden))
            params["b1"] = np.zeros(hidden)
            d = hidden
        s = 1.0 / math.sqrt(d)
        params["W"] = rng.uniform(-s, s, size=(d, num_relations))
        params["b"] = np.zeros(num_relations)
        return cls(num_categories, num_relations, seed, hidden, params)

    @property
    def feature_dim(self) -> int:
        return feature_dim(self.num_categories)

    def copy(self) -> "RelationScorer":
        return RelationScorer(self.num_categories, self.num_relations, self.seed, self.hidden,
                              {k: v.copy() for k, v in self.params.items()})

    def _forward(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.feature_dim:
            raise ValueError(f"expected features of width {self.feature_dim}, got shape {X.shape}")
        if self.hidden:
            pre = X @ self.params["W1"] + self.params["b1"]
            h = np.maximum(pre, 0.0)
            return h @ self.params["W"] + self.params["b"], (X, pre, h)
        return X @ self.params["W"] + self.params["b"], (X,)

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return self._forward(X[None, :])[0][0]
        return self._forward(X)[0]

    def _backward(self, cache, dZ) -> dict[str, np.ndarray]:
        if self.hidden:
            X, pre, h = cache
            grads = {"W": h.T @ dZ, "b": dZ.sum(0)}
            dpre = (dZ @ self.params["W"].T) * (pre > 0)
            grads["W1"] = X.T @ dpre
            grads["b1"] = dpre.sum(0)
            return grads
        (X,) = cache
        return {"W": X.T @ dZ, "b": dZ.sum(0)}


def masked_softmax(Z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    Z = np.where(mask, Z, -np.inf)
    Z = Z - Z.max(axis=-1, keepdims=True)
    ex = np.where(mask, np.exp(Z), 0.0)
    return ex / ex.sum(axis=-1, keepdims=True)


def _masked_log_softmax(Z, mask):
    Zm = np.where(mask, Z, -np.inf)
    m = Zm.max(axis=-1, keepdims=True)
    lse = m + np.log(np.where(mask, np.exp(Zm - m), 0.0).sum(axis=-1, keepdims=True))
    return np.where(mask, Z - lse, -np.inf)


def _weighted_nll(scorer: RelationScorer, X, mask, weights):
    """Mean over rows of -sum_i w_i log p_i, p the softmax restricted to ``mask``.

    log p is floored at log(EPS); floored terms contribute no gradient.
    """
    mask = np.asarray(mask, dtype=bool)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights[~mask] != 0):
        raise ValueError("target weight outside the normalization mask")
    Z, cache = scorer._forward(X)
    logp = _masked_log_softmax(Z, mask)
    live = mask & (logp > math.log(EPS))
    logp_c = np.where(mask, np.maximum(logp, math.log(EPS)), 0.0)
    n = len(Z)
    loss = -(weights * logp_c).sum() / n
    p = np.where(mask, np.exp(np.where(mask, logp, 0.0)), 0.0)
    w_live = np.where(live, weights, 0.0)
    dZ = (p * w_live.sum(axis=1, keepdims=True) - w_live) / n
    return float(loss), scorer._backward(cache, dZ)


def noise_aware_targets(r, d):
    """Masks and weights for the noise-aware objective.

    Rows with candidates normalize over them and weight by ``r``; rows with
    an all-zero ``d`` are sampled negatives scored against NA on the full
    vocabulary.
    """
    d = np.asarray(d, dtype=float) > 0
    r = np.asarray(r, dtype=float)
    neg = ~d.any(axis=1)
    mask = d.copy()
    mask[neg] = True
    weights = np.where(neg[:, None], 0.0, r)
    weights[neg, NA] = 1.0
    return mask, weights


def loss_noise_aware(scorer: RelationScorer, X, r, d):
    """Probability-weighted negative log-likelihood over candidate sets.

    Returns ``(loss, grads)`` with ``grads`` keyed like ``scorer.params``.
    """
    mask, weights = noise_aware_targets(r, d)
    return _weighted_nll(scorer, X, mask, weights)


def loss_cross_entropy(scorer: RelationScorer, X, targets, mask=None):
    """-mean log f_target with f the softmax over the full vocabulary (or ``mask``)."""
    targets = np.asarray(targets, dtype=float)
    onehot = np.zeros_like(targets)
    onehot[np.arange(len(targets)), targets.argmax(axis=1)] = 1.0
    if mask is None:
        mask = np.ones_like(onehot, dtype=bool)
    return _weighted_nll(scorer, X, mask, onehot)


def predict_candidates(scorer: RelationScorer, scene: Scene, instance: RelationInstance) -> np.ndarray:
    if not instance.candidates:
        raise ValueError(f"pair {instance.pair} has no candidates")
    x = featurize(scene, instance, scorer.num_categories)
    mask = instance.candidate_mask(scorer.num_relations)
    return masked_softmax(scorer.logits(x)[None, :], mask[None, :])[0]


# --- dataset-level batching ------------------------------------------------------


@dataclass
class InstanceTable:
    """Features, candidate masks and labels for every (optionally active) instance."""

    refs: list[tuple[Scene, RelationInstance]]
    X: np.ndarray
    mask: np.ndarray
    scene_ids: list[str]

    @classmethod
    def build(cls, ds: Dataset, num_categories: int, num_relations: int, active_only=True):
        refs, feats = [], []
        for scene in ds.scenes:
            rels = [r for r in scene.relations if r.active or not active_only]
            if not rels:
                continue
            feats.append(featurize_pairs(scene, [r.pair for r in rels], num_categories))
            refs.extend((scene, r) for r in rels)
        X = np.vstack(feats) if feats else np.zeros((0, feature_dim(num_categories)))
        mask = np.zeros((len(refs), num_relations), dtype=bool)
        for k, (_, rel) in enumerate(refs):
            mask[k, sorted(rel.candidates)] = True
        return cls(refs, X, mask, [s.id for s, _ in refs])

    def labels(self, num_relations: int) -> np.ndarray:
        out = np.zeros((len(self.refs), num_relations))
        for k, (_, rel) in enumerate(self.refs):
            if rel.label is not None:
                out[k] = rel.label
        return out


def predict_table(scorer: RelationScorer, table: InstanceTable) -> tuple[np.ndarray, np.ndarray]:
    """Candidate-normalized probabilities and raw logits for every row."""
    if not len(table.refs):
        return np.zeros((0, scorer.num_relations)), np.zeros((0, scorer.num_relations))
    Z = scorer.logits(table.X)
    return masked_softmax(Z, table.mask), Z


@dataclass
class FitParams:
    lr: float = 0.12
    epochs: int = 30
    decay_epochs: tuple[int, ...] = (15, 25)
    neg_ratio: float = 1.0
    batch_size: int = 12
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0


def _negative_pool(ds: Dataset, num_categories: int):
    """Per scene: features of ordered pairs that carry no relation instance."""
    pools = []
    for scene in ds.scenes:
        taken = {r.pair for r in scene.relations}
        n_pos = sum(1 for r in scene.relations if r.active and r.label is not None)
        n = len(scene.objects)
        free = [(i, j) for i in range(n) for j in range(n) if i != j and (i, j) not in taken]
        if n_pos and free:
            pools.append((featurize_pairs(scene, free, num_categories), n_pos))
    return pools


def fit(scorer: RelationScorer, ds: Dataset, loss: str = "noise", params: FitParams | None = None):
    """Minibatch SGD with momentum on the labeled, active instances of ``ds``.

    Optimization runs on standardized geometric features (per-call mean and
    std of the training rows); the result is folded back so the scorer stays linear in
    the raw features.

    ``loss`` is ``"noise"`` (soft labels over candidate sets) or ``"ce"``
    (cross-entropy on the argmax label over the full vocabulary). Each epoch
    resamples NA negatives from unlabeled pairs of the same scenes, up to
    ``neg_ratio`` per positive. Returns a new scorer and the per-epoch mean
    loss.
    """
    params = params or FitParams()
    if params.lr <= 0:
        raise ValueError("lr must be positive")
    if loss not in ("noise", "ce"):
        raise ValueError(f"unknown loss {loss!r}")
    scorer = scorer.copy()
    R = scorer.num_relations
    table = InstanceTable.build(ds, scorer.num_categories, R)
    keep = [k for k, (_, rel) in enumerate(table.refs) if rel.label is not None]
    if not keep:
        raise ValueError("fit needs at least one labeled active instance")
    Xp = table.X[keep]
    labels = table.labels(R)[keep]
    if loss == "noise":
        Mp, Wp = table.mask[keep], labels
    else:
        Mp = np.ones_like(table.mask[keep])
        Wp = np.zeros_like(labels)
        Wp[np.arange(len(keep)), labels.argmax(axis=1)] = 1.0
    pools = _negative_pool(ds, scorer.num_categories)
    if params.epochs == 0:
        return scorer, []
    mu, sd = _feature_stats(Xp, pools)
    _to_standard(scorer, mu, sd)
    Xp = (Xp - mu) / sd
    pools = [((feats - mu) / sd, n_pos) for feats, n_pos in pools]
    rng = np.random.default_rng(params.seed)
    velocity = {k: np.zeros_like(v) for k, v in scorer.params.items()}
    curve = []
    na_row = np.zeros(R)
    na_row[NA] = 1.0
    for epoch in range(params.epochs):
        negs = []
        for feats, n_pos in pools:
            k = min(len(feats), math.ceil(params.neg_ratio * n_pos))
            if k:
                negs.append(feats[rng.choice(len(feats), size=k, replace=False)])
        Xn = np.vstack(negs) if negs else np.zeros((0, Xp.shape[1]))
        X = np.vstack([Xp, Xn])
        M = np.vstack([Mp, np.ones((len(Xn), R), dtype=bool)])
        W = np.vstack([Wp, np.tile(na_row, (len(Xn), 1))])
        order = rng.permutation(len(X))
        lr = params.lr * 0.1 ** sum(1 for e in params.decay_epochs if epoch >= e)
        total = 0.0
        for b, start in enumerate(range(0, len(X), params.batch_size)):
            idx = order[start:start + params.batch_size]
            value, grads = _weighted_nll(scorer, X[idx], M[idx], W[idx])
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch} batch {b}")
            total += value * len(idx)
            for name, g in grads.items():
                v = velocity[name]
                v *= params.momentum
                v += g + params.weight_decay * scorer.params[name]
                scorer.params[name] -= lr * v
        curve.append(total / len(X))
    _from_standard(scorer, mu, sd)
    return scorer, curve


def _feature_stats(Xp, pools):
    """Mean/std of the geometric slice; category one-hots are left as they are."""
    X = np.vstack([Xp] + [feats for feats, _ in pools])
    mu = np.zeros(X.shape[1])
    sd = np.ones(X.shape[1])
    mu[:GEOM_DIM] = X[:, :GEOM_DIM].mean(axis=0)
    sd[:GEOM_DIM] = X[:, :GEOM_DIM].std(axis=0)
    sd[sd < 1e-12] = 1.0
    return mu, sd


def _first_layer(scorer):
    return ("W1", "b1") if scorer.hidden else ("W", "b")


def _to_standard(scorer, mu, sd):
    # x W + b == ((x - mu) / sd) (sd W) + (b + mu W)
    w, b = _first_layer(scorer)
    scorer.params[b] = scorer.params[b] + mu @ scorer.params[w]
    scorer.params[w] = scorer.params[w] * sd[:, None]


def _from_standard(scorer, mu, sd):
    w, b = _first_layer(scorer)
    scorer.params[w] = scorer.params[w] / sd[:, None]
    scorer.params[b] = scorer.params[b] - mu @ scorer.params[w]


# --- checkpoint --------------------------------------------------------------------

_CKPT_HEADER = "#scorerv1"


def dumps_scorer(scorer: RelationScorer) -> str:
    lines = [
        _CKPT_HEADER,
        f"num_categories={scorer.num_categories} num_relations={scorer.num_relations} "
        f"feature_dim={scorer.feature_dim} hidden={scorer.hidden} seed={scorer.seed}",
    ]
    for name in sorted(scorer.params):
        arr = np.atleast_2d(scorer.params[name])
        lines.append(f"{name} {arr.shape[0]} {arr.shape[1]} {scorer.params[name].ndim}")
        lines += [" ".join(format(float(x), ".17g") for x in row) for row in arr]
    return "\n".join(lines) + "\n"


def save_scorer(scorer: RelationScorer, path) -> None:
    Path(path).write_text(dumps_scorer(scorer), encoding="utf-8")


def loads_scorer(text: str) -> RelationScorer:
    lines = text.splitlines()
    if not lines or lines[0] != _CKPT_HEADER:
        raise ValidationError("not a scorer checkpoint")
    try:
        meta = dict(kv.split("=") for kv in lines[1].split())
        scorer = RelationScorer(int(meta["num_categories"]), int(meta["num_relations"]),
                                int(meta["seed"]), int(meta["hidden"]))
        pos = 2
        while pos < len(lines):
            name, rows, cols, ndim = lines[pos].split()
            rows, cols = int(rows), int(cols)
            block = [[float(x) for x in ln.split()] for ln in lines[pos + 1:pos + 1 + rows]]
            arr = np.array(block, dtype=float).reshape(rows, cols)
            scorer.params[name] = arr[0] if int(ndim) == 1 else arr
            pos += 1 + rows
    except (ValueError, KeyError, IndexError) as exc:
        raise ValidationError(f"malformed scorer checkpoint ({exc})") from None
    if int(meta["feature_dim"]) != scorer.feature_dim:
        raise ValidationError("checkpoint feature_dim does not match its vocabulary")
    return scorer


def load_scorer(path) -> RelationScorer:
    return loads_scorer(Path(path).read_text(encoding="utf-8"))
