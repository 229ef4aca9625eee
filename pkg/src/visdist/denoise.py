"""EM denoising of distant relation labels, distantly supervised and semi-supervised."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kb import KnowledgeBase
from .scene import NA, Dataset
from .scorer import FitParams, InstanceTable, RelationScorer, fit, predict_table
from .signal import estimate_e


@dataclass
class EmConfig:
    omega: float = 0.9
    discard_fraction: float = 0.75
    iterations: int = 2
    use_external_signal: bool = True
    seed: int = 0
    hidden: int = 0
    fit: FitParams = field(default_factory=lambda: FitParams(lr=0.12, weight_decay=2e-2))
    finetune: FitParams = field(default_factory=lambda: FitParams(
        lr=0.012, epochs=10, decay_epochs=(5,), weight_decay=2e-2))

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if not 0.0 <= self.discard_fraction < 1.0:
            raise ValueError("discard_fraction must lie in [0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.use_external_signal and self.omega != 1.0:
            raise ValueError("omega must be 1 when no external signal is used")

    @classmethod
    def semi(cls, **kw) -> "EmConfig":
        kw.setdefault("discard_fraction", 0.0)
        kw.setdefault("use_external_signal", False)
        kw.setdefault("omega", 1.0)
        kw.setdefault("fit", FitParams(lr=0.12, epochs=60, decay_epochs=(40, 55),
                                       neg_ratio=3.0, weight_decay=0.0))
        kw.setdefault("finetune", FitParams(lr=0.012, epochs=10, decay_epochs=(5,),
                                            neg_ratio=3.0, weight_decay=0.0))
        return cls(**kw)


@dataclass
class IterationRecord:
    iteration: int
    active: int
    eliminated: int
    mean_entropy: float
    label_accuracy: float | None
    loss_curve: list[float]


@dataclass
class EmTrace:
    records: list[IterationRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "active", "eliminated", "mean_entropy", "label_accuracy",
                    "final_loss", "loss_curve"])
        for r in self.records:
            w.writerow([
                r.iteration, r.active, r.eliminated, repr(r.mean_entropy),
                "" if r.label_accuracy is None else repr(r.label_accuracy),
                repr(r.loss_curve[-1]) if r.loss_curve else "",
                ";".join(repr(x) for x in r.loss_curve),
            ])
        return buf.getvalue()


def _entropy(ds: Dataset) -> float:
    ents = []
    for _, rel in ds.instances(active_only=True):
        p = rel.label[rel.label > 0]
        ents.append(float(-(p * np.log(p)).sum()))
    return float(np.mean(ents)) if ents else 0.0


def _accuracy(ds: Dataset, gold) -> float | None:
    if gold is None:
        return None
    from .evaluation import label_quality

    return label_quality(ds, gold)


def e_step_initial(ds: Dataset, num_relations: int, signal=None) -> Dataset:
    """Set r^1: the signal distribution e, or uniform over candidates without a signal."""
    for scene, rel in ds.instances():
        if not rel.candidates:
            raise ValueError(f"scene {scene.id}: pair {rel.pair} has no candidates")
        if signal is not None:
            rel.label = estimate_e(signal, scene, rel, num_relations)
        else:
            lab = np.zeros(num_relations)
            idx = sorted(rel.candidates)
            lab[idx] = 1.0 / len(idx)
            rel.label = lab
    return ds


def e_step(ds: Dataset, scorer: RelationScorer, signal=None, omega: float = 1.0) -> Dataset:
    """r^t = omega * f + (1 - omega) * e on active instances (r^t = f without a signal)."""
    table = InstanceTable.build(ds, scorer.num_categories, scorer.num_relations)
    f, _ = predict_table(scorer, table)
    for k, (scene, rel) in enumerate(table.refs):
        if signal is None or omega == 1.0:
            rel.label = f[k].copy()
        else:
            e = estimate_e(signal, scene, rel, scorer.num_relations)
            rel.label = omega * f[k] + (1.0 - omega) * e
    return ds


def eliminate_noisy(ds: Dataset, scorer: RelationScorer, discard_fraction: float) -> int:
    """Deactivate the active instances with the highest raw NA logits.

    Removes ceil(discard_fraction * N_active); equal logits are removed in
    (scene id, subject, object) order. Returns the number removed.
    """
    table = InstanceTable.build(ds, scorer.num_categories, scorer.num_relations)
    n = len(table.refs)
    k = math.ceil(discard_fraction * n - 1e-9)
    if k <= 0:
        return 0
    _, Z = predict_table(scorer, table)
    na = Z[:, NA]
    order = sorted(range(n), key=lambda i: (-na[i], table.scene_ids[i], *table.refs[i][1].pair))
    for i in order[:k]:
        table.refs[i][1].active = False
    return k


def m_step(ds: Dataset, scorer_prev: RelationScorer, params: FitParams):
    return fit(scorer_prev, ds, "noise", params)


def discretize(r) -> np.ndarray:
    """One-hot at argmax; ties go to the lowest relation id."""
    r = np.asarray(r, dtype=float)
    if not np.any(r > 0):
        raise ValueError("cannot discretize a label with no candidate mass")
    out = np.zeros_like(r)
    out[int(np.argmax(r))] = 1.0
    return out


def _seeded(params: FitParams, seed: int) -> FitParams:
    return replace(params, seed=seed)


def run_distant(ds: Dataset, kb: KnowledgeBase, signal=None, config: EmConfig | None = None,
                gold=None):
    """Distantly supervised EM: initial E and M, then (iterations - 1) rounds of E, eliminate, M.

    ``ds`` is relabeled in place. ``gold`` (optional) adds label accuracy to the trace.
    """
    config = config or EmConfig()
    if config.use_external_signal and signal is None:
        raise ValueError("config asks for an external signal but none was given")
    signal = signal if config.use_external_signal else None
    R = kb.num_relations
    trace = EmTrace()

    e_step_initial(ds, R, signal)
    active = ds.num_active()
    if active == 0:
        raise ValueError("iteration 1: no active instances to train on")
    scorer = RelationScorer.init(kb.num_categories, R, config.seed, config.hidden)
    entropy, acc = _entropy(ds), _accuracy(ds, gold)
    scorer, curve = m_step(ds, scorer, _seeded(config.fit, config.seed))
    trace.records.append(IterationRecord(1, active, 0, entropy, acc, curve))

    for t in range(2, config.iterations + 1):
        e_step(ds, scorer, signal, config.omega)
        removed = eliminate_noisy(ds, scorer, config.discard_fraction)
        active = ds.num_active()
        if active == 0:
            raise ValueError(f"iteration {t}: elimination left no active instances")
        entropy, acc = _entropy(ds), _accuracy(ds, gold)
        scorer, curve = m_step(ds, scorer, _seeded(config.finetune, config.seed + t - 1))
        trace.records.append(IterationRecord(t, active, removed, entropy, acc, curve))
    return scorer, trace


def run_semi(ds: Dataset, dl: Dataset, kb: KnowledgeBase, config: EmConfig | None = None,
             gold=None):
    """Semi-supervised EM: supervised init on D_L, then E, eliminate, discretize, M1, M2.

    M1 pre-trains from scratch on the discretized D_S labels, M2 fine-tunes
    on D_L at the fine-tune learning rate. Returns the last M2 scorer.
    """
    config = config or EmConfig.semi()
    if not any(True for _ in dl.instances()):
        raise ValueError("run_semi needs a non-empty human-labeled dataset")
    R = kb.num_relations
    trace = EmTrace()
    init = RelationScorer.init(kb.num_categories, R, config.seed, config.hidden)
    theta2, curve = fit(init, dl, "ce", _seeded(config.fit, config.seed))
    trace.records.append(IterationRecord(0, 0, 0, 0.0, None, curve))

    for t in range(1, config.iterations + 1):
        e_step(ds, theta2)
        removed = eliminate_noisy(ds, theta2, config.discard_fraction)
        for _, rel in ds.instances(active_only=True):
            rel.label = discretize(rel.label)
        active = ds.num_active()
        entropy, acc = _entropy(ds), _accuracy(ds, gold)
        if active:
            fresh = RelationScorer.init(kb.num_categories, R, config.seed + t, config.hidden)
            theta1, _ = fit(fresh, ds, "ce", _seeded(config.fit, config.seed + t))
        else:
            theta1 = theta2
        theta2, curve = fit(theta1, dl, "ce", _seeded(config.finetune, config.seed + t))
        trace.records.append(IterationRecord(t, active, removed, entropy, acc, curve))
    return theta2, trace
