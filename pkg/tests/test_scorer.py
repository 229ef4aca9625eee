import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from visdist.scene import D_S, DISTANT, Dataset, RelationInstance, Scene
from visdist.scorer import (
    GEOM_DIM, GEOM_NAMES, FitParams, NumericalError, RelationScorer, dumps_scorer, featurize,
    feature_dim, fit, load_scorer, loss_cross_entropy, loss_noise_aware, loads_scorer,
    predict_candidates, save_scorer,
)

from conftest import make_scene

C, R = 3, 5


def _inst(i=0, j=1, cands=(1, 2)):
    return RelationInstance(i, j, frozenset(cands), DISTANT)


def test_geometric_slice_names():
    assert len(GEOM_NAMES) == GEOM_DIM == 15
    assert feature_dim(C) == 15 + 2 * C


def test_identical_boxes():
    scene = make_scene([(10, 20, 30, 60), (10, 20, 30, 60)], [0, 2])
    x = dict(zip(GEOM_NAMES, featurize(scene, _inst(), C)))
    for k in ("dx", "dy", "log_w_ratio", "log_h_ratio", "log_area_ratio"):
        assert x[k] == 0.0
    assert x["iou"] == 1.0 and x["sub_covered"] == 1.0


def test_left_of_sign():
    scene = make_scene([(0, 0, 10, 10), (20, 0, 30, 10)], [0, 1])
    x = dict(zip(GEOM_NAMES, featurize(scene, _inst(), C)))
    assert x["dx"] < 0 and x["dy"] == 0


def test_hand_computed_fixture():
    # subject (10,20,30,60), object (20,40,60,80) in a 100x200 image
    objs = make_scene([(10, 20, 30, 60), (20, 40, 60, 80)], [1, 2]).objects
    scene = Scene("f", 100.0, 200.0, objs)
    x = featurize(scene, _inst(), C)
    inter = 10 * 20  # x 20..30, y 40..60
    want = [0.1, 0.1, 0.3, 0.3,
            0.2, 0.2, 0.6, 0.4,
            (20 - 40) / 100, (40 - 60) / 200,
            math.log(20 / 40), math.log(40 / 40), math.log(800 / 1600),
            inter / (800 + 1600 - inter), inter / 800,
            0, 1, 0, 0, 0, 1]
    np.testing.assert_allclose(x, want, rtol=0, atol=1e-12)


def test_logits_linear_reference(rng):
    s = RelationScorer.init(C, R, seed=3)
    assert np.array_equal(s.logits(np.zeros(feature_dim(C))), s.params["b"])
    s.params["b"] = rng.normal(size=R)
    X = rng.normal(size=(4, feature_dim(C)))
    ref = np.array([[sum(X[n, i] * s.params["W"][i, r] for i in range(X.shape[1]))
                     + s.params["b"][r] for r in range(R)] for n in range(4)])
    np.testing.assert_allclose(s.logits(X), ref, rtol=1e-12, atol=1e-12)
    s.params["W"][:] = 0
    np.testing.assert_array_equal(s.logits(X), np.tile(s.params["b"], (4, 1)))
    with pytest.raises(ValueError):
        s.logits(np.zeros(3))


def test_init_ranges():
    s = RelationScorer.init(C, R, seed=0)
    bound = 1 / math.sqrt(feature_dim(C))
    assert np.all(np.abs(s.params["W"]) <= bound)
    assert np.all(s.params["b"] == 0)


def _scene():
    return make_scene([(10, 10, 50, 50), (30, 30, 70, 90)], [0, 1])


def test_predict_candidates_cases():
    s = RelationScorer.init(C, R, seed=0)
    p = predict_candidates(s, _scene(), _inst(cands=(3,)))
    np.testing.assert_array_equal(p, [0, 0, 0, 1, 0])
    s.params["W"][:] = 0
    s.params["b"][:] = [5.0, 1.0, 1.0, 1.0, -2.0]
    p = predict_candidates(s, _scene(), _inst(cands=(1, 2, 3)))
    np.testing.assert_allclose(p, [0, 1 / 3, 1 / 3, 1 / 3, 0], rtol=0, atol=1e-15)
    s.params["b"][:] = [0.0, math.log(3), 0.0, 0.0, 9.0]
    p = predict_candidates(s, _scene(), _inst(cands=(1, 2)))
    np.testing.assert_allclose(p, [0, 0.75, 0.25, 0, 0], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        predict_candidates(s, _scene(), _inst(cands=()))


@given(st.integers(-30, 30), st.lists(st.integers(-40, 40), min_size=R, max_size=R))
def test_predict_candidates_shift_invariant(shift, bias):
    s = RelationScorer.init(C, R, seed=0)
    s.params["W"][:] = 0
    s.params["b"][:] = np.array(bias) / 8
    inst = _inst(cands=(1, 3, 4))
    p = predict_candidates(s, _scene(), inst)
    s.params["b"] += shift
    assert np.array_equal(p, predict_candidates(s, _scene(), inst))


def _fixed_scorer(bias):
    s = RelationScorer.init(C, len(bias), seed=0)
    s.params["W"][:] = 0
    s.params["b"][:] = bias
    return s


def test_noise_loss_examples():
    X = np.zeros((1, feature_dim(C)))
    s = _fixed_scorer([0.0, 0.0, 0.0])
    loss, _ = loss_noise_aware(s, X, [[0, 0.5, 0.5]], [[0, 1, 1]])
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    # a single candidate is predicted with probability 1 after normalization
    loss, _ = loss_noise_aware(s, X, [[0, 1.0, 0]], [[0, 1, 0]])
    assert loss == 0.0


def test_noise_loss_negative_row_targets_na():
    X = np.zeros((1, feature_dim(C)))
    s = _fixed_scorer([math.log(2), 0.0, 0.0, 0.0])
    loss, _ = loss_noise_aware(s, X, [[0, 0, 0, 0]], [[0, 0, 0, 0]])
    assert loss == pytest.approx(-math.log(2 / 5), abs=1e-15)


def test_cross_entropy_examples():
    X = np.zeros((1, feature_dim(C)))
    s = _fixed_scorer([0.0, 0.0, 0.0, 0.0])
    loss, _ = loss_cross_entropy(s, X, [[0, 0, 1, 0]])
    assert loss == pytest.approx(math.log(4), abs=1e-15)
    mask = np.array([[False, True, True, True]])
    loss, _ = loss_cross_entropy(s, X, [[0, 0, 1, 0]], mask)
    assert loss == pytest.approx(math.log(3), abs=1e-15)
    s.params["b"][:] = [0.0, 0.0, 800.0, 0.0]
    assert loss_cross_entropy(s, X, [[0, 0, 1, 0]])[0] == 0.0


def test_clean_labels_reduce_to_cross_entropy(rng):
    s = RelationScorer.init(C, R, seed=1)
    X = rng.normal(size=(6, feature_dim(C)))
    y = np.eye(R)[rng.integers(1, R, size=6)]
    no_na = np.ones((6, R), dtype=bool)
    no_na[:, 0] = False
    a, ga = loss_noise_aware(s, X, y, no_na.astype(float))
    b, gb = loss_cross_entropy(s, X, y, mask=no_na)
    assert a == pytest.approx(b, abs=1e-14)
    np.testing.assert_allclose(ga["W"], gb["W"], atol=1e-14)


def random_problem(rng, hidden=0):
    s = RelationScorer.init(C, R, seed=int(rng.integers(1 << 30)), hidden=hidden)
    for k in s.params:
        s.params[k] = s.params[k] + rng.normal(scale=0.3, size=s.params[k].shape)
    n = int(rng.integers(2, 7))
    X = rng.normal(size=(n, feature_dim(C)))
    d = (rng.random((n, R)) < 0.5).astype(float)
    d[:, 0] = 0
    d[0] = 0  # one sampled negative
    r = d * rng.random((n, R))
    r[1:] /= np.where(r[1:].sum(1, keepdims=True) > 0, r[1:].sum(1, keepdims=True), 1)
    targets = np.eye(R)[rng.integers(0, R, size=n)]
    return s, X, r, d, targets


def fd_check(s, f, h=1e-5):
    """Largest relative error of the analytic gradient against central differences."""
    _, grads = f(s)
    worst = 0.0
    for name, g in grads.items():
        num = np.zeros_like(g)
        flat = s.params[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f(s)[0]
            flat[i] = old - h
            down = f(s)[0]
            flat[i] = old
            num.reshape(-1)[i] = (up - down) / (2 * h)
        scale = max(np.abs(num).max(), np.abs(g).max(), 1e-8)
        worst = max(worst, np.abs(num - g).max() / scale)
    return worst


@pytest.mark.parametrize("hidden", [0, 4])
def test_gradients_match_finite_differences(hidden):
    rng = np.random.default_rng(99 + hidden)
    for _ in range(20):
        s, X, r, d, t = random_problem(rng, hidden)
        assert fd_check(s, lambda m: loss_noise_aware(m, X, r, d)) < 1e-4
        assert fd_check(s, lambda m: loss_cross_entropy(m, X, t)) < 1e-4


def test_sgd_step_does_not_increase_batch_loss():
    rng = np.random.default_rng(5)
    for _ in range(100):
        s, X, r, d, t = random_problem(rng)
        for f in (lambda m: loss_noise_aware(m, X, r, d), lambda m: loss_cross_entropy(m, X, t)):
            before, grads = f(s)
            stepped = s.copy()
            for k, g in grads.items():
                stepped.params[k] -= 1e-3 * g
            assert f(stepped)[0] <= before + 1e-12


def _separable_dataset(n_scenes=60, seed=0):
    """Two relations decided by whether the subject is left or right of the object."""
    rng = np.random.default_rng(seed)
    scenes = []
    for k in range(n_scenes):
        x = int(rng.integers(5, 30))
        w = int(rng.integers(20, 40))
        a, b = (x, 10, x + w, 50), (x + 10, 20, x + 10 + w, 60)
        lab1, lab2 = np.array([0, 1.0, 0]), np.array([0, 0, 1.0])
        rels = [RelationInstance(0, 1, frozenset({1, 2}), DISTANT, lab1),
                RelationInstance(1, 0, frozenset({1, 2}), DISTANT, lab2)]
        scenes.append(make_scene([a, b], [0, 1], f"s{k}", relations=rels))
    return Dataset(scenes, D_S)


def test_fit_separable_set():
    ds = _separable_dataset()
    scorer, curve = fit(RelationScorer.init(2, 3, 0), ds, "noise", FitParams(neg_ratio=0))
    assert curve[-1] < curve[0]
    hits = [np.argmax(predict_candidates(scorer, s, r)) == np.argmax(r.label)
            for s in ds.scenes for r in s.relations]
    assert np.mean(hits) >= 0.99


def test_fit_zero_epochs_and_determinism():
    ds = _separable_dataset(20)
    init = RelationScorer.init(2, 3, 4)
    same, curve = fit(init, ds, "noise", FitParams(epochs=0))
    assert curve == []
    for k in init.params:
        assert np.array_equal(same.params[k], init.params[k])
    a, _ = fit(init, ds, "ce", FitParams(epochs=3, seed=11))
    b, _ = fit(init, ds, "ce", FitParams(epochs=3, seed=11))
    assert dumps_scorer(a) == dumps_scorer(b)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_aborts_on_nan():
    ds = _separable_dataset(20)
    with pytest.raises(NumericalError, match="epoch"):
        fit(RelationScorer.init(2, 3, 0), ds, "ce", FitParams(lr=1e200, epochs=3))


def test_fit_input_errors():
    ds = _separable_dataset(4)
    with pytest.raises(ValueError):
        fit(RelationScorer.init(2, 3, 0), ds, "ce", FitParams(lr=0))
    for s in ds.scenes:
        for r in s.relations:
            r.label = None
    with pytest.raises(ValueError):
        fit(RelationScorer.init(2, 3, 0), ds, "ce", FitParams())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0, 3]))
def test_checkpoint_round_trip_is_exact(seed, hidden):
    rng = np.random.default_rng(seed)
    s = RelationScorer.init(C, R, seed, hidden)
    for k in s.params:
        s.params[k] = rng.normal(scale=10.0 ** rng.integers(-8, 8), size=s.params[k].shape)
    back = loads_scorer(dumps_scorer(s))
    assert (back.num_categories, back.num_relations, back.hidden) == (C, R, hidden)
    for k in s.params:
        assert np.array_equal(back.params[k], s.params[k])


def test_checkpoint_file(tmp_path):
    s = RelationScorer.init(C, R, 2)
    save_scorer(s, tmp_path / "m.ckpt")
    assert dumps_scorer(load_scorer(tmp_path / "m.ckpt")) == dumps_scorer(s)
