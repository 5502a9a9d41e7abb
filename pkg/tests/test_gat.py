from __future__ import annotations

import math

import numpy as np
import pytest

from wuigraph import gat
from wuigraph.gat import (ConfigurationError, GatParams, TrainConfig, TrainingDivergedError,
                          attention_coefficients, attention_feature_importance, forward,
                          init_params, loss_and_grads, make_tensors, predict_proba, train)
from wuigraph.synth import separable_graph

SMALL = TrainConfig(heads=2, hidden=5, mlp_hidden=(6, 4), seed=3, weight_decay=1e-3)


def random_graph(rng, n=8, e=20, features=74):
    x = rng.normal(size=(n, features))
    pairs = set()
    while len(pairs) < e:
        i, j = rng.integers(n, size=2)
        if i != j:
            pairs.add((int(i), int(j)))
    src, dst = map(np.array, zip(*sorted(pairs)))
    return make_tensors(x, src, dst, rng.uniform(0, 1, size=(e, 4)))


def perturbed_params(cfg, rng):
    p = init_params(cfg)
    for k, a in p.arrays.items():
        p.arrays[k] = a + 0.1 * rng.normal(size=a.shape)
    return p


def central_difference(t, params, mask, y, name, idx, eps=1e-6):
    a = params.arrays[name]
    old = a[idx]
    a[idx] = old + eps
    lp, _ = loss_and_grads(t, params, mask, y)
    a[idx] = old - eps
    lm, _ = loss_and_grads(t, params, mask, y)
    a[idx] = old
    return (lp - lm) / (2 * eps)


def max_rel_error(t, params, mask, y, coords_per_param=None, rng=None):
    _, grads = loss_and_grads(t, params, mask, y)
    worst = 0.0
    for name, g in grads.items():
        all_idx = list(np.ndindex(g.shape))
        if coords_per_param is not None and len(all_idx) > coords_per_param:
            pick = rng.choice(len(all_idx), coords_per_param, replace=False)
            all_idx = [all_idx[i] for i in pick]
        for idx in all_idx:
            num = central_difference(t, params, mask, y, name, idx)
            ana = g[idx]
            # below 1e-6 the loss rounding (~1e-16 / eps) dominates the difference
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
            worst = max(worst, rel)
    return worst


def test_gradients_match_finite_differences_all_parameters(rng):
    t = random_graph(rng, n=5, e=12, features=7)
    cfg = SMALL
    p = init_params(cfg)
    # narrow the feature width for a full sweep over every coordinate
    shapes = gat.param_shapes(cfg, 7)
    arrays = {k: 0.4 * rng.normal(size=s) for k, s in shapes.items()}
    p = GatParams(arrays, np.zeros(7), np.ones(7), cfg)
    y = np.array([1, 0, 1, 1, 0], dtype=float)
    assert max_rel_error(t, p, np.arange(5), y) <= 1e-4


def test_gradients_match_finite_differences_default_architecture(rng):
    t = random_graph(rng, n=10, e=30)
    cfg = TrainConfig(seed=1)
    p = perturbed_params(cfg, rng)
    y = (rng.random(10) < 0.5).astype(float)
    assert max_rel_error(t, p, np.arange(10), y, coords_per_param=25, rng=rng) <= 1e-4


def test_attention_rows_sum_to_one(rng):
    t = random_graph(rng, n=20, e=70)
    p = perturbed_params(TrainConfig(seed=2), rng)
    alpha = attention_coefficients(t, p)
    sums = np.zeros((20, alpha.shape[1]))
    for e_idx, d in enumerate(t.dst):
        sums[d] += alpha[e_idx]
    has_in = np.bincount(t.dst, minlength=20) > 0
    np.testing.assert_allclose(sums[has_in], 1.0, atol=1e-9)
    assert np.all(sums[~has_in] == 0)


def test_singleton_and_symmetric_attention():
    x = np.zeros((5, 74))
    # node 0 has one in-neighbour, node 1 has three identical in-neighbours
    t = make_tensors(x, [2, 2, 3, 4], [0, 1, 1, 1], np.full((4, 4), 0.5))
    p = init_params(TrainConfig(seed=0))
    alpha = attention_coefficients(t, p)
    by_dst = {d: alpha[t.dst == d] for d in (0, 1)}
    np.testing.assert_array_equal(by_dst[0], 1.0)
    np.testing.assert_allclose(by_dst[1], 1 / 3, rtol=1e-15)


def test_zero_output_layer_gives_half():
    rng = np.random.default_rng(0)
    t = random_graph(rng, n=12, e=25)
    p = init_params(TrainConfig(seed=0), zero_output=True)
    np.testing.assert_array_equal(predict_proba(t, p), 0.5)
    y = (rng.random(12) < 0.5).astype(float)
    loss = gat.data_loss(t, p, np.arange(12), y)
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_perfect_predictions_leave_only_l2():
    rng = np.random.default_rng(1)
    t = random_graph(rng, n=6, e=10)
    p = init_params(TrainConfig(seed=0, weight_decay=1e-4), zero_output=True)
    p.arrays["c3"][:] = 60.0
    y = np.ones(6)
    loss, _ = loss_and_grads(t, p, np.arange(6), y)
    l2 = 0.5 * 1e-4 * sum(float((a * a).sum()) for a in p.arrays.values())
    assert loss == pytest.approx(l2, abs=1e-20 + 1e-12)


def test_empty_mask_and_shape_errors():
    rng = np.random.default_rng(2)
    t = random_graph(rng, n=6, e=10)
    p = init_params(TrainConfig(seed=0))
    with pytest.raises(ValueError):
        loss_and_grads(t, p, [], np.zeros(6))
    bad = make_tensors(np.zeros((6, 10)), t.src, t.dst, t.edge_feat)
    with pytest.raises(ConfigurationError):
        forward(bad, p)
    with pytest.raises(ConfigurationError):
        make_tensors(np.zeros((3, 74)), [0], [0], np.zeros((1, 4)))
    with pytest.raises(ConfigurationError):
        GatParams({"W": np.zeros((2, 2))}, np.zeros(74), np.ones(74), TrainConfig())


def test_permutation_equivariance_bit_exact(rng):
    n = 30
    t = random_graph(rng, n=n, e=120)
    p = perturbed_params(TrainConfig(seed=4), rng)
    out = forward(t, p)
    perm = rng.permutation(n)  # new position k holds old node perm[k]
    inv = np.argsort(perm)
    tp = make_tensors(t.x_raw[perm], inv[t.src], inv[t.dst], t.edge_feat)
    outp = forward(tp, p)
    np.testing.assert_array_equal(outp["logit"][inv], out["logit"])
    np.testing.assert_array_equal(outp["H"][inv], out["H"])


def test_probabilities_in_open_interval(rng):
    t = random_graph(rng, n=15, e=40)
    prob = predict_proba(t, perturbed_params(TrainConfig(seed=7), rng))
    assert np.all((prob > 0) & (prob < 1))


def test_eval_mode_is_pure(rng):
    t = random_graph(rng, n=15, e=40)
    p = perturbed_params(TrainConfig(seed=5), rng)
    a, b = forward(t, p)["logit"], forward(t, p)["logit"]
    np.testing.assert_array_equal(a, b)


def test_isolated_node_ignores_other_nodes(rng):
    t = random_graph(rng, n=10, e=20)
    keep = t.dst != 0
    t = make_tensors(t.x_raw, t.src[keep], t.dst[keep], t.edge_feat[keep])
    p = perturbed_params(TrainConfig(seed=6), rng)
    before = forward(t, p)["logit"][0]
    x2 = t.x_raw.copy()
    x2[1:] += rng.normal(size=x2[1:].shape)
    after = forward(make_tensors(x2, t.src, t.dst, t.edge_feat), p)["logit"][0]
    assert before == after
    np.testing.assert_array_equal(forward(t, p)["H"][0], 0.0)


def test_feature_importance():
    cfg = TrainConfig(seed=0)
    p = init_params(cfg)
    p.arrays["W"][:, 64:] = 0.0
    imp = attention_feature_importance(p)
    assert imp["raw"]["structural"] == 0 and imp["raw"]["topographic"] == 0
    p = init_params(cfg)
    imp = attention_feature_importance(p)
    assert all(v >= 0 for v in imp["raw"].values())
    assert sum(imp["raw"].values()) == pytest.approx(np.abs(p.arrays["W"]).sum(), rel=1e-12)
    assert sum(imp["share"].values()) == pytest.approx(1.0, abs=1e-12)
    p.arrays["W"] *= 2
    doubled = attention_feature_importance(p)
    for g in imp["raw"]:
        assert doubled["raw"][g] == pytest.approx(2 * imp["raw"][g], rel=1e-12)


def test_train_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.lr, c.weight_decay, c.gat_dropout, c.mlp_dropout) == (5e-4, 1e-6, 0.05, 0.1)
    assert (c.epochs, c.patience, c.lr_decay_factor, c.lr_decay_every) == (1000, 100, 0.9, 50)
    assert (c.heads, c.hidden) == (4, 64) and c.heads * c.hidden == 256
    with pytest.raises(ValueError):
        TrainConfig(patience=2000)
    with pytest.raises(ValueError):
        TrainConfig(gat_dropout=1.0)
    with pytest.raises(ValueError):
        TrainConfig(mlp_hidden=(8,))


def _separable_run(seed=0, epochs=500, patience=500):
    g = separable_graph(50, seed=seed)
    t = gat.tensors_from_graph(g)
    y = g.labels()
    masks = {"train": np.arange(50), "val": np.arange(0)}
    cfg = TrainConfig(epochs=epochs, patience=patience, seed=seed)
    return train(t, y, masks, cfg), t, y


def test_separable_graph_reaches_99_percent():
    (params, hist), t, y = _separable_run()
    acc = np.mean((predict_proba(t, params) >= 0.5) == y)
    assert acc >= 0.99
    assert len(hist.train_loss) <= 500


def test_training_is_reproducible():
    (p1, h1), _, _ = _separable_run(seed=1, epochs=40, patience=40)
    (p2, h2), _, _ = _separable_run(seed=1, epochs=40, patience=40)
    assert h1.train_loss == h2.train_loss and h1.val_loss == h2.val_loss
    for k in p1.arrays:
        np.testing.assert_array_equal(p1.arrays[k], p2.arrays[k])


def test_patience_zero_stops_after_first_non_improving_epoch():
    g = separable_graph(20, seed=2)
    t = gat.tensors_from_graph(g)
    y = g.labels()
    idx = np.arange(20)
    masks = {"train": idx[::2], "val": idx[1::2]}
    cfg = TrainConfig(epochs=300, patience=0, lr=0.5, seed=0)
    _, hist = train(t, y, masks, cfg)
    assert hist.stopped_early
    v = hist.val_loss
    assert all(b < a for a, b in zip(v[:-2], v[1:-1]))
    assert v[-1] >= min(v[:-1])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    g = separable_graph(20, seed=0)
    t = gat.tensors_from_graph(g)
    x = t.x_raw.copy()
    x[0, 0] = np.nan
    t = make_tensors(x, t.src, t.dst, t.edge_feat)
    params = init_params(TrainConfig(seed=0))
    with pytest.raises(TrainingDivergedError):
        train(t, g.labels(), {"train": np.arange(20)}, TrainConfig(epochs=5, patience=5),
              params=params)


def test_params_round_trip_bit_exact(rng):
    p = perturbed_params(TrainConfig(seed=9), rng)
    q = GatParams.from_dict(p.to_dict())
    for k in p.arrays:
        np.testing.assert_array_equal(p.arrays[k], q.arrays[k])
    assert q.config == p.config
