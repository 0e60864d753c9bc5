import math

import numpy as np
import pytest

from corgipile.dataset import Tuple, TupleBatch
from corgipile.errors import ConfigError, DimensionError, DivergenceError, NumericError
from corgipile.sgd import (
    ETA_GRID,
    LrSchedule,
    Model,
    evaluate,
    gradient,
    minibatch_epoch,
    objective,
    predict,
    read_history,
    resolve_kind,
    sgd_epoch,
    train,
    write_history,
)
from corgipile.shuffle import ShuffleConfig

from conftest import clustered


def dense_batch(X, y, ids=None):
    X = np.asarray(X, dtype=np.float32)
    return TupleBatch(np.arange(len(X)) if ids is None else ids, y, X.shape[1], dense=X)


def sparse_batch(rows, y, d):
    indptr = np.cumsum([0] + [len(r) for r in rows])
    indices = np.concatenate([[j for j, _ in r] for r in rows]).astype(np.int32) if indptr[-1] else np.zeros(0, np.int32)
    values = np.concatenate([[v for _, v in r] for r in rows]).astype(np.float32) if indptr[-1] else np.zeros(0, np.float32)
    return TupleBatch(np.arange(len(rows)), y, d, indptr=indptr, indices=indices, values=values)


def reference_sgd(model, batch, eta):
    """Plain per-tuple loop over the reference gradient."""
    m = model.copy()
    for t in batch:
        gW, gb, _ = gradient(m, t)
        m.W -= eta * np.atleast_2d(gW)
        m.bias -= eta * gb
    return m


def numeric_grad(model, t, h):
    theta = model.params()
    g = np.empty_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (objective(model.with_params(theta + e), t) - objective(model.with_params(theta - e), t)) / (2 * h)
    return g


# ---------------------------------------------------------------- gradients


def test_squared_hand_example():
    m = Model.zeros("squared", 1)
    gW, gb, loss = gradient(m, Tuple(0, 1.0, np.array([1.0], dtype=np.float32)))
    assert gW.tolist() == [-1.0] and gb.tolist() == [-1.0] and loss == 0.5


def test_hinge_flat_region():
    m = Model("hinge", np.array([[2.0]]), np.zeros(1))
    gW, gb, loss = gradient(m, Tuple(0, 1.0, np.array([1.0], dtype=np.float32)))
    assert gW.tolist() == [0.0] and gb.tolist() == [0.0] and loss == 0.0


def test_logistic_at_zero_matches_central_differences():
    m = Model.zeros("logistic", 4)
    t = Tuple(0, -1.0, np.array([0.5, -1.0, 2.0, 0.25], dtype=np.float32))
    gW, gb, _ = gradient(m, t)
    analytic = np.concatenate([gW, gb])
    numeric = numeric_grad(m, t, 1e-4)
    assert np.all(np.abs(analytic - numeric) <= 1e-5 * np.maximum(np.abs(analytic), 1e-12))


@pytest.mark.parametrize("kind", ["logistic", "hinge", "squared", "softmax"])
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    checked = 0
    while checked < 100:
        K = 3 if kind == "softmax" else 1
        m = Model(kind, rng.standard_normal((K, 4)), rng.standard_normal(K), float(rng.uniform(0, 0.3)))
        x = rng.standard_normal(4).astype(np.float32)
        y = float(rng.integers(0, 3)) if kind == "softmax" else float(rng.choice([-1.0, 1.0])) if kind != "squared" else float(rng.standard_normal())
        t = Tuple(0, y, x)
        if kind == "hinge" and abs(1 - y * (m.W[0] @ x.astype(np.float64) + m.bias[0])) < 1e-3:
            continue
        gW, gb, _ = gradient(m, t)
        a = np.concatenate([np.ravel(gW), gb])
        n = numeric_grad(m, t, 1e-6)
        assert np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12) < 1e-5
        checked += 1


def test_gradient_rejects_non_finite():
    m = Model.zeros("logistic", 2)
    with pytest.raises(NumericError):
        gradient(m, Tuple(0, 1.0, np.array([np.nan, 1.0], dtype=np.float32)))
    m.W[0, 0] = np.inf
    with pytest.raises(NumericError):
        gradient(m, Tuple(0, 1.0, np.array([1.0, 1.0], dtype=np.float32)))


def test_gradient_dimension_mismatch():
    with pytest.raises(DimensionError):
        gradient(Model.zeros("logistic", 3), Tuple(0, 1.0, np.ones(2, dtype=np.float32)))


def test_softmax_gradient_sums_to_zero_over_classes():
    m = Model("softmax", np.random.default_rng(0).standard_normal((4, 3)), np.zeros(4))
    _, gb, _ = gradient(m, Tuple(0, 2.0, np.ones(3, dtype=np.float32)))
    assert abs(gb.sum()) < 1e-12


def test_model_kinds_and_aliases():
    assert resolve_kind("lr") == "logistic"
    assert resolve_kind("svm") == "hinge"
    assert resolve_kind("linreg") == "squared"
    with pytest.raises(ConfigError):
        resolve_kind("tree")


# ---------------------------------------------------------------- epochs


def test_one_step_hand_example():
    m = Model.zeros("squared", 1)
    sgd_epoch(m, [dense_batch([[1.0]], [1.0])], 0.1)
    assert m.W[0, 0] == pytest.approx(0.1) and m.bias[0] == pytest.approx(0.1)


def test_zero_learning_rate_is_identity_and_loss_matches_evaluation():
    rng = np.random.default_rng(1)
    b = dense_batch(rng.standard_normal((30, 3)), rng.choice([-1.0, 1.0], 30))
    m = Model("logistic", rng.standard_normal((1, 3)), np.array([0.3]))
    before = m.copy()
    _, st = sgd_epoch(m, [b], 0.0)
    assert m.bits_equal(before)
    assert st.loss == pytest.approx(evaluate(m, b).loss, rel=1e-12)
    assert st.tuples_seen == 30


def test_order_sensitivity():
    t1 = dense_batch([[1.0, 0.0]], [1.0])
    t2 = dense_batch([[1.0, 1.0]], [-1.0])
    a = Model.zeros("logistic", 2)
    b = Model.zeros("logistic", 2)
    sgd_epoch(a, [t1, t2], 0.5)
    sgd_epoch(b, [t2, t1], 0.5)
    assert not np.allclose(a.params(), b.params())


@pytest.mark.parametrize("kind", ["logistic", "hinge", "squared", "softmax"])
@pytest.mark.parametrize("lam", [0.0, 0.05])
def test_kernel_matches_reference_loop(kind, lam):
    rng = np.random.default_rng(7)
    X = rng.standard_normal((40, 5))
    y = rng.integers(0, 3, 40).astype(float) if kind == "softmax" else rng.choice([-1.0, 1.0], 40)
    K = 3 if kind == "softmax" else 1
    m0 = Model(kind, rng.standard_normal((K, 5)) * 0.1, np.zeros(K), lam)
    b = dense_batch(X, y)
    fast = m0.copy()
    sgd_epoch(fast, [b], 0.05)
    slow = reference_sgd(m0, b, 0.05)
    assert np.allclose(fast.params(), slow.params(), rtol=1e-10, atol=1e-12)


def test_sparse_update_touches_only_nonzero_coordinates():
    m = Model.zeros("logistic", 6)
    sgd_epoch(m, [sparse_batch([[(1, 2.0), (4, -1.0)]], [1.0], 6)], 0.1)
    assert np.flatnonzero(m.W[0]).tolist() == [1, 4]
    assert m.bias[0] != 0


def test_sparse_and_dense_agree():
    rows = [[(0, 1.0), (3, 2.0)], [], [(2, -1.5)], [(0, 0.5), (1, 0.5), (2, 0.5), (3, 0.5)]]
    y = [1.0, -1.0, 1.0, -1.0]
    sp = sparse_batch(rows, y, 4)
    de = dense_batch(sp.to_dense(), y)
    a, b = Model.zeros("hinge", 4, lam=0.1), Model.zeros("hinge", 4, lam=0.1)
    sgd_epoch(a, [sp], 0.3)
    sgd_epoch(b, [de], 0.3)
    assert np.allclose(a.params(), b.params(), rtol=1e-12)


def test_l2_contraction_with_zero_data_gradient():
    m = Model("hinge", np.array([[3.0, -2.0]]), np.zeros(1), lam=0.5)
    sgd_epoch(m, [dense_batch([[1.0, 0.0]], [1.0])], 0.1)
    assert np.allclose(m.W, np.array([[3.0, -2.0]]) * (1 - 0.1 * 0.5), rtol=1e-15)


def test_divergence_guard():
    m = Model.zeros("squared", 2)
    b = dense_batch(np.full((200, 2), 100.0), np.full(200, 1.0))
    with pytest.raises(DivergenceError) as e:
        sgd_epoch(m, [b], 10.0, epoch=3)
    assert e.value.epoch == 3


def test_minibatch_size_one_is_bitwise_sgd():
    rng = np.random.default_rng(4)
    for kind in ("logistic", "hinge", "squared", "softmax"):
        y = rng.integers(0, 3, 50).astype(float) if kind == "softmax" else rng.choice([-1.0, 1.0], 50)
        b = dense_batch(rng.standard_normal((50, 4)), y)
        K = 3 if kind == "softmax" else 1
        m0 = Model(kind, rng.standard_normal((K, 4)), rng.standard_normal(K), 0.01)
        a, c = m0.copy(), m0.copy()
        sgd_epoch(a, [b], 0.05)
        minibatch_epoch(c, [b], 0.05, 1)
        assert a.bits_equal(c)


def test_full_batch_is_one_gradient_step():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((25, 3))
    y = rng.standard_normal(25)
    m = Model.zeros("squared", 3)
    minibatch_epoch(m, [dense_batch(X[:10], y[:10]), dense_batch(X[10:], y[10:])], 0.2, 25)
    Xf = X.astype(np.float32).astype(np.float64)
    yf = y.astype(np.float32).astype(np.float64)
    r = -yf  # margins are zero at the start
    gW = (r[:, None] * Xf).mean(axis=0)
    assert np.allclose(m.W[0], -0.2 * gW, rtol=1e-12)
    assert m.bias[0] == pytest.approx(-0.2 * r.mean(), rel=1e-12)


def test_batch_of_identical_tuples_equals_single_step():
    a, b = Model.zeros("logistic", 2), Model.zeros("logistic", 2)
    minibatch_epoch(a, [dense_batch([[1.0, 2.0], [1.0, 2.0]], [1.0, 1.0])], 0.3, 2)
    sgd_epoch(b, [dense_batch([[1.0, 2.0]], [1.0])], 0.3)
    assert np.allclose(a.params(), b.params(), rtol=1e-15)


def test_short_final_batch_is_averaged_over_its_size():
    a, b = Model.zeros("squared", 1), Model.zeros("squared", 1)
    minibatch_epoch(a, [dense_batch([[1.0], [1.0], [1.0]], [1.0, 1.0, 1.0])], 0.1, 2)
    sgd_epoch(b, [dense_batch([[1.0]], [1.0])], 0.1)  # first batch = one averaged step of the same tuple
    sgd_epoch(b, [dense_batch([[1.0]], [1.0])], 0.1)  # short batch of one
    assert np.allclose(a.params(), b.params(), rtol=1e-15)


# ---------------------------------------------------------------- evaluation


def test_evaluate_perfect_and_tie_rule():
    b = dense_batch([[1.0], [-1.0], [0.0]], [1.0, -1.0, 1.0])
    m = Model("logistic", np.array([[1.0]]), np.zeros(1))
    assert evaluate(m, b).accuracy == 1.0
    assert predict(m, b).tolist() == [1.0, -1.0, 1.0]


def test_softmax_ties_go_to_lowest_class():
    m = Model.zeros("softmax", 2, 3)
    assert predict(m, dense_batch([[1.0, 1.0]], [2.0])).tolist() == [0.0]


def test_constant_regression_predictor_has_zero_r2():
    y = np.array([1.0, 2.0, 3.0, 6.0])
    m = Model("squared", np.zeros((1, 1)), np.array([y.mean()]))
    assert evaluate(m, dense_batch(np.zeros((4, 1)), y)).r2 == pytest.approx(0.0, abs=1e-12)


def test_zero_logistic_on_balanced_data_is_half(clustered_ds):
    assert evaluate(Model.zeros("logistic", 5), clustered_ds).accuracy == 0.5


# ---------------------------------------------------------------- schedules


def test_exp_decay_and_grid():
    s = LrSchedule.exp_decay(0.1)
    assert [s(i) for i in range(3)] == [0.1, 0.1 * 0.95, 0.1 * 0.95 ** 2]
    assert ETA_GRID == (0.1, 0.01, 0.001)


def test_theorem_schedule():
    s = LrSchedule.theorem(b=10, n=2, mu=0.5, a=3)
    assert s(0) == pytest.approx(6 / (10 * 2 * 0.5 * 3))
    vals = [s(i) for i in range(20)]
    assert all(x > 0 for x in vals) and all(x >= y for x, y in zip(vals, vals[1:]))
    with pytest.raises(ConfigError):
        LrSchedule.theorem(b=10, n=2, mu=0.0, a=3)
    with pytest.raises(ConfigError):
        LrSchedule.exp_decay(0.1, decay=1.5)


# ---------------------------------------------------------------- train / persistence


def test_train_history_and_roundtrip(tmp_path, clustered_ds):
    cfg = ShuffleConfig("corgipile", 0.1, 3)
    res = train(clustered_ds, cfg, Model.zeros("lr", 5), LrSchedule.exp_decay(0.1), 3, keep_iterates=True)
    assert [h.epoch for h in res.history] == [0, 1, 2]
    assert all(h.tuples_seen == 1000 for h in res.history)
    assert all(h.bytes_read == clustered_ds.data_bytes for h in res.history)
    assert len(res.iterates) == 4
    assert np.array_equal(res.iterates[-1], res.model.params())
    write_history(res.history, tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "epoch,loss,train_acc,test_acc,seconds,bytes_read"
    back = read_history(tmp_path / "h.csv")
    assert [h.loss for h in back] == [h.loss for h in res.history]
    res.model.save(tmp_path / "m.json")
    assert Model.load(tmp_path / "m.json").bits_equal(res.model)


def test_train_is_deterministic(clustered_ds):
    cfg = ShuffleConfig("corgipile", 0.1, 8)
    a = train(clustered_ds, cfg, Model.zeros("svm", 5), LrSchedule.exp_decay(0.05), 2, evaluate_train=False)
    b = train(clustered_ds, cfg, Model.zeros("svm", 5), LrSchedule.exp_decay(0.05), 2, evaluate_train=False)
    assert a.model.bits_equal(b.model)


def test_train_does_not_modify_initial_model(clustered_ds):
    m = Model.zeros("lr", 5)
    train(clustered_ds, ShuffleConfig("no_shuffle"), m, LrSchedule.exp_decay(0.1), 1)
    assert not m.W.any()


def test_train_rejects_dimension_mismatch(clustered_ds):
    with pytest.raises(DimensionError):
        train(clustered_ds, ShuffleConfig("no_shuffle"), Model.zeros("lr", 3), LrSchedule.exp_decay(0.1), 1)


def test_no_shuffle_clustered_lags_shuffle_once(tmp_path):
    tr = clustered(tmp_path / "tr.ds", m=20000, d=10, b=200, seed=1, separation=1.0)
    accs = {}
    for strat in ("no_shuffle", "shuffle_once"):
        cfg = ShuffleConfig(strat, seed=1, shuffled_copy=str(tmp_path / "copy.ds"))
        accs[strat] = train(tr, cfg, Model.zeros("lr", 10), LrSchedule.exp_decay(0.01), 20).history[-1].train_acc
    assert accs["no_shuffle"] <= accs["shuffle_once"] - 0.05


def test_regression_and_multiclass_train(tmp_path):
    from corgipile.dataset import SyntheticSpec, block_size_for, generate_synthetic

    reg = generate_synthetic(SyntheticSpec(m=800, d=4, task="regression", noise_std=0.1, seed=2, block_size_bytes=block_size_for(40, 4)), tmp_path / "r.ds")
    r = train(reg, ShuffleConfig("corgipile", 0.2, 2), Model.zeros("squared", 4), LrSchedule.exp_decay(0.05), 10)
    assert r.history[-1].train_acc > 0.9  # R^2
    mc = generate_synthetic(SyntheticSpec(m=900, d=4, task="multiclass", num_classes=3, separation=3.0, seed=2, order="label_clustered", block_size_bytes=block_size_for(30, 4)), tmp_path / "m.ds")
    s = train(mc, ShuffleConfig("corgipile", 0.2, 2), Model.zeros("softmax", 4, 3), LrSchedule.exp_decay(0.05), 10)
    assert s.history[-1].train_acc > 0.85
