import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import rulkit.training as training
from rulkit.autodiff import Tensor, ops
from rulkit.autodiff.tensor import NumericError, backward
from rulkit.dataset import WindowSet
from rulkit.model import ForwardOutput, ModelConfig, ParamStore, forward, init_model
from rulkit.training import (
    HALF_LOG_2PI,
    AdamW,
    EarlyStopping,
    LossConfig,
    PlateauScheduler,
    TrainConfig,
    clip_gradient_norm,
    fit_model,
    gaussian_nll,
    rmse_cycles,
    rul_sample_weight,
    stream_seed,
    total_loss,
)

TINY = ModelConfig(n_features=4, filters=4, lstm_units=4, attention_heads=1, cond_units=(4, 4), dense_units=(8, 4))


def toy_sets(n_train=48, n_val=16, seed=0):
    rng = np.random.default_rng(seed)

    def make(n, offset):
        labels = rng.uniform(0, 125, n)
        x = rng.normal(0, 0.3, (n, 30, 4)) + (labels / 125.0)[:, None, None]
        return WindowSet(x.astype(np.float32), rng.normal(size=(n, 3)).astype(np.float32),
                         np.zeros(n, np.int64), labels, np.arange(n) + offset)

    return make(n_train, 0), make(n_val, 1000)


def test_weight_boundaries_exact():
    ys = [0, 29.999, 30, 79.999, 80, 125]
    assert [rul_sample_weight(y) for y in ys] == [2.5, 2.5, 1.5, 1.5, 1.0, 1.0]
    np.testing.assert_array_equal(rul_sample_weight(np.array(ys)), [2.5, 2.5, 1.5, 1.5, 1.0, 1.0])
    assert rul_sample_weight(15) == 2.5 and rul_sample_weight(100) == 1.0


@pytest.mark.parametrize(
    "mu, lv, y, w, expected, tol",
    [(5.0, 0.0, 5.0, 1.0, 0.91894, 1e-5), (8.0, 0.0, 10.0, 1.0, 2.91894, 1e-5), (8.0, 0.0, 10.0, 2.5, 7.29735, 1e-4)],
)
def test_nll_examples(mu, lv, y, w, expected, tol):
    assert abs(gaussian_nll(mu, lv, y, w) - expected) < tol


@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=20))
def test_nll_unit_variance_is_half_mse(pairs):
    mu, y = np.array(pairs).T
    nll = np.mean(gaussian_nll(mu, 0.0, y))
    assert nll == pytest.approx(0.5 * np.mean((y - mu) ** 2) + 0.5 * math.log(2 * math.pi), rel=1e-12, abs=1e-12)


def _out(mu, lv):
    return ForwardOutput(Tensor(np.asarray(mu, float)), None if lv is None else Tensor(np.asarray(lv, float)), None)


def _zero_kernels():
    p = ParamStore()
    p.add("a/kernel", np.zeros((3, 2)), regularized=True)
    p.add("a/bias", np.ones(2), regularized=False)
    return p


def test_total_loss_penalties_vanish():
    y = np.array([0.1, 0.5, 0.9])
    loss = total_loss(_out(y, np.zeros(3)), y, np.ones(3), _zero_kernels())
    assert abs(loss.item() - 0.91894) < 1e-5
    mu = np.array([0.2, 0.4, 0.6])
    w = np.array([2.5, 1.0, 1.5])
    expected = np.mean(gaussian_nll(mu, 0.0, y, w))
    assert total_loss(_out(mu, np.zeros(3)), y, w, _zero_kernels()).item() == pytest.approx(expected, abs=1e-15)


@given(st.floats(-10, 10))
def test_detached_kernel_adds_l2_exactly(c):
    y = np.array([0.3, 0.7])
    p = _zero_kernels()
    base = total_loss(_out(y - 0.1, [0.2, -0.4]), y, [1.0, 2.5], p).item()
    p["a/kernel"].data[1, 0] = c
    bumped = total_loss(_out(y - 0.1, [0.2, -0.4]), y, [1.0, 2.5], p).item()
    assert bumped - base == pytest.approx(1e-4 * c * c, rel=1e-9, abs=1e-15)


def test_logvar_penalty():
    y = np.zeros(2)
    lv = np.array([1.0, -2.0])
    loss = total_loss(_out(y, lv), y, np.ones(2), _zero_kernels()).item()
    nll = np.mean(gaussian_nll(y, lv, y))
    assert loss == pytest.approx(nll + 0.005 * np.mean(lv**2), abs=1e-14)


def test_loss_without_uncertainty_head():
    y = np.array([0.1, 0.5, 0.9])
    mu = np.array([0.0, 0.6, 0.7])
    w = np.array([2.5, 1.5, 1.0])
    p = _zero_kernels()
    p["a/kernel"].data[...] = 0.5
    loss = total_loss(_out(mu, None), y, w, p).item()
    assert loss == pytest.approx(np.mean(w * (y - mu) ** 2) + 1e-4 * 6 * 0.25, abs=1e-14)


@given(st.floats(0.01, 100))
@settings(max_examples=25)
def test_weight_scaling_scales_nll_gradient(c):
    rng = np.random.default_rng(1)
    y = rng.uniform(0, 1, 6)
    w = rul_sample_weight(y * 125)
    cfg = LossConfig(lambda_u=0.0, lambda_w=0.0)

    def grads(weights):
        mu = Tensor(rng_mu.copy(), requires_grad=True, name="mu")
        lv = Tensor(rng_lv.copy(), requires_grad=True, name="lv")
        loss = total_loss(ForwardOutput(mu, lv, None), y, weights, _zero_kernels(), cfg)
        return backward(loss, {"mu": mu, "lv": lv})

    rng_mu, rng_lv = rng.normal(0.5, 0.2, 6), rng.normal(0, 1, 6)
    g1, gc = grads(w), grads(c * w)
    for k in g1:
        np.testing.assert_allclose(gc[k], c * g1[k], rtol=1e-10, atol=1e-14)


def test_clip_examples():
    g = {"a": np.array([0.3, 0.0]), "b": np.array([[0.4]])}
    out, norm = clip_gradient_norm(g)
    assert norm == pytest.approx(0.5) and out is g
    g = {"a": np.array([1.2, 0.0]), "b": np.array([[1.6]])}
    out, norm = clip_gradient_norm(g)
    assert norm == pytest.approx(2.0)
    np.testing.assert_allclose(out["a"], [0.6, 0.0])
    new = math.sqrt(sum(float(np.sum(v**2)) for v in out.values()))
    assert abs(new - 1.0) < 1e-6
    z = {"a": np.zeros(3)}
    out, norm = clip_gradient_norm(z)
    assert norm == 0.0 and np.all(out["a"] == 0)
    with pytest.raises(NumericError):
        clip_gradient_norm({"a": np.array([np.nan])})


def _param(values):
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def test_adamw_zero_gradient_no_decay():
    p = _param([1.0, -2.0])
    opt = AdamW()
    for _ in range(3):
        opt.step({"p": p}, {"p": np.zeros(2)})
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert opt.t == 3


@pytest.mark.parametrize("g", [3.0, -0.02, 1e-3])
def test_adamw_first_step(g):
    p = _param([0.5])
    opt = AdamW(lr=1.5e-4)
    opt.step({"p": p}, {"p": np.array([g])})
    update = p.data[0] - 0.5
    assert abs(update + 1.5e-4 * np.sign(g)) < 1.5e-4 * 1e-3


def test_adamw_decoupled_decay():
    p = _param([2.0])
    opt = AdamW(lr=0.01, weight_decay=0.1)
    opt.step({"p": p}, {"p": np.zeros(1)})
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.01 * 0.1), abs=1e-15)


def test_plateau_examples():
    s = PlateauScheduler(lr=1.5e-4)
    s.step(10.0)
    lrs = [s.step(10.0) for _ in range(10)]
    assert lrs[:9] == [1.5e-4] * 9 and lrs[9] == pytest.approx(7.5e-5)
    assert s.stale == 0
    s = PlateauScheduler(lr=1.5e-6)
    s.step(1.0)
    for _ in range(10):
        lr = s.step(1.0)
    assert lr == 1e-6
    s = PlateauScheduler()
    s.step(5.0)
    s.step(5.0)
    assert s.step(4.0) == 1.5e-4 and s.stale == 0
    # changes below the threshold do not count as improvement
    s.step(4.0 - 5e-5)
    assert s.stale == 1


@given(st.lists(st.floats(0, 100), min_size=1, max_size=200))
def test_lr_non_increasing_with_floor(vals):
    s = PlateauScheduler()
    lrs = [s.step(v) for v in vals]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert min(lrs) >= 1e-6


def _store(v):
    p = ParamStore()
    p.add("w/kernel", np.array([float(v)]), regularized=True)
    return p


def test_early_stop_after_patience_restores_best():
    p = _store(0)
    es = EarlyStopping()
    k = 7
    for epoch in range(1, k + 1):
        p["w/kernel"].data[...] = epoch
        assert es.update(epoch, 100.0 - epoch, p)
    epoch = k
    while True:
        epoch += 1
        p["w/kernel"].data[...] = -epoch
        if not es.update(epoch, 100.0, p):
            break
    assert epoch == k + 20 and es.best_epoch == k
    es.restore(p)
    assert p["w/kernel"].data[0] == k


def test_early_stop_monotone_and_max_epochs():
    p = _store(0)
    es = EarlyStopping()
    results = [es.update(e, 1000.0 - e, p) for e in range(1, 251)]
    assert all(results[:249]) and results[249] is False


def test_stream_seeds_distinct_and_stable():
    seeds = {stream_seed(42, k) for k in training.SEED_STREAMS}
    assert len(seeds) == len(training.SEED_STREAMS)
    assert stream_seed(42, "init") == stream_seed(42, "init")
    assert stream_seed(42, "init") != stream_seed(43, "init")


def test_fit_model_deterministic_and_restores_best():
    tr, va = toy_sets()
    tcfg = TrainConfig(max_epochs=3, batch_size=16, learning_rate=3e-3)
    runs = []
    for _ in range(2):
        p = init_model(TINY, seed=stream_seed(7, "init"))
        h = fit_model(p, TINY, tr, va, tcfg, seed=7)
        runs.append((p, h))
    (p1, h1), (p2, h2) = runs
    assert h1.comparable() == h2.comparable()
    assert len(h1) == 3
    best = min(r.val_rmse for r in h1.records)
    assert h1.best_val_rmse == best
    assert abs(rmse_cycles(p1, TINY, va) - best) < 1e-6
    assert all(np.isfinite([r.train_loss, r.val_rmse]).all() for r in h1.records)
    assert h1.to_jsonl().count("\n") == 3


def test_fit_model_early_stops(monkeypatch):
    tr, va = toy_sets(24, 8)
    tcfg = TrainConfig(max_epochs=50, batch_size=24, learning_rate=0.0, early_stop_patience=2, lr_patience=1)
    p = init_model(TINY, seed=0)
    h = fit_model(p, TINY, tr, va, tcfg, seed=0)
    # lr 0 means val RMSE never improves after epoch 1
    assert h.stopped_early and len(h) == 3 and h.best_epoch == 1


def test_rul_weighting_off_uses_unit_weights(monkeypatch):
    seen = []
    real = training.total_loss

    def spy(out, y, w, params, cfg):
        seen.append(np.asarray(w))
        return real(out, y, w, params, cfg)

    monkeypatch.setattr(training, "total_loss", spy)
    tr, va = toy_sets(32, 8)
    cfg = ModelConfig(**{**TINY.to_dict(), "rul_weighting": False})
    fit_model(init_model(cfg, seed=0), cfg, tr, va, TrainConfig(max_epochs=1, batch_size=16), seed=0)
    assert seen and all(np.all(w == 1.0) for w in seen)

    seen.clear()
    fit_model(init_model(TINY, seed=0), TINY, tr, va, TrainConfig(max_epochs=1, batch_size=16), seed=0)
    assert any(np.any(w == 2.5) for w in seen)


def test_uncertainty_off_trains():
    tr, va = toy_sets(32, 8)
    cfg = ModelConfig(**{**TINY.to_dict(), "uncertainty_head": False})
    p = init_model(cfg, seed=0)
    h = fit_model(p, cfg, tr, va, TrainConfig(max_epochs=2, batch_size=16), seed=0)
    assert len(h) == 2
    out = forward(p, cfg, va.windows, va.settings)
    assert out.log_var is None


def test_divergence_is_reported():
    tr, va = toy_sets(16, 8)
    tr.windows[0, 0, 0] = np.nan
    with pytest.raises(training.TrainingDivergedError, match="epoch 1"):
        fit_model(init_model(TINY, seed=0), TINY, tr, va, TrainConfig(max_epochs=1, batch_size=16), seed=0)


def test_empty_sets_rejected():
    tr, va = toy_sets(16, 8)
    with pytest.raises(ValueError):
        fit_model(init_model(TINY), TINY, tr, va.subset(np.zeros(len(va), bool)))
