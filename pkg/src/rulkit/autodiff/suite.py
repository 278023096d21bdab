"""Gradient-check suite: every primitive plus the full training objective on a tiny model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .gradcheck import check_gradients
from .tensor import Tensor

PRIMITIVE_TOL = 1e-6
FULL_LOSS_TOL = 1e-4


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    worst_param: str | None
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


@dataclass
class SuiteResult:
    cases: list[CaseResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cases)

    @property
    def worst(self) -> CaseResult:
        """Case with the largest error relative to its tolerance."""
        return max(self.cases, key=lambda c: c.max_rel_error / c.tol)


def _p(rng, *shape, scale=1.0, name="x") -> Tensor:
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True, name=name)


def _away_from_zero(rng, *shape, gap=0.1) -> np.ndarray:
    x = rng.normal(0.0, 1.0, shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * (gap + np.abs(x)), x)


def _primitive_cases(seed: int) -> dict[str, Callable[[], tuple[Callable[[], Tensor], dict]]]:
    def case(build):
        def make():
            rng = np.random.default_rng(seed)
            return build(rng)

        return make

    def unary(fn, data_fn=None):
        def build(rng):
            x = Tensor(data_fn(rng) if data_fn else rng.normal(0, 1, (3, 4)), requires_grad=True, name="x")
            r = Tensor(rng.normal(0, 1, fn(x).shape))
            return (lambda: ops.sum(ops.mul(fn(x), r))), {"x": x}

        return case(build)

    def binary(fn, shape_b=(3, 4)):
        def build(rng):
            a, b = _p(rng, 3, 4, name="a"), Tensor(rng.normal(0, 1, shape_b) + 2.0, requires_grad=True, name="b")
            r = Tensor(rng.normal(0, 1, (3, 4)))
            return (lambda: ops.sum(ops.mul(fn(a, b), r))), {"a": a, "b": b}

        return case(build)

    def clip_data(rng):
        x = rng.uniform(-2.0, 2.0, (3, 4))
        return np.where(np.abs(np.abs(x) - 1.0) < 0.1, x * 0.5, x)

    def maxpool_data(rng):
        # distinct values spaced well apart so no pair is within epsilon
        return (rng.permutation(2 * 7 * 3).reshape(2, 7, 3) * 0.1).astype(np.float64)

    def build_matmul(rng):
        a, b = _p(rng, 2, 3, 4, name="a"), _p(rng, 4, 5, name="b")
        r = Tensor(rng.normal(0, 1, (2, 3, 5)))
        return (lambda: ops.sum(ops.mul(ops.matmul(a, b), r))), {"a": a, "b": b}

    def build_dense(rng):
        x, k, b = _p(rng, 5, 3, name="x"), _p(rng, 3, 4, name="kernel"), _p(rng, 4, name="bias")
        r = Tensor(rng.normal(0, 1, (5, 4)))
        return (lambda: ops.sum(ops.mul(ops.dense(x, k, b), r))), {"x": x, "kernel": k, "bias": b}

    def build_concat(rng):
        a, b = _p(rng, 2, 3, name="a"), _p(rng, 2, 5, name="b")
        r = Tensor(rng.normal(0, 1, (2, 8)))
        return (lambda: ops.sum(ops.mul(ops.concat([a, b], axis=-1), r))), {"a": a, "b": b}

    def build_batchnorm(training):
        def build(rng):
            x, g, b = _p(rng, 4, 5, 3, name="x"), _p(rng, 3, name="gamma"), _p(rng, 3, name="beta")
            state = {"moving_mean": rng.normal(0, 0.5, 3), "moving_var": rng.uniform(0.5, 2.0, 3)}
            r = Tensor(rng.normal(0, 1, (4, 5, 3)))

            def closure():
                s = {k: v.copy() for k, v in state.items()}
                return ops.sum(ops.mul(ops.batchnorm(x, g, b, s, training), r))

            return closure, {"x": x, "gamma": g, "beta": b}

        return case(build)

    def build_dropout(rng):
        x = _p(rng, 4, 6, name="x")
        r = Tensor(rng.normal(0, 1, (4, 6)))
        return (lambda: ops.sum(ops.mul(ops.dropout(x, 0.3, np.random.default_rng(7), True), r))), {"x": x}

    def build_conv(rng):
        x, k, b = _p(rng, 2, 9, 3, name="x"), _p(rng, 5, 3, 4, scale=0.5, name="kernel"), _p(rng, 4, name="bias")
        r = Tensor(rng.normal(0, 1, (2, 9, 4)))
        return (lambda: ops.sum(ops.mul(ops.conv1d(x, k, b), r))), {"x": x, "kernel": k, "bias": b}

    def build_lstm(reverse):
        def build(rng):
            h = 4
            x = _p(rng, 2, 6, 3, name="x")
            k = _p(rng, 3, 4 * h, scale=0.5, name="kernel")
            u = _p(rng, h, 4 * h, scale=0.5, name="recurrent")
            b = _p(rng, 4 * h, scale=0.5, name="bias")
            mask = (rng.random((2, h)) < 0.8) / 0.8
            r = Tensor(rng.normal(0, 1, (2, 6, h)))
            return (
                lambda: ops.sum(ops.mul(ops.lstm(x, k, u, b, reverse=reverse, recurrent_mask=mask), r)),
                {"x": x, "kernel": k, "recurrent": u, "bias": b},
            )

        return case(build)

    def build_attention(rng):
        q, k, v = _p(rng, 2, 5, 4, name="q"), _p(rng, 2, 6, 4, name="k"), _p(rng, 2, 6, 3, name="v")
        r = Tensor(rng.normal(0, 1, (2, 5, 3)))
        return (lambda: ops.sum(ops.mul(ops.scaled_dot_attention(q, k, v), r))), {"q": q, "k": k, "v": v}

    return {
        "add": binary(ops.add, (4,)),
        "sub": binary(ops.sub, (3, 1)),
        "mul": binary(ops.mul),
        "square": unary(ops.square),
        "exp": unary(ops.exp),
        "relu": unary(ops.relu, lambda rng: _away_from_zero(rng, 3, 4)),
        "tanh": unary(ops.tanh),
        "sigmoid": unary(ops.sigmoid),
        "softmax": unary(lambda x: ops.softmax(x, axis=-1)),
        "clip": unary(lambda x: ops.clip(x, -1.0, 1.0), clip_data),
        "matmul": case(build_matmul),
        "dense": case(build_dense),
        "reshape": unary(lambda x: ops.reshape(ops.square(x), (4, 3))),
        "transpose": unary(lambda x: ops.square(ops.transpose(x, (1, 0)))),
        "getitem": unary(lambda x: ops.square(ops.getitem(x, (slice(None), slice(1, 3))))),
        "concat": case(build_concat),
        "sum": unary(lambda x: ops.square(ops.sum(x, axis=0))),
        "mean": unary(lambda x: ops.square(ops.mean(x, axis=1, keepdims=True))),
        "maxpool1d": unary(lambda x: ops.maxpool1d(x, 2, axis=1), maxpool_data),
        "batchnorm": build_batchnorm(True),
        "batchnorm_frozen": build_batchnorm(False),
        "dropout": case(build_dropout),
        "conv1d": case(build_conv),
        "lstm": build_lstm(False),
        "lstm_reverse": build_lstm(True),
        "attention": case(build_attention),
    }


PRIMITIVES = tuple(_primitive_cases(0))


def tiny_model_config():
    from ..model import ModelConfig

    return ModelConfig(
        n_features=4,
        window_len=30,
        filters=8,
        lstm_units=8,
        attention_heads=1,
        cond_units=(8, 4),
        dense_units=(8, 4),
    )


def full_loss_case(seed: int = 0, batch: int = 2):
    """Closure and float64 parameters for the complete objective on a tiny frozen model."""
    from ..model import forward, init_model
    from ..training import LossConfig, total_loss

    cfg = tiny_model_config()
    rng = np.random.default_rng(seed)
    params = init_model(cfg, seed=seed, dtype=np.float64)
    # non-trivial heads and frozen batchnorm statistics
    params["head/logvar/kernel"].data[...] = rng.normal(0.0, 0.3, params["head/logvar/kernel"].shape)
    params["attention/fusion"].data[...] = rng.normal(0.0, 0.5, 2)
    for state in params.buffers.values():
        state["moving_mean"][...] = rng.normal(0.0, 0.1, state["moving_mean"].shape)
        state["moving_var"][...] = rng.uniform(0.5, 1.5, state["moving_var"].shape)
    windows = rng.normal(0.0, 1.0, (batch, cfg.window_len, cfg.n_features))
    settings = rng.normal(0.0, 1.0, (batch, cfg.n_settings))
    y = rng.uniform(0.05, 1.0, batch)
    w = np.array([2.5, 1.0])[:batch] if batch <= 2 else rng.choice([1.0, 1.5, 2.5], batch)
    lcfg = LossConfig()

    def closure():
        out = forward(params, cfg, windows, settings, training=False)
        return total_loss(out, y, w, params, lcfg)

    return closure, params.trainable()


def run_suite(
    primitive_tol: float = PRIMITIVE_TOL,
    full_tol: float = FULL_LOSS_TOL,
    seed: int = 0,
    include_full: bool = True,
    full_coords: int = 12,
) -> SuiteResult:
    cases = []
    for name, make in _primitive_cases(seed).items():
        closure, params = make()
        res = check_gradients(closure, params, n_coords=200, seed=seed)
        cases.append(CaseResult(name, res.max_rel_error, res.worst, primitive_tol))
    if include_full:
        closure, params = full_loss_case(seed)
        res = check_gradients(closure, params, n_coords=full_coords, seed=seed)
        cases.append(CaseResult("total_loss", res.max_rel_error, res.worst, full_tol))
    return SuiteResult(cases)
