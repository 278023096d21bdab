"""Inception/BiLSTM/dual-attention network with a Gaussian output head."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, no_grad

ABLATIONS = ("dual_attention", "condition_encoder", "uncertainty_head", "rul_weighting", "denoising")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    window_len: int = 30
    n_features: int = 12
    n_settings: int = 3
    kernel_sizes: tuple[int, ...] = (3, 5, 7)
    filters: int = 32
    pool_size: int = 2
    lstm_units: int = 64
    recurrent_dropout: float = 0.2
    attention_heads: int = 4
    # per-head projection width; None means the width of the attended embedding axis
    attention_key_dim: int | None = None
    cond_units: tuple[int, ...] = (64, 32)
    cond_dropout: float = 0.2
    dense_units: tuple[int, ...] = (64, 32)
    dense_dropout: float = 0.48
    logvar_clip: tuple[float, float] = (-5.0, 3.0)
    logvar_bias_init: float = 1.0
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3
    target_scale: float = 125.0
    dual_attention: bool = True
    condition_encoder: bool = True
    uncertainty_head: bool = True
    rul_weighting: bool = True
    denoising: bool = True

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        self.cond_units = tuple(int(u) for u in self.cond_units)
        self.dense_units = tuple(int(u) for u in self.dense_units)
        self.logvar_clip = tuple(float(v) for v in self.logvar_clip)
        widths = (self.window_len, self.n_features, self.filters, self.lstm_units, self.attention_heads)
        if min(widths) <= 0 or min(self.cond_units + self.dense_units, default=1) <= 0:
            raise ConfigError("all layer widths must be positive")
        if any(k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be odd, got {self.kernel_sizes}")
        if self.logvar_clip[0] >= self.logvar_clip[1]:
            raise ConfigError(f"log-variance clip range {self.logvar_clip} is empty")
        if self.model_width % self.attention_heads:
            raise ConfigError(
                f"attention width {self.model_width} is not divisible by {self.attention_heads} heads"
            )
        if self.pooled_len < 1:
            raise ConfigError("window too short for the pooling layer")

    @property
    def model_width(self) -> int:
        return 2 * self.lstm_units

    @property
    def pooled_len(self) -> int:
        return self.window_len // self.pool_size

    def key_dim(self, embed: int) -> int:
        return self.attention_key_dim or embed

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ParamTensor:
    name: str
    tensor: Tensor
    trainable: bool = True
    regularized: bool = False


@dataclass
class ParamStore:
    params: dict[str, ParamTensor] = field(default_factory=dict)
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray, regularized: bool) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name}")
        self.params[name] = ParamTensor(name, Tensor(value, requires_grad=True, name=name), True, regularized)

    def add_batchnorm(self, name: str, channels: int, dtype) -> None:
        self.add(f"{name}/gamma", np.ones(channels, dtype), regularized=False)
        self.add(f"{name}/beta", np.zeros(channels, dtype), regularized=False)
        self.buffers[name] = {
            "moving_mean": np.zeros(channels, dtype),
            "moving_var": np.ones(channels, dtype),
        }

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return sorted(self.params)

    def trainable(self) -> dict[str, Tensor]:
        return {n: p.tensor for n, p in sorted(self.params.items()) if p.trainable}

    def regularized(self) -> list[Tensor]:
        return [p.tensor for _, p in sorted(self.params.items()) if p.regularized and p.trainable]

    def freeze(self, name: str) -> None:
        p = self.params[name]
        p.trainable = False
        p.tensor.requires_grad = False

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every parameter and buffer array keyed by a flat name."""
        out = {n: p.tensor.data for n, p in self.params.items()}
        for layer, bufs in self.buffers.items():
            for k, v in bufs.items():
                out[f"{layer}/{k}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_arrays()
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise KeyError(f"state mismatch; missing={missing[:5]} extra={extra[:5]}")
        for name, arr in arrays.items():
            if arr.shape != expected[name].shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {expected[name].shape}")
            expected[name][...] = arr

    def copy(self, dtype=None) -> "ParamStore":
        out = ParamStore()
        for n, p in self.params.items():
            data = p.tensor.data.astype(dtype or p.tensor.dtype, copy=True)
            t = Tensor(data, requires_grad=p.trainable, name=n)
            out.params[n] = ParamTensor(n, t, p.trainable, p.regularized)
        for layer, bufs in self.buffers.items():
            out.buffers[layer] = {k: v.astype(dtype or v.dtype, copy=True) for k, v in bufs.items()}
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_arrays().items()}


def count_params(params: ParamStore) -> int:
    return int(sum(p.tensor.data.size for p in params.params.values() if p.trainable))


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _add_dense(store, rng, name, n_in, n_out, dtype):
    store.add(f"{name}/kernel", _glorot(rng, (n_in, n_out), n_in, n_out, dtype), regularized=True)
    store.add(f"{name}/bias", np.zeros(n_out, dtype), regularized=False)


def _add_mha(store, rng, name, embed, heads, key_dim, dtype):
    width = heads * key_dim
    for proj in ("query", "key", "value"):
        _add_dense(store, rng, f"{name}/{proj}", embed, width, dtype)
    _add_dense(store, rng, f"{name}/output", width, embed, dtype)


def init_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ParamStore:
    """Fresh parameters. Layers are created in a fixed order so a seed fully determines the store."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    f = cfg.n_features
    for k in cfg.kernel_sizes:
        name = f"inception/k{k}"
        store.add(f"{name}/kernel", _glorot(rng, (k, f, cfg.filters), k * f, k * cfg.filters, dtype), regularized=True)
        store.add(f"{name}/bias", np.zeros(cfg.filters, dtype), regularized=False)
        store.add_batchnorm(f"{name}/bn", cfg.filters, dtype)

    d_in = cfg.filters * len(cfg.kernel_sizes)
    h = cfg.lstm_units
    for direction in ("forward", "backward"):
        name = f"bilstm/{direction}"
        store.add(f"{name}/kernel", _glorot(rng, (d_in, 4 * h), d_in, 4 * h, dtype), regularized=True)
        store.add(f"{name}/recurrent", _glorot(rng, (h, 4 * h), h, 4 * h, dtype), regularized=True)
        store.add(f"{name}/bias", np.zeros(4 * h, dtype), regularized=False)

    c, t = cfg.model_width, cfg.pooled_len
    _add_mha(store, rng, "attention/temporal", c, cfg.attention_heads, cfg.key_dim(c), dtype)
    if cfg.dual_attention:
        _add_mha(store, rng, "attention/sensor", t, cfg.attention_heads, cfg.key_dim(c), dtype)
        store.add("attention/fusion", np.zeros(2, dtype), regularized=False)

    head_in = c
    if cfg.condition_encoder:
        n_in = cfg.n_settings
        for i, units in enumerate(cfg.cond_units):
            _add_dense(store, rng, f"condition/dense{i}", n_in, units, dtype)
            store.add_batchnorm(f"condition/dense{i}/bn", units, dtype)
            n_in = units
        head_in += n_in

    n_in = head_in
    for i, units in enumerate(cfg.dense_units):
        _add_dense(store, rng, f"head/dense{i}", n_in, units, dtype)
        store.add_batchnorm(f"head/dense{i}/bn", units, dtype)
        n_in = units

    _add_dense(store, rng, "head/mean", n_in, 1, dtype)
    if cfg.uncertainty_head:
        store.add("head/logvar/kernel", np.zeros((n_in, 1), dtype), regularized=True)
        store.add("head/logvar/bias", np.full(1, cfg.logvar_bias_init, dtype), regularized=False)
    return store


class DropoutStreams:
    """Independent dropout generators per layer, derived from (seed, step, layer counter)."""

    def __init__(self, seed: int, step: int):
        self.seed = seed
        self.step = step
        self.counter = 0

    def next(self) -> np.random.Generator:
        self.counter += 1
        return np.random.default_rng([self.seed, self.step, self.counter])


class ForwardOutput(NamedTuple):
    mean: Tensor
    log_var: Tensor | None
    log_var_raw: Tensor | None


def multi_head_attention(x: Tensor, params: ParamStore, name: str, heads: int) -> Tensor:
    """Self-attention over axis 1 of a B x N x E tensor."""
    b, n, _ = x.shape
    width = params[f"{name}/query/kernel"].shape[1]
    dk = width // heads

    def split(t):
        return ops.transpose(ops.reshape(t, (b, n, heads, dk)), (0, 2, 1, 3))

    q = split(ops.dense(x, params[f"{name}/query/kernel"], params[f"{name}/query/bias"]))
    k = split(ops.dense(x, params[f"{name}/key/kernel"], params[f"{name}/key/bias"]))
    v = split(ops.dense(x, params[f"{name}/value/kernel"], params[f"{name}/value/bias"]))
    att = ops.scaled_dot_attention(q, k, v)  # B x heads x N x dk
    merged = ops.reshape(ops.transpose(att, (0, 2, 1, 3)), (b, n, width))
    return ops.dense(merged, params[f"{name}/output/kernel"], params[f"{name}/output/bias"])


def fusion_weights(params: ParamStore) -> Tensor:
    """softmax(w_s, w_t)."""
    return ops.softmax(params["attention/fusion"], axis=0)


def dual_attention(h: Tensor, params: ParamStore, cfg: ModelConfig) -> Tensor:
    temporal = multi_head_attention(h, params, "attention/temporal", cfg.attention_heads)
    if not cfg.dual_attention:
        return temporal
    # channels become the sequence axis, time the embedding
    sensor = ops.transpose(
        multi_head_attention(ops.transpose(h, (0, 2, 1)), params, "attention/sensor", cfg.attention_heads),
        (0, 2, 1),
    )
    alpha = fusion_weights(params)
    return ops.add(ops.mul(sensor, alpha[0]), ops.mul(temporal, alpha[1]))


def _bn(x, params, name, cfg, training):
    return ops.batchnorm(
        x, params[f"{name}/gamma"], params[f"{name}/beta"], params.buffers[name], training, cfg.bn_momentum, cfg.bn_eps
    )


def forward(
    params: ParamStore,
    cfg: ModelConfig,
    windows,
    settings=None,
    training: bool = False,
    dropout: DropoutStreams | None = None,
) -> ForwardOutput:
    """Raw network outputs in scaled target units (mean and clipped log-variance)."""
    dtype = params["head/mean/kernel"].dtype
    x = Tensor(np.asarray(windows, dtype=dtype))
    if x.ndim != 3 or x.shape[1:] != (cfg.window_len, cfg.n_features):
        raise ConfigError(f"expected windows of shape (B, {cfg.window_len}, {cfg.n_features}), got {x.shape}")
    b = x.shape[0]
    if training and dropout is None:
        dropout = DropoutStreams(0, 0)

    def drop(t, rate):
        if not training or rate <= 0:
            return t
        return ops.dropout(t, rate, dropout.next(), True)

    branches = []
    for k in cfg.kernel_sizes:
        name = f"inception/k{k}"
        y = ops.relu(ops.conv1d(x, params[f"{name}/kernel"], params[f"{name}/bias"]))
        branches.append(_bn(y, params, f"{name}/bn", cfg, training))
    h = ops.maxpool1d(ops.concat(branches, axis=-1), cfg.pool_size, axis=1)
    ops.check_finite(h, "inception")

    outs = []
    for direction in ("forward", "backward"):
        name = f"bilstm/{direction}"
        mask = None
        if training and cfg.recurrent_dropout > 0:
            keep = 1.0 - cfg.recurrent_dropout
            rng = dropout.next()
            mask = (rng.random((b, cfg.lstm_units)) < keep).astype(dtype) / dtype.type(keep)
        outs.append(
            ops.lstm(
                h,
                params[f"{name}/kernel"],
                params[f"{name}/recurrent"],
                params[f"{name}/bias"],
                reverse=direction == "backward",
                recurrent_mask=mask,
            )
        )
    h = ops.check_finite(ops.concat(outs, axis=-1), "bilstm")

    h = ops.check_finite(dual_attention(h, params, cfg), "attention")
    z = ops.mean(h, axis=1)

    if cfg.condition_encoder:
        if settings is None:
            raise ConfigError("condition encoder enabled but no settings were given")
        e = Tensor(np.asarray(settings, dtype=dtype).reshape(b, cfg.n_settings))
        for i in range(len(cfg.cond_units)):
            name = f"condition/dense{i}"
            e = ops.relu(ops.dense(e, params[f"{name}/kernel"], params[f"{name}/bias"]))
            e = drop(_bn(e, params, f"{name}/bn", cfg, training), cfg.cond_dropout)
        z = ops.concat([z, ops.check_finite(e, "condition_encoder")], axis=-1)

    for i in range(len(cfg.dense_units)):
        name = f"head/dense{i}"
        z = ops.relu(ops.dense(z, params[f"{name}/kernel"], params[f"{name}/bias"]))
        z = drop(_bn(z, params, f"{name}/bn", cfg, training), cfg.dense_dropout)
    ops.check_finite(z, "dense_head")

    mean = ops.reshape(ops.dense(z, params["head/mean/kernel"], params["head/mean/bias"]), (b,))
    if not cfg.uncertainty_head:
        return ForwardOutput(ops.check_finite(mean, "mean_head"), None, None)
    raw = ops.reshape(ops.dense(z, params["head/logvar/kernel"], params["head/logvar/bias"]), (b,))
    log_var = ops.clip(raw, *cfg.logvar_clip)
    return ForwardOutput(ops.check_finite(mean, "mean_head"), log_var, raw)


@dataclass
class GaussianPrediction:
    """Predicted RUL distribution. ``mean`` and ``sigma`` are in cycles;
    ``log_variance`` is in scaled-target units (``target_scale`` cycles per unit)."""

    mean: np.ndarray
    log_variance: np.ndarray | None
    target_scale: float = 125.0

    @property
    def sigma(self) -> np.ndarray | None:
        if self.log_variance is None:
            return None
        return np.exp(self.log_variance / 2.0) * self.target_scale

    def __len__(self) -> int:
        return len(self.mean)

    def __getitem__(self, idx) -> "GaussianPrediction":
        lv = None if self.log_variance is None else self.log_variance[idx]
        return GaussianPrediction(self.mean[idx], lv, self.target_scale)


def predict(params: ParamStore, cfg: ModelConfig, windows, settings=None, batch_size: int = 256) -> GaussianPrediction:
    """Inference-mode predictions in cycles."""
    windows = np.asarray(windows)
    means, lvs = [], []
    with no_grad():
        for start in range(0, len(windows), batch_size):
            sl = slice(start, start + batch_size)
            out = forward(params, cfg, windows[sl], None if settings is None else np.asarray(settings)[sl])
            means.append(out.mean.data.astype(np.float64))
            if out.log_var is not None:
                lvs.append(out.log_var.data.astype(np.float64))
    if not means:
        return GaussianPrediction(np.zeros(0), np.zeros(0) if cfg.uncertainty_head else None, cfg.target_scale)
    mean = np.concatenate(means) * cfg.target_scale
    lv = np.concatenate(lvs) if lvs else None
    return GaussianPrediction(mean, lv, cfg.target_scale)
