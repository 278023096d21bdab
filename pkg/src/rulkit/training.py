"""Weighted Gaussian NLL objective, AdamW, plateau schedule, early stopping and the training loop."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .autodiff import ops
from .autodiff.tensor import NumericError, Tensor, backward, zero_grad
from .dataset import WindowSet, batch_iter
from .model import DropoutStreams, ForwardOutput, ModelConfig, ParamStore, forward, predict

log = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

SEED_STREAMS = {"init": 0, "split": 1, "clusters": 2, "augment": 3, "shuffle": 4, "dropout": 5}


def stream_seed(seed: int, label: str) -> int:
    """Seed of a named random stream derived from the run seed."""
    return int(np.random.SeedSequence([seed, SEED_STREAMS[label]]).generate_state(1)[0])


@dataclass
class LossConfig:
    lambda_u: float = 0.005
    lambda_w: float = 1e-4
    critical_below: float = 30.0
    near_critical_below: float = 80.0
    critical_weight: float = 2.5
    near_critical_weight: float = 1.5
    default_weight: float = 1.0

    def __post_init__(self):
        if min(self.critical_weight, self.near_critical_weight, self.default_weight) <= 0:
            raise ValueError("sample weights must be positive")
        if self.critical_below > self.near_critical_below:
            raise ValueError("weight tiers are out of order")


def rul_sample_weight(y, cfg: LossConfig = LossConfig()):
    """Tiered weight from the true RUL in cycles."""
    y = np.asarray(y, dtype=np.float64)
    w = np.where(
        y < cfg.critical_below,
        cfg.critical_weight,
        np.where(y < cfg.near_critical_below, cfg.near_critical_weight, cfg.default_weight),
    )
    return float(w) if w.ndim == 0 else w


def gaussian_nll(mu, log_var, y, w=1.0):
    """Per-sample weighted Gaussian negative log-likelihood."""
    mu, log_var, y, w = (np.asarray(a, dtype=np.float64) for a in (mu, log_var, y, w))
    out = w * ((y - mu) ** 2 / (2.0 * np.exp(log_var)) + log_var / 2.0 + HALF_LOG_2PI)
    return float(out) if out.ndim == 0 else out


def l2_penalty(params: ParamStore) -> Tensor:
    terms = [ops.sum(ops.square(k)) for k in params.regularized()]
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return total


def total_loss(out: ForwardOutput, y, w, params: ParamStore, cfg: LossConfig = LossConfig()) -> Tensor:
    """Batch objective: mean weighted NLL + lambda_u * mean(log_var^2) + lambda_w * sum of squared kernels.

    Without a log-variance output the data term is the weighted squared error.
    """
    dtype = out.mean.dtype
    y = Tensor(np.asarray(y, dtype=dtype))
    w = Tensor(np.asarray(w, dtype=dtype))
    diff = ops.sub(out.mean, y)
    if out.log_var is None:
        data = ops.mean(ops.mul(w, ops.square(diff)))
    else:
        lv = out.log_var
        nll = ops.add(
            ops.add(ops.mul(ops.mul(ops.square(diff), ops.exp(ops.mul(lv, -1.0))), 0.5), ops.mul(lv, 0.5)),
            HALF_LOG_2PI,
        )
        data = ops.add(ops.mean(ops.mul(w, nll)), ops.mul(ops.mean(ops.square(lv)), cfg.lambda_u))
    return ops.add(data, ops.mul(l2_penalty(params), cfg.lambda_w))


def clip_gradient_norm(grads: dict[str, np.ndarray], max_norm: float = 1.0) -> tuple[dict[str, np.ndarray], float]:
    """Rescale all gradients together when their global L2 norm exceeds ``max_norm``."""
    sq = 0.0
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        sq += float(np.sum(np.square(g, dtype=np.float64)))
    norm = math.sqrt(sq)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {n: (g * scale).astype(g.dtype) for n, g in grads.items()}, norm


@dataclass
class AdamW:
    lr: float = 1.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.dtype)


@dataclass
class PlateauScheduler:
    lr: float = 1.5e-4
    patience: int = 10
    factor: float = 0.5
    min_lr: float = 1e-6
    threshold: float = 1e-4
    best: float = math.inf
    stale: int = 0

    def step(self, val_rmse: float) -> float:
        if val_rmse < self.best - self.threshold:
            self.best = val_rmse
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.stale = 0
        return self.lr


@dataclass
class EarlyStopping:
    patience: int = 20
    max_epochs: int = 250
    threshold: float = 1e-4
    best: float = math.inf
    best_epoch: int = 0
    stale: int = 0
    snapshot: dict[str, np.ndarray] | None = None

    def update(self, epoch: int, val_rmse: float, params: ParamStore) -> bool:
        """Record epoch ``epoch`` (1-based); True means keep training."""
        if val_rmse < self.best - self.threshold:
            self.best = val_rmse
            self.best_epoch = epoch
            self.stale = 0
            self.snapshot = params.snapshot()
        else:
            self.stale += 1
        return self.stale < self.patience and epoch < self.max_epochs

    def restore(self, params: ParamStore) -> None:
        if self.snapshot is not None:
            params.load_state_arrays(self.snapshot)


@dataclass
class TrainConfig:
    max_epochs: int = 250
    batch_size: int = 64
    learning_rate: float = 1.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    lr_patience: int = 10
    lr_factor: float = 0.5
    min_lr: float = 1e-6
    early_stop_patience: int = 20
    improvement_threshold: float = 1e-4
    train_fraction: float = 0.8
    augment_factor: int = 3
    jitter_sigma: float = 0.005
    scale_low: float = 0.95
    scale_high: float = 1.05


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_rmse: float
    lr: float
    wall_time: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_rmse: float = math.inf
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def comparable(self) -> list[tuple]:
        """Records without wall-clock time, for determinism checks."""
        return [(r.epoch, r.train_loss, r.val_rmse, r.lr) for r in self.records]


class TrainingDivergedError(FloatingPointError):
    pass


def rmse_cycles(params: ParamStore, cfg: ModelConfig, ws: WindowSet) -> float:
    pred = predict(params, cfg, ws.windows, ws.settings)
    return float(np.sqrt(np.mean((pred.mean - ws.labels) ** 2)))


def fit_model(
    params: ParamStore,
    cfg: ModelConfig,
    train_set: WindowSet,
    val_set: WindowSet,
    tcfg: TrainConfig = TrainConfig(),
    lcfg: LossConfig = LossConfig(),
    seed: int = 42,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainHistory:
    """Mini-batch training with plateau LR decay and early stopping; best weights are restored."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    trainable = params.trainable()
    opt = AdamW(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.eps, tcfg.weight_decay)
    sched = PlateauScheduler(tcfg.learning_rate, tcfg.lr_patience, tcfg.lr_factor, tcfg.min_lr, tcfg.improvement_threshold)
    stopper = EarlyStopping(tcfg.early_stop_patience, tcfg.max_epochs, tcfg.improvement_threshold)
    shuffle_seed = stream_seed(seed, "shuffle")
    dropout_seed = stream_seed(seed, "dropout")
    history = TrainHistory()
    step = 0
    for epoch in range(1, tcfg.max_epochs + 1):
        t0 = time.perf_counter()
        opt.lr = sched.lr
        losses, sizes = [], []
        for b_idx, batch in enumerate(batch_iter(train_set, tcfg.batch_size, shuffle_seed, epoch)):
            step += 1
            y = batch.labels / cfg.target_scale
            w = rul_sample_weight(batch.labels, lcfg) if cfg.rul_weighting else np.ones(len(batch))
            try:
                out = forward(params, cfg, batch.windows, batch.settings, training=True,
                              dropout=DropoutStreams(dropout_seed, step))
            except NumericError as exc:
                raise TrainingDivergedError(f"epoch {epoch}, batch {b_idx}: {exc}") from None
            loss = total_loss(out, y, w, params, lcfg)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b_idx}")
            zero_grad(trainable.values())
            grads = backward(loss, trainable)
            try:
                grads, _ = clip_gradient_norm(grads, tcfg.clip_norm)
            except NumericError as exc:
                raise TrainingDivergedError(f"epoch {epoch}, batch {b_idx}: {exc}") from None
            opt.step(trainable, grads)
            losses.append(value)
            sizes.append(len(batch))
        zero_grad(trainable.values())
        val = rmse_cycles(params, cfg, val_set)
        if not math.isfinite(val):
            raise TrainingDivergedError(f"non-finite validation RMSE at epoch {epoch}")
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.average(losses, weights=sizes)),
            val_rmse=val,
            lr=opt.lr,
            wall_time=time.perf_counter() - t0,
        )
        history.records.append(record)
        log.info("epoch %d loss %.5f val_rmse %.3f lr %.2e", epoch, record.train_loss, val, opt.lr)
        if on_epoch is not None:
            on_epoch(record)
        keep_going = stopper.update(epoch, val, params)
        sched.step(val)
        if not keep_going:
            history.stopped_early = epoch < tcfg.max_epochs
            break
    stopper.restore(params)
    history.best_epoch = stopper.best_epoch
    history.best_val_rmse = stopper.best
    return history


def train(run, bundle=None, on_epoch=None):
    """Full pipeline for a :class:`rulkit.config.RunConfig`; see :func:`rulkit.pipeline.train`."""
    from .pipeline import train as _train

    return _train(run, bundle, on_epoch)
