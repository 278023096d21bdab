"""Sliding windows, engine-level split, augmentation and mini-batching."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

WINDOW_LEN = 30
CACHE_MAGIC = b"RULD"
CACHE_VERSION = 1


@dataclass
class WindowSample:
    window: np.ndarray
    settings: np.ndarray
    cluster: int
    label: float
    engine_id: int = 0


@dataclass
class WindowSet:
    """Column-oriented collection of windows; indexes like a list of :class:`WindowSample`."""

    windows: np.ndarray  # N x L x F
    settings: np.ndarray  # N x 3
    clusters: np.ndarray  # N
    labels: np.ndarray  # N, cycles
    engine_ids: np.ndarray  # N

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return WindowSample(
                self.windows[i], self.settings[i], int(self.clusters[i]), float(self.labels[i]), int(self.engine_ids[i])
            )
        return self.subset(i)

    def __iter__(self) -> Iterator[WindowSample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(
            self.windows[idx], self.settings[idx], self.clusters[idx], self.labels[idx], self.engine_ids[idx]
        )

    @classmethod
    def concat(cls, sets: Sequence["WindowSet"]) -> "WindowSet":
        return cls(
            np.concatenate([s.windows for s in sets]),
            np.concatenate([s.settings for s in sets]),
            np.concatenate([s.clusters for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.engine_ids for s in sets]),
        )

    @classmethod
    def empty(cls, window_len: int, n_features: int) -> "WindowSet":
        return cls(
            np.zeros((0, window_len, n_features), np.float32),
            np.zeros((0, 3), np.float32),
            np.zeros(0, np.int64),
            np.zeros(0, np.float64),
            np.zeros(0, np.int64),
        )


def _pad_front(x: np.ndarray, length: int) -> np.ndarray:
    missing = length - len(x)
    if missing <= 0:
        return x
    return np.concatenate([np.repeat(x[:1], missing, axis=0), x])


def make_windows(
    features,
    ruls,
    window_len: int = WINDOW_LEN,
    settings=None,
    clusters=None,
    engine_id: int = 0,
) -> WindowSet:
    """All stride-1 windows of a trajectory; short trajectories become one front-padded window.

    Window ``i`` covers rows ``i .. i+L-1`` and is labelled with the RUL of its last row;
    its settings vector and cluster are those of the last row as well.
    """
    x = np.asarray(features, dtype=np.float32)
    y = np.asarray(ruls, dtype=np.float64)
    n = len(x)
    if n < 1:
        raise ValueError("trajectory is empty")
    if len(y) != n:
        raise ValueError(f"{n} feature rows but {len(y)} labels")
    s = np.zeros((n, 3), np.float32) if settings is None else np.asarray(settings, dtype=np.float32)
    c = np.zeros(n, np.int64) if clusters is None else np.asarray(clusters, dtype=np.int64)

    if n < window_len:
        x = _pad_front(x, window_len)
        ends = np.array([n - 1])
        windows = x[None]
    else:
        windows = np.lib.stride_tricks.sliding_window_view(x, window_len, axis=0).transpose(0, 2, 1).copy()
        ends = np.arange(window_len - 1, n)
    return WindowSet(
        windows=windows,
        settings=s[ends],
        clusters=c[ends],
        labels=y[ends],
        engine_ids=np.full(len(ends), engine_id, dtype=np.int64),
    )


def last_window(features, settings=None, clusters=None, window_len: int = WINDOW_LEN, engine_id: int = 0) -> WindowSet:
    """The single window ending at the final available cycle (label left at 0)."""
    x = np.asarray(features)
    n = len(x)
    start = max(0, n - window_len)
    sl = slice(start, n)
    return make_windows(
        x[sl],
        np.zeros(n - start),
        window_len,
        None if settings is None else np.asarray(settings)[sl],
        None if clusters is None else np.asarray(clusters)[sl],
        engine_id,
    ).subset(slice(-1, None))


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")


def split_by_engine(engines: Sequence, spec: SplitSpec = SplitSpec()) -> tuple[list, list]:
    """Shuffle engines and cut at ``round(fraction * N)``; both parts are non-empty."""
    engines = list(engines)
    n = len(engines)
    if n < 2:
        raise ValueError("need at least 2 engines to split")
    n_train = int(np.floor(spec.train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    order = np.random.default_rng(spec.seed).permutation(n)
    train = [engines[i] for i in sorted(order[:n_train])]
    val = [engines[i] for i in sorted(order[n_train:])]
    return train, val


@dataclass(frozen=True)
class AugmentConfig:
    factor: int = 3
    jitter_sigma: float = 0.005
    scale_low: float = 0.95
    scale_high: float = 1.05
    seed: int = 0

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError("factor must be >= 1")
        if self.scale_low > self.scale_high:
            raise ValueError("scale_low must not exceed scale_high")


def augment(samples: WindowSet, cfg: AugmentConfig = AugmentConfig()) -> WindowSet:
    """Originals followed by ``factor - 1`` jittered and rescaled copies.

    Only window values change: copy = (window + N(0, sigma^2)) * U(low, high),
    with one scale draw per window.
    """
    if cfg.factor == 1:
        return samples
    rng = np.random.default_rng(cfg.seed)
    copies = [samples]
    for _ in range(cfg.factor - 1):
        w = samples.windows
        noise = rng.normal(0.0, cfg.jitter_sigma, size=w.shape)
        scale = rng.uniform(cfg.scale_low, cfg.scale_high, size=(len(w), 1, 1))
        copies.append(
            WindowSet(
                ((w + noise) * scale).astype(w.dtype),
                samples.settings.copy(),
                samples.clusters.copy(),
                samples.labels.copy(),
                samples.engine_ids.copy(),
            )
        )
    return WindowSet.concat(copies)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_iter(samples: WindowSet, batch_size: int = 64, seed: int = 0, epoch: int = 0) -> Iterator[WindowSet]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = epoch_permutation(len(samples), seed, epoch)
    for start in range(0, len(order), batch_size):
        yield samples.subset(order[start : start + batch_size])


# -- cache file ---------------------------------------------------------------
# layout: magic | u32 version | u32 header length | JSON header | float32 LE arrays

_FIELDS = ("windows", "settings", "clusters", "labels", "engine_ids")


def config_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def write_cache(path, sets: dict[str, WindowSet], meta: dict | None = None) -> None:
    arrays = []
    offset = 0
    blobs = []
    for name, ws in sets.items():
        for f in _FIELDS:
            a = np.ascontiguousarray(getattr(ws, f), dtype="<f4")
            arrays.append({"set": name, "field": f, "shape": list(a.shape), "offset": offset})
            blobs.append(a.tobytes())
            offset += a.nbytes
    meta = dict(meta or {})
    header = {"arrays": arrays, "meta": meta, "config_digest": config_digest(meta)}
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", CACHE_VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_cache(path) -> tuple[dict[str, WindowSet], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a window cache file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    header = json.loads(raw[12 : 12 + hlen])
    body = memoryview(raw)[12 + hlen :]
    parts: dict[str, dict] = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        a = np.frombuffer(body, dtype="<f4", count=count, offset=entry["offset"]).reshape(entry["shape"])
        parts.setdefault(entry["set"], {})[entry["field"]] = a
    sets = {}
    for name, p in parts.items():
        sets[name] = WindowSet(
            p["windows"].astype(np.float32),
            p["settings"].astype(np.float32),
            p["clusters"].astype(np.int64),
            p["labels"].astype(np.float64),
            p["engine_ids"].astype(np.int64),
        )
    return sets, header
