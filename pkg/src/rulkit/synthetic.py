"""Synthetic run-to-failure data in the CMAPSS text layout.

Engines follow an exponential health-index decay; twelve sensors respond to
degradation, the rest are constant or pure noise. Operating regimes add
per-regime offsets, so per-cluster normalization matters. Intended for
tests and demos only; it is not a substitute for the real benchmark.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .cmapss_io import EngineTrajectory, format_trajectory_table

INFORMATIVE = (2, 3, 4, 7, 8, 11, 12, 13, 15, 17, 20, 21)
CONSTANT = (1, 5, 6, 10, 16, 18, 19)
NOISE_ONLY = (9, 14)

REGIMES = np.array(
    [
        [0.0, 0.0, 100.0],
        [10.0, 0.25, 100.0],
        [20.0, 0.70, 100.0],
        [25.0, 0.62, 60.0],
        [35.0, 0.84, 100.0],
        [42.0, 0.84, 100.0],
    ]
)


def _engine(rng, engine_id, life, n_regimes, base, slope, regime_gain, stop=None):
    T = life if stop is None else stop
    t = np.arange(1, T + 1)
    onset = rng.uniform(0.3, 0.6) * life
    deg = np.clip((t - onset) / (life - onset), 0.0, None) ** 1.5
    regime = rng.integers(0, n_regimes, size=T) if n_regimes > 1 else np.zeros(T, int)
    settings = REGIMES[regime] + rng.normal(0.0, [0.002, 0.0002, 0.0], size=(T, 3))
    sensors = np.empty((T, 21))
    for j in range(21):
        s = j + 1
        level = base[j] + regime_gain[j] * regime
        if s in CONSTANT:
            sensors[:, j] = level
        elif s in NOISE_ONLY:
            sensors[:, j] = level + rng.normal(0.0, 0.05 * abs(base[j]) + 0.1, T)
        else:
            sensors[:, j] = level + slope[j] * deg + rng.normal(0.0, 0.15 * abs(slope[j]), T)
    return EngineTrajectory(engine_id, t, settings, sensors)


def make_engines(n_engines: int, seed: int = 0, n_regimes: int = 1, truncate: bool = False):
    """Return (trajectories, true final RUL per engine); ``truncate`` cuts each run before failure."""
    rng = np.random.default_rng(seed)
    const_rng = np.random.default_rng(1234)
    base = const_rng.uniform(5.0, 600.0, 21)
    slope = const_rng.uniform(2.0, 8.0, 21) * const_rng.choice([-1.0, 1.0], 21)
    regime_gain = const_rng.uniform(1.0, 20.0, 21)
    trajs, final = [], []
    for e in range(1, n_engines + 1):
        life = int(rng.integers(128, 300))
        stop = int(rng.integers(20, life - 5)) if truncate else None
        trajs.append(_engine(rng, e, life, n_regimes, base, slope, regime_gain, stop))
        final.append(0 if stop is None else life - stop)
    return trajs, np.array(final, dtype=float)


def write_dataset(
    directory,
    dataset_id: str = "FD001",
    n_train: int = 30,
    n_test: int = 20,
    n_regimes: int = 1,
    seed: int = 0,
) -> Path:
    """Write ``train_*``, ``test_*`` and ``RUL_*`` files for one subset."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train, _ = make_engines(n_train, seed, n_regimes)
    test, rul = make_engines(n_test, seed + 1, n_regimes, truncate=True)
    (directory / f"train_{dataset_id}.txt").write_text(format_trajectory_table(train))
    (directory / f"test_{dataset_id}.txt").write_text(format_trajectory_table(test))
    (directory / f"RUL_{dataset_id}.txt").write_text("".join(f"{int(r)}\n" for r in rul))
    return directory
