"""Sensor selection and per-cluster z-score normalization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STD_FLOOR = 1e-8


@dataclass
class FeatureSelection:
    selected_sensor_indices: list[int]
    dropped_low_variance: list[int]
    corr_threshold: float = 0.1
    std_threshold: float = 0.01
    correlations: dict[int, float] = field(default_factory=dict)

    @property
    def columns(self) -> list[int]:
        """0-based sensor columns of the selected channels."""
        return [i - 1 for i in self.selected_sensor_indices]

    def to_dict(self) -> dict:
        return {
            "selected_sensor_indices": list(self.selected_sensor_indices),
            "dropped_low_variance": list(self.dropped_low_variance),
            "corr_threshold": self.corr_threshold,
            "std_threshold": self.std_threshold,
            "correlations": {str(k): v for k, v in self.correlations.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSelection":
        return cls(
            selected_sensor_indices=[int(i) for i in d["selected_sensor_indices"]],
            dropped_low_variance=[int(i) for i in d["dropped_low_variance"]],
            corr_threshold=float(d["corr_threshold"]),
            std_threshold=float(d["std_threshold"]),
            correlations={int(k): float(v) for k, v in d.get("correlations", {}).items()},
        )


def select_features(train_trajs, ruls, corr_min: float = 0.1, std_min: float = 0.01) -> FeatureSelection:
    """Keep sensors with pooled std >= ``std_min`` and pooled |Pearson r| with RUL > ``corr_min``."""
    sensors = np.vstack([t.sensors for t in train_trajs])
    y = np.concatenate([np.asarray(r, dtype=np.float64) for r in ruls])
    if len(y) != len(sensors):
        raise ValueError(f"{len(sensors)} sensor rows but {len(y)} RUL values")
    if len(np.unique(y)) < 2:
        raise ValueError("RUL has zero variance; correlation is undefined")

    yc = y - y.mean()
    selected, dropped, corrs = [], [], {}
    for col in range(sensors.shape[1]):
        idx = col + 1
        s = sensors[:, col]
        std = s.std()
        if std < std_min:
            dropped.append(idx)
            continue
        sc = s - s.mean()
        r = float((sc @ yc) / np.sqrt((sc @ sc) * (yc @ yc)))
        corrs[idx] = r
        if abs(r) > corr_min:
            selected.append(idx)
    return FeatureSelection(selected, dropped, corr_min, std_min, corrs)


class UnseenClusterError(KeyError):
    pass


@dataclass
class ClusterNormalizer:
    means: np.ndarray
    stds: np.ndarray
    seen: np.ndarray
    floor: float = STD_FLOOR

    def _check(self, clusters: np.ndarray):
        bad = (clusters < 0) | (clusters >= len(self.seen))
        bad[~bad] = ~self.seen[clusters[~bad]]
        if bad.any():
            raise UnseenClusterError(f"cluster {int(clusters[bad][0])} was not seen at fit time")

    def transform(self, x, clusters) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        clusters = np.asarray(clusters, dtype=np.int64)
        self._check(np.atleast_1d(clusters))
        mu, sd = self.means[clusters], self.stds[clusters]
        degenerate = sd <= self.floor
        return np.where(degenerate, 0.0, (x - mu) / np.where(degenerate, 1.0, sd))

    def inverse_transform(self, z, clusters) -> np.ndarray:
        clusters = np.asarray(clusters, dtype=np.int64)
        self._check(np.atleast_1d(clusters))
        return np.asarray(z) * self.stds[clusters] + self.means[clusters]

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "seen": self.seen.astype(bool).tolist(),
            "floor": self.floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterNormalizer":
        return cls(
            means=np.asarray(d["means"], dtype=np.float64),
            stds=np.asarray(d["stds"], dtype=np.float64),
            seen=np.asarray(d["seen"], dtype=bool),
            floor=float(d["floor"]),
        )


def fit_normalizers(features, clusters, n_clusters: int | None = None, floor: float = STD_FLOOR) -> ClusterNormalizer:
    """Per-cluster population mean/std of each feature column."""
    x = np.asarray(features, dtype=np.float64)
    c = np.asarray(clusters, dtype=np.int64)
    k = int(c.max()) + 1 if n_clusters is None else n_clusters
    means = np.zeros((k, x.shape[1]))
    stds = np.ones((k, x.shape[1]))
    seen = np.zeros(k, dtype=bool)
    for j in range(k):
        rows = x[c == j]
        if len(rows) == 0:
            continue
        if len(rows) < 2:
            raise ValueError(f"cluster {j} has {len(rows)} row(s); need at least 2")
        means[j] = rows.mean(axis=0)
        stds[j] = np.maximum(rows.std(axis=0), floor)
        seen[j] = True
    return ClusterNormalizer(means, stds, seen, floor)


def apply_normalize(normalizer: ClusterNormalizer, row, cluster) -> np.ndarray:
    return normalizer.transform(row, cluster)
