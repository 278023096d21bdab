"""Operating-regime clustering over the three operational settings (k-means)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_ITER = 300


@dataclass
class ConditionClusterModel:
    k: int
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "inertia": self.inertia,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionClusterModel":
        return cls(
            k=int(d["k"]),
            centroids=np.asarray(d["centroids"], dtype=np.float64),
            inertia=float(d["inertia"]),
            n_iter=int(d.get("n_iter", 0)),
        )


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(len(x), p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def fit_condition_clusters(
    settings_rows, k: int = 6, seed: int = 0, max_iter: int = MAX_ITER
) -> ConditionClusterModel:
    """Lloyd iterations from a k-means++ start, until assignments stop changing."""
    x = np.asarray(settings_rows, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected an N x d matrix, got shape {x.shape}")
    n_distinct = len(np.unique(x, axis=0))
    if n_distinct < k:
        raise ValueError(f"need at least {k} distinct rows for k={k}, got {n_distinct}")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = None
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dists(x, centroids)
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(x)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        point_d2 = d2[np.arange(len(x)), labels]
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
            else:
                # empty cluster: move it onto the worst-served point
                far = int(point_d2.argmax())
                centroids[j] = x[far]
                labels[far] = j
                point_d2[far] = 0.0
    d2 = _sq_dists(x, centroids)
    inertia = float(d2.min(axis=1).sum())
    return ConditionClusterModel(k, centroids, inertia, n_iter, history)


def assign_clusters(model: ConditionClusterModel, settings) -> np.ndarray:
    """Nearest-centroid index per row; ties go to the lowest index."""
    x = np.atleast_2d(np.asarray(settings, dtype=np.float64))
    return _sq_dists(x, model.centroids).argmin(axis=1)


def assign_cluster(model: ConditionClusterModel, setting) -> int:
    return int(assign_clusters(model, np.asarray(setting)[None, :])[0])
