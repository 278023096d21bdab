"""Fitted preprocessing chain and its scikit-learn style wrapper.

Order of operations (fit on training engines only):
sensor selection -> per-engine wavelet denoising -> k-means over raw
operational settings -> per-cluster z-scoring of the selected sensors.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ..cmapss_io import DEFAULT_RUL_CAP, EngineTrajectory, compute_capped_rul
from .clusters import ConditionClusterModel, assign_clusters, fit_condition_clusters
from .features import STD_FLOOR, ClusterNormalizer, FeatureSelection, fit_normalizers, select_features
from .wavelet import WaveletConfig, wavelet_denoise

FORMAT_VERSION = "v1"


@dataclass
class ProcessedTrajectory:
    engine_id: int
    features: np.ndarray  # T x F, cluster-normalized
    settings: np.ndarray  # T x 3, globally standardized (encoder input)
    clusters: np.ndarray  # T

    def __len__(self) -> int:
        return len(self.features)


@dataclass
class PreprocessModel:
    selection: FeatureSelection
    wavelet: WaveletConfig
    denoise: bool
    clusters: ConditionClusterModel
    normalizer: ClusterNormalizer
    settings_mean: np.ndarray
    settings_std: np.ndarray
    standardize_cluster_inputs: bool = False
    rul_cap: float = DEFAULT_RUL_CAP
    version: str = FORMAT_VERSION

    @property
    def n_features(self) -> int:
        return len(self.selection.selected_sensor_indices)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "rul_cap": self.rul_cap,
            "selection": self.selection.to_dict(),
            "wavelet": self.wavelet.to_dict(),
            "denoise": self.denoise,
            "standardize_cluster_inputs": self.standardize_cluster_inputs,
            "clusters": self.clusters.to_dict(),
            "normalizer": self.normalizer.to_dict(),
            "settings_mean": self.settings_mean.tolist(),
            "settings_std": self.settings_std.tolist(),
        }

    def to_json(self) -> str:
        # json writes floats with repr(), which round-trips exactly
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessModel":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported preprocess model version {d.get('version')!r}")
        return cls(
            selection=FeatureSelection.from_dict(d["selection"]),
            wavelet=WaveletConfig(**d["wavelet"]),
            denoise=bool(d["denoise"]),
            clusters=ConditionClusterModel.from_dict(d["clusters"]),
            normalizer=ClusterNormalizer.from_dict(d["normalizer"]),
            settings_mean=np.asarray(d["settings_mean"], dtype=np.float64),
            settings_std=np.asarray(d["settings_std"], dtype=np.float64),
            standardize_cluster_inputs=bool(d["standardize_cluster_inputs"]),
            rul_cap=float(d["rul_cap"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "PreprocessModel":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def _cluster_inputs(self, settings: np.ndarray) -> np.ndarray:
        if not self.standardize_cluster_inputs:
            return settings
        return _zscore(settings, self.settings_mean, self.settings_std)

    def denoised_sensors(self, traj: EngineTrajectory) -> np.ndarray:
        x = traj.sensors[:, self.selection.columns]
        if not self.denoise:
            return x.copy()
        return np.column_stack([wavelet_denoise(x[:, j], self.wavelet) for j in range(x.shape[1])])

    def transform_one(self, traj: EngineTrajectory) -> ProcessedTrajectory:
        x = self.denoised_sensors(traj)
        clusters = assign_clusters(self.clusters, self._cluster_inputs(traj.settings))
        return ProcessedTrajectory(
            engine_id=traj.engine_id,
            features=self.normalizer.transform(x, clusters),
            settings=_zscore(traj.settings, self.settings_mean, self.settings_std),
            clusters=clusters,
        )


def _zscore(x, mean, std):
    degenerate = std <= STD_FLOOR
    return np.where(degenerate, 0.0, (x - mean) / np.where(degenerate, 1.0, std))


def fit_preprocess_model(
    trajs: list[EngineTrajectory],
    *,
    rul_cap: float = DEFAULT_RUL_CAP,
    corr_min: float = 0.1,
    std_min: float = 0.01,
    n_clusters: int = 6,
    wavelet: WaveletConfig = WaveletConfig(),
    denoise: bool = True,
    standardize_cluster_inputs: bool = False,
    seed: int = 0,
) -> PreprocessModel:
    ruls = [compute_capped_rul(t, rul_cap) for t in trajs]
    selection = select_features(trajs, ruls, corr_min, std_min)
    if not selection.selected_sensor_indices:
        raise ValueError("no sensor passed the selection thresholds")

    settings = np.vstack([t.settings for t in trajs])
    s_mean = settings.mean(axis=0)
    s_std = np.maximum(settings.std(axis=0), STD_FLOOR)

    partial = PreprocessModel(
        selection=selection,
        wavelet=wavelet,
        denoise=denoise,
        clusters=None,
        normalizer=None,
        settings_mean=s_mean,
        settings_std=s_std,
        standardize_cluster_inputs=standardize_cluster_inputs,
        rul_cap=rul_cap,
    )
    cluster_model = fit_condition_clusters(partial._cluster_inputs(settings), k=n_clusters, seed=seed)
    partial.clusters = cluster_model

    feats = np.vstack([partial.denoised_sensors(t) for t in trajs])
    labels = assign_clusters(cluster_model, partial._cluster_inputs(settings))
    partial.normalizer = fit_normalizers(feats, labels, n_clusters=n_clusters)
    return partial


class ConditionAwarePreprocessor(TransformerMixin, BaseEstimator):
    """Fit on a list of training :class:`EngineTrajectory`; transform any list of them.

    ``transform`` returns one :class:`ProcessedTrajectory` per engine.
    """

    def __init__(
        self,
        rul_cap=DEFAULT_RUL_CAP,
        corr_min=0.1,
        std_min=0.01,
        n_clusters=6,
        wavelet_level=4,
        threshold_scale=0.5,
        denoise=True,
        standardize_cluster_inputs=False,
        random_state=0,
    ):
        self.rul_cap = rul_cap
        self.corr_min = corr_min
        self.std_min = std_min
        self.n_clusters = n_clusters
        self.wavelet_level = wavelet_level
        self.threshold_scale = threshold_scale
        self.denoise = denoise
        self.standardize_cluster_inputs = standardize_cluster_inputs
        self.random_state = random_state

    def fit(self, X, y=None):
        trajs = _as_trajectories(X)
        self.model_ = fit_preprocess_model(
            trajs,
            rul_cap=self.rul_cap,
            corr_min=self.corr_min,
            std_min=self.std_min,
            n_clusters=self.n_clusters,
            wavelet=WaveletConfig(decomposition_level=self.wavelet_level, threshold_scale=self.threshold_scale),
            denoise=self.denoise,
            standardize_cluster_inputs=self.standardize_cluster_inputs,
            seed=self.random_state,
        )
        self.n_features_out_ = self.model_.n_features
        return self

    def transform(self, X) -> list[ProcessedTrajectory]:
        if not hasattr(self, "model_"):
            raise NotFittedError("ConditionAwarePreprocessor is not fitted yet")
        return [self.model_.transform_one(t) for t in _as_trajectories(X)]

    @classmethod
    def from_model(cls, model: PreprocessModel) -> "ConditionAwarePreprocessor":
        est = cls(
            rul_cap=model.rul_cap,
            corr_min=model.selection.corr_threshold,
            std_min=model.selection.std_threshold,
            n_clusters=model.clusters.k,
            wavelet_level=model.wavelet.decomposition_level,
            threshold_scale=model.wavelet.threshold_scale,
            denoise=model.denoise,
            standardize_cluster_inputs=model.standardize_cluster_inputs,
        )
        est.model_ = model
        est.n_features_out_ = model.n_features
        return est


def _as_trajectories(X) -> list[EngineTrajectory]:
    if isinstance(X, EngineTrajectory):
        return [X]
    trajs = list(X)
    if not trajs or not all(isinstance(t, EngineTrajectory) for t in trajs):
        raise TypeError("expected a non-empty sequence of EngineTrajectory")
    return trajs
