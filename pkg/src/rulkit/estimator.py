"""scikit-learn compatible regressor around the network and training loop."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import SplitSpec, WindowSet, split_by_engine
from .model import GaussianPrediction, ModelConfig, init_model, predict
from .training import LossConfig, TrainConfig, fit_model, stream_seed


def _check_windows(X, n_features: int | None = None, window_len: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 3:
        raise ValueError(f"expected windows of shape (n_samples, window_len, n_features), got {X.shape}")
    if len(X) == 0:
        raise ValueError("no samples given")
    if not np.all(np.isfinite(X)):
        raise ValueError("windows contain NaN or infinite values")
    if window_len is not None and X.shape[1] != window_len:
        raise ValueError(f"model was fitted on windows of length {window_len}, got {X.shape[1]}")
    if n_features is not None and X.shape[2] != n_features:
        raise ValueError(f"model was fitted on {n_features} features, got {X.shape[2]}")
    return X


def _check_settings(settings, n: int) -> np.ndarray | None:
    if settings is None:
        return None
    s = np.asarray(settings, dtype=np.float32)
    if s.shape != (n, 3):
        raise ValueError(f"settings must have shape ({n}, 3), got {s.shape}")
    return s


class UncertaintyRULRegressor(RegressorMixin, BaseEstimator):
    """Predicts a Gaussian over RUL (cycles) from preprocessed sensor windows.

    ``fit(X, y, settings=None, groups=None)`` takes windows ``X`` (N x L x F),
    targets in cycles, optional operating settings (N x 3) that feed the
    condition encoder, and optional engine ids used for the validation split.
    ``predict`` returns the mean; ``predict_dist`` the full distribution.
    """

    def __init__(
        self,
        filters=32,
        lstm_units=64,
        attention_heads=4,
        dual_attention=True,
        uncertainty_head=True,
        rul_weighting=True,
        max_epochs=250,
        batch_size=64,
        learning_rate=1.5e-4,
        early_stop_patience=20,
        validation_fraction=0.2,
        target_scale=125.0,
        random_state=42,
    ):
        self.filters = filters
        self.lstm_units = lstm_units
        self.attention_heads = attention_heads
        self.dual_attention = dual_attention
        self.uncertainty_head = uncertainty_head
        self.rul_weighting = rul_weighting
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.early_stop_patience = early_stop_patience
        self.validation_fraction = validation_fraction
        self.target_scale = target_scale
        self.random_state = random_state

    def fit(self, X, y, settings=None, groups=None):
        X = _check_windows(X)
        n = len(X)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if len(y) != n:
            raise ValueError(f"{n} windows but {len(y)} targets")
        if not np.all(np.isfinite(y)) or np.any(y < 0):
            raise ValueError("targets must be finite and non-negative")
        s = _check_settings(settings, n)
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie strictly between 0 and 1")
        groups = np.arange(n) if groups is None else np.asarray(groups).reshape(-1)
        if len(groups) != n:
            raise ValueError(f"{n} windows but {len(groups)} group labels")

        self.config_ = ModelConfig(
            window_len=X.shape[1],
            n_features=X.shape[2],
            filters=self.filters,
            lstm_units=self.lstm_units,
            attention_heads=self.attention_heads,
            dual_attention=self.dual_attention,
            condition_encoder=s is not None,
            uncertainty_head=self.uncertainty_head,
            rul_weighting=self.rul_weighting,
            target_scale=self.target_scale,
        )
        seed = int(self.random_state)
        uniq = np.unique(groups)
        train_g, _ = split_by_engine(uniq, SplitSpec(1.0 - self.validation_fraction, stream_seed(seed, "split")))
        is_train = np.isin(groups, train_g)
        full = WindowSet(
            X,
            np.zeros((n, 3), np.float32) if s is None else s,
            np.zeros(n, np.int64),
            y,
            groups.astype(np.int64) if np.issubdtype(groups.dtype, np.integer) else np.arange(n),
        )
        self.params_ = init_model(self.config_, seed=stream_seed(seed, "init"))
        tcfg = TrainConfig(
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            early_stop_patience=self.early_stop_patience,
        )
        self.history_ = fit_model(
            self.params_,
            self.config_,
            full.subset(is_train),
            full.subset(~is_train),
            tcfg,
            LossConfig(),
            seed=seed,
        )
        self.n_features_in_ = X.shape[2]
        return self

    def predict_dist(self, X, settings=None) -> GaussianPrediction:
        check_is_fitted(self, "params_")
        X = _check_windows(X, self.config_.n_features, self.config_.window_len)
        s = _check_settings(settings, len(X))
        if self.config_.condition_encoder and s is None:
            raise ValueError("this model was fitted with settings; pass them to predict as well")
        return predict(self.params_, self.config_, X, s if self.config_.condition_encoder else None)

    def predict(self, X, settings=None) -> np.ndarray:
        return self.predict_dist(X, settings).mean
