"""End-to-end steps shared by the CLI and the estimator: prepare windows, train, predict test engines."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint
from .cmapss_io import DatasetBundle, EngineTrajectory, compute_capped_rul, load_bundle
from .config import RunConfig
from .dataset import AugmentConfig, SplitSpec, WindowSet, augment, last_window, make_windows, split_by_engine
from .model import GaussianPrediction, ModelConfig, ParamStore, count_params, init_model, predict
from .signal_prep import PreprocessModel, ProcessedTrajectory, WaveletConfig, fit_preprocess_model
from .training import EpochRecord, TrainHistory, fit_model, stream_seed


@dataclass
class PreparedData:
    preprocess: PreprocessModel
    train: WindowSet
    val: WindowSet
    train_engines: list[int]
    val_engines: list[int]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: TrainHistory
    data: PreparedData


def load_run_bundle(run: RunConfig) -> DatasetBundle:
    if run.data_dir is None:
        raise FileNotFoundError("no data directory given (use --data-dir or set RUL_DATA_DIR)")
    return load_bundle(run.dataset, run.data_dir, cap_test_rul=run.prep.cap_test_rul, cap=run.prep.rul_cap)


def fit_preprocessing(run: RunConfig, trajs: list[EngineTrajectory]) -> PreprocessModel:
    p = run.prep
    return fit_preprocess_model(
        trajs,
        rul_cap=p.rul_cap,
        corr_min=p.corr_min,
        std_min=p.std_min,
        n_clusters=p.n_clusters,
        wavelet=WaveletConfig(decomposition_level=p.wavelet_level, threshold_scale=p.threshold_scale),
        denoise=run.model.denoising,
        standardize_cluster_inputs=p.standardize_cluster_inputs,
        seed=stream_seed(run.seed, "clusters"),
    )


def engine_windows(pre: PreprocessModel, trajs: list[EngineTrajectory], window_len: int) -> WindowSet:
    sets = []
    for t in trajs:
        p = pre.transform_one(t)
        sets.append(
            make_windows(p.features, compute_capped_rul(t, pre.rul_cap), window_len, p.settings, p.clusters, t.engine_id)
        )
    return WindowSet.concat(sets)


def prepare_data(run: RunConfig, trajs: list[EngineTrajectory]) -> PreparedData:
    """Fit preprocessing on the training engines, window them and split 80/20 by engine."""
    if run.max_engines is not None:
        trajs = trajs[: run.max_engines]
    pre = fit_preprocessing(run, trajs)
    train_t, val_t = split_by_engine(trajs, SplitSpec(run.train.train_fraction, stream_seed(run.seed, "split")))
    L = run.model.window_len
    return PreparedData(
        preprocess=pre,
        train=engine_windows(pre, train_t, L),
        val=engine_windows(pre, val_t, L),
        train_engines=[t.engine_id for t in train_t],
        val_engines=[t.engine_id for t in val_t],
    )


def train_prepared(
    run: RunConfig,
    data: PreparedData,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    t = run.train
    train_set = augment(
        data.train,
        AugmentConfig(t.augment_factor, t.jitter_sigma, t.scale_low, t.scale_high, stream_seed(run.seed, "augment")),
    )
    cfg = run.model_config(data.preprocess.n_features)
    params = init_model(cfg, seed=stream_seed(run.seed, "init"))
    history = fit_model(params, cfg, train_set, data.val, t, run.loss, seed=run.seed, on_epoch=on_epoch)
    metadata = {
        "dataset": run.dataset,
        "seed": run.seed,
        "ablations": list(run.ablations),
        "best_epoch": history.best_epoch,
        "best_val_rmse": history.best_val_rmse,
        "epochs_run": len(history),
        "trainable_params": count_params(params),
        "train_windows": len(train_set),
        "val_windows": len(data.val),
        "train_engines": data.train_engines,
        "val_engines": data.val_engines,
        "run_config": run.to_dict(),
    }
    return TrainResult(Checkpoint(params, data.preprocess, cfg, metadata), history, data)


def train(
    run: RunConfig,
    bundle: DatasetBundle | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Load data (unless given), prepare, train; the checkpoint holds the best-epoch weights."""
    if bundle is None:
        bundle = load_run_bundle(run)
    return train_prepared(run, prepare_data(run, bundle.train), on_epoch)


@dataclass
class EnginePredictions:
    engine_ids: np.ndarray
    prediction: GaussianPrediction


def final_windows(pre: PreprocessModel, trajs: list[EngineTrajectory], window_len: int) -> WindowSet:
    sets = []
    for t in trajs:
        p: ProcessedTrajectory = pre.transform_one(t)
        sets.append(last_window(p.features, p.settings, p.clusters, window_len, t.engine_id))
    return WindowSet.concat(sets)


def final_prediction_per_engine(
    params: ParamStore, cfg: ModelConfig, pre: PreprocessModel, trajs: list[EngineTrajectory]
) -> EnginePredictions:
    """One prediction per engine from the window ending at its last cycle (front-padded if short)."""
    ws = final_windows(pre, trajs, cfg.window_len)
    return EnginePredictions(ws.engine_ids.copy(), predict(params, cfg, ws.windows, ws.settings))
