"""Run configuration: built-in defaults, JSON config files and override merging."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .cmapss_io import DATASET_IDS
from .model import ConfigError, ModelConfig
from .training import LossConfig, TrainConfig

# CLI spelling -> ModelConfig flag switched off
ABLATION_FLAGS = {
    "no-dual-attention": "dual_attention",
    "no-condition-encoder": "condition_encoder",
    "no-uncertainty": "uncertainty_head",
    "no-rul-weighting": "rul_weighting",
    "no-denoising": "denoising",
}


@dataclass
class PrepConfig:
    rul_cap: float = 125.0
    cap_test_rul: bool = True
    corr_min: float = 0.1
    std_min: float = 0.01
    n_clusters: int = 6
    wavelet_level: int = 4
    threshold_scale: float = 0.5
    standardize_cluster_inputs: bool = False


@dataclass
class RunConfig:
    dataset: str = "FD001"
    data_dir: str | None = None
    out_dir: str = "runs"
    seed: int = 42
    ablations: list[str] = field(default_factory=list)
    max_engines: int | None = None
    prep: PrepConfig = field(default_factory=PrepConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.dataset not in DATASET_IDS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected one of {', '.join(DATASET_IDS)}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        bad = [a for a in self.ablations if a not in ABLATION_FLAGS]
        if bad:
            raise ConfigError(f"unknown ablation(s) {bad}; choose from {sorted(ABLATION_FLAGS)}")
        if self.max_engines is not None and self.max_engines < 2:
            raise ConfigError("max_engines must be at least 2")
        # ablation flags switch the matching model features off
        if self.ablations:
            self.model = replace(self.model, **{ABLATION_FLAGS[a]: False for a in self.ablations})

    def model_config(self, n_features: int) -> ModelConfig:
        return replace(self.model, n_features=n_features)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        _check_keys(cls, d, "run config")
        nested = {"prep": PrepConfig, "loss": LossConfig, "train": TrainConfig}
        for key, typ in nested.items():
            if key in d:
                _check_keys(typ, d[key], key)
                d[key] = typ(**d[key])
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


def _check_keys(typ, d, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(d) - {f.name for f in fields(typ)}
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(config_path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults < config file < explicit overrides (nested dicts merge key by key)."""
    merged = RunConfig().to_dict()
    merged["ablations"] = []
    if config_path is not None:
        try:
            file_cfg = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid JSON ({exc})") from None
        _check_keys(RunConfig, file_cfg, "run config")
        merged = _merge(merged, file_cfg)
    merged = _merge(merged, overrides or {})
    return RunConfig.from_dict(merged)
