"""Point, zone, calibration, decision and error-direction metrics plus the JSON report."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

REPORT_SCHEMA = "report-v1"
DEFAULT_LEVELS = (0.90, 0.95, 0.99)
DEFAULT_THRESHOLDS = (20.0, 30.0, 40.0, 50.0)
ZONES = ("critical", "mid", "early")


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if len(y) != len(yhat):
        raise ValueError(f"length mismatch: {len(y)} targets vs {len(yhat)} predictions")
    return y, yhat


def _ratio(num: float, den: float) -> float | None:
    return None if den == 0 else num / den


@dataclass
class PointMetrics:
    rmse: float
    mae: float
    mape: float  # percent
    r2: float | None


def point_metrics(y, yhat, mape_epsilon: float = 1.0) -> PointMetrics:
    y, yhat = _pair(y, yhat)
    if len(y) == 0:
        raise ValueError("point metrics need at least one sample")
    err = yhat - y
    ss_res = float(np.sum(err**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return PointMetrics(
        rmse=math.sqrt(ss_res / len(y)),
        mae=float(np.mean(np.abs(err))),
        mape=float(np.mean(np.abs(err) / np.maximum(y, mape_epsilon)) * 100.0),
        r2=None if ss_tot == 0 else 1.0 - ss_res / ss_tot,
    )


@dataclass
class ZoneStats:
    count: int
    rmse: float | None
    mae: float | None


@dataclass
class ZoneMetrics:
    boundaries: tuple[float, float]
    zones: dict[str, ZoneStats]

    def __getitem__(self, zone: str) -> ZoneStats:
        return self.zones[zone]


def zone_masks(y, boundaries=(30.0, 80.0)) -> dict[str, np.ndarray]:
    lo, hi = boundaries
    y = np.asarray(y, dtype=np.float64)
    return {"critical": y <= lo, "mid": (y > lo) & (y <= hi), "early": y > hi}


def zone_metrics(y, yhat, boundaries=(30.0, 80.0)) -> ZoneMetrics:
    """Errors grouped by true RUL: critical (y <= 30), mid (30 < y <= 80), early (y > 80)."""
    y, yhat = _pair(y, yhat)
    zones = {}
    for name, mask in zone_masks(y, boundaries).items():
        n = int(mask.sum())
        if n == 0:
            zones[name] = ZoneStats(0, None, None)
            continue
        err = yhat[mask] - y[mask]
        zones[name] = ZoneStats(n, math.sqrt(float(np.mean(err**2))), float(np.mean(np.abs(err))))
    return ZoneMetrics(tuple(boundaries), zones)


@dataclass
class CoverageLevel:
    level: float
    z: float
    expected: float
    actual: float


@dataclass
class CalibrationReport:
    levels: list[CoverageLevel]
    calibration_error: float
    truncated_at_zero: bool = False

    def actual(self, level: float) -> float:
        for c in self.levels:
            if math.isclose(c.level, level):
                return c.actual
        raise KeyError(level)


def two_sided_z(level: float) -> float:
    return float(norm.ppf((1.0 + level) / 2.0))


def interval_coverage(mean, sigma, y, levels=DEFAULT_LEVELS, truncate_at_zero: bool = False) -> CalibrationReport:
    """Fraction of targets inside mean +/- z*sigma for each two-sided level.

    With ``truncate_at_zero`` the lower bound is raised to 0 (RUL cannot be negative).
    """
    y, mean = _pair(y, mean)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if len(sigma) != len(y):
        raise ValueError(f"length mismatch: {len(y)} targets vs {len(sigma)} sigmas")
    if len(y) == 0:
        raise ValueError("coverage needs at least one sample")
    if not np.all(sigma > 0):
        raise ValueError("every predicted sigma must be positive")
    out = []
    for level in levels:
        if not 0.0 < level < 1.0:
            raise ValueError(f"confidence level {level} outside (0, 1)")
        z = two_sided_z(level)
        lo = mean - z * sigma
        if truncate_at_zero:
            lo = np.maximum(lo, 0.0)
        hi = mean + z * sigma
        inside = (y >= lo) & (y <= hi)
        out.append(CoverageLevel(float(level), z, float(level), float(np.mean(inside))))
    err = float(np.mean([abs(c.expected - c.actual) for c in out]))
    return CalibrationReport(out, err, truncate_at_zero)


@dataclass
class DecisionReport:
    threshold: float
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    fpr: float | None = None
    fnr: float | None = None
    specificity: float | None = None

    @classmethod
    def from_counts(cls, tp: int, tn: int, fp: int, fn: int, threshold: float = 30.0) -> "DecisionReport":
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        f1 = None
        if precision is not None and recall is not None and precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        return cls(
            threshold=float(threshold),
            tp=tp,
            tn=tn,
            fp=fp,
            fn=fn,
            accuracy=_ratio(tp + tn, tp + tn + fp + fn),
            precision=precision,
            recall=recall,
            f1=f1,
            fpr=_ratio(fp, fp + tn),
            fnr=_ratio(fn, fn + tp),
            specificity=_ratio(tn, tn + fp),
        )


def decision_confusion(yhat, y, threshold: float = 30.0) -> DecisionReport:
    """Maintenance decision: positive means RUL <= threshold."""
    y, yhat = _pair(y, yhat)
    actual = y <= threshold
    flagged = yhat <= threshold
    return DecisionReport.from_counts(
        tp=int(np.sum(actual & flagged)),
        tn=int(np.sum(~actual & ~flagged)),
        fp=int(np.sum(~actual & flagged)),
        fn=int(np.sum(actual & ~flagged)),
        threshold=threshold,
    )


def multi_threshold_sweep(yhat, y, thresholds=DEFAULT_THRESHOLDS) -> list[DecisionReport]:
    return [decision_confusion(yhat, y, t) for t in thresholds]


@dataclass
class ErrorDirectionReport:
    under_count: int
    over_count: int
    exact_count: int
    mean_under_error: float | None
    mean_over_error: float | None
    max_over_prediction: float

    @property
    def under_fraction(self) -> float:
        total = self.under_count + self.over_count + self.exact_count
        return self.under_count / total if total else 0.0


def error_direction(yhat, y) -> ErrorDirectionReport:
    """Under-prediction (yhat < y) is the conservative direction."""
    y, yhat = _pair(y, yhat)
    err = yhat - y
    under, over = err < 0, err > 0
    return ErrorDirectionReport(
        under_count=int(under.sum()),
        over_count=int(over.sum()),
        exact_count=int((err == 0).sum()),
        mean_under_error=float(np.mean(-err[under])) if under.any() else None,
        mean_over_error=float(np.mean(err[over])) if over.any() else None,
        max_over_prediction=float(max(err.max(initial=0.0), 0.0)),
    )


@dataclass
class EvaluationReport:
    dataset: str
    checkpoint_digest: str
    point: PointMetrics
    zones: ZoneMetrics
    calibration: CalibrationReport | None
    decisions: list[DecisionReport]
    error_direction: ErrorDirectionReport
    engines: list[dict] = field(default_factory=list)
    high_uncertainty_count: int | None = None
    schema: str = REPORT_SCHEMA

    def to_dict(self) -> dict:
        d = asdict(self)
        d["zones"] = {"boundaries": list(self.zones.boundaries), **{k: asdict(v) for k, v in self.zones.zones.items()}}
        return d


def evaluate_predictions(
    engine_ids,
    y,
    mean,
    sigma=None,
    dataset: str = "",
    checkpoint_digest: str = "",
    thresholds=DEFAULT_THRESHOLDS,
    levels=DEFAULT_LEVELS,
    truncate_at_zero: bool = False,
    uncertainty_ratio: float = 0.15,
) -> EvaluationReport:
    """Every metric for one set of per-engine predictions (cycles)."""
    y, mean = _pair(y, mean)
    ids = np.asarray(engine_ids).reshape(-1)
    calib = None
    high = None
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
        calib = interval_coverage(mean, sigma, y, levels, truncate_at_zero)
        # inspection rule: uncertainty larger than a fraction of the predicted RUL
        high = int(np.sum(sigma > uncertainty_ratio * np.abs(mean)))
    engines = [
        {
            "engine_id": int(ids[i]),
            "y": float(y[i]),
            "mu": float(mean[i]),
            "sigma": None if sigma is None else float(sigma[i]),
        }
        for i in range(len(y))
    ]
    return EvaluationReport(
        dataset=dataset,
        checkpoint_digest=checkpoint_digest,
        point=point_metrics(y, mean),
        zones=zone_metrics(y, mean),
        calibration=calib,
        decisions=multi_threshold_sweep(mean, y, sorted(set(float(t) for t in thresholds))),
        error_direction=error_direction(mean, y),
        engines=engines,
        high_uncertainty_count=high,
    )


def emit_report(report: EvaluationReport | dict, path) -> Path:
    """Write the report as one JSON document (temp file, then rename)."""
    d = report.to_dict() if isinstance(report, EvaluationReport) else report
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(json.dumps(d, indent=2, allow_nan=False) + "\n")
    os.replace(tmp, path)
    return path


def final_prediction_per_engine(params, cfg, pre, trajs):
    """One Gaussian prediction per engine; see :func:`rulkit.pipeline.final_prediction_per_engine`."""
    from .pipeline import final_prediction_per_engine as _final

    return _final(params, cfg, pre, trajs)
