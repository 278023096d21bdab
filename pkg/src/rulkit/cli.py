"""Command-line entry point: prepare, train, evaluate, gradcheck, report.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from .checkpoint import CheckpointFormatError, CheckpointTruncatedError, load_checkpoint, file_digest, to_bytes
from .cmapss_io import DATASET_IDS, BundleStructureError, CMAPSSParseError, default_data_dir
from .config import ABLATION_FLAGS, RunConfig, resolve_config
from .dataset import write_cache
from .evaluation import DEFAULT_THRESHOLDS, evaluate_predictions
from .model import ConfigError
from .autodiff.tensor import NumericError
from .training import TrainingDivergedError

log = logging.getLogger("rulkit")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class StructuralError(RuntimeError):
    pass


def _publish(out_dir: Path, stem: str, suffix: str, data: bytes) -> Path:
    """Write ``data`` to ``<stem>-<digest12><suffix>`` via a temp file and rename."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}-{hashlib.sha256(data).hexdigest()[:12]}{suffix}"
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{stem}-", suffix=".partial")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def _run_config(args) -> RunConfig:
    overrides: dict = {}
    if args.dataset is not None:
        overrides["dataset"] = args.dataset
    data_dir = args.data_dir if args.data_dir is not None else default_data_dir()
    if data_dir is not None:
        overrides["data_dir"] = str(data_dir)
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if args.seed is not None:
        overrides["seed"] = args.seed
    train = {}
    if getattr(args, "epochs", None) is not None:
        train["max_epochs"] = args.epochs
    if getattr(args, "batch", None) is not None:
        train["batch_size"] = args.batch
    if getattr(args, "augment_factor", None) is not None:
        train["augment_factor"] = args.augment_factor
    if train:
        overrides["train"] = train
    if getattr(args, "max_engines", None) is not None:
        overrides["max_engines"] = args.max_engines
    run = resolve_config(args.config, overrides)
    extra = [a for a in getattr(args, "ablate", None) or [] if a not in run.ablations]
    if extra:
        d = run.to_dict()
        d["ablations"] = list(run.ablations) + extra
        run = RunConfig.from_dict(d)
    return run


def cmd_prepare(args) -> int:
    from .pipeline import load_run_bundle, prepare_data

    run = _run_config(args)
    bundle = load_run_bundle(run)
    data = prepare_data(run, bundle.train)
    out = Path(run.out_dir)
    pre_json = data.preprocess.to_json().encode()
    pre_path = _publish(out, f"preprocess-{run.dataset}", ".json", pre_json)

    out.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".windows-", suffix=".partial")
    os.close(fd)
    try:
        meta = {"dataset": run.dataset, "seed": run.seed, "preprocess_digest": data.preprocess.digest(),
                "train_engines": data.train_engines, "val_engines": data.val_engines}
        write_cache(tmp, {"train": data.train, "val": data.val}, meta)
        cache_path = _publish(out, f"windows-{run.dataset}", ".bin", Path(tmp).read_bytes())
    finally:
        Path(tmp).unlink(missing_ok=True)

    sel = data.preprocess.selection.selected_sensor_indices
    print(f"dataset {run.dataset}: {len(bundle.train)} training engines "
          f"({len(data.train_engines)} train / {len(data.val_engines)} validation)")
    print(f"windows: {len(data.train)} train, {len(data.val)} validation")
    print(f"selected sensors ({len(sel)}): {', '.join(str(s) for s in sel)}")
    print(f"wrote {pre_path}")
    print(f"wrote {cache_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import train

    run = _run_config(args)
    res = train(run)
    out = Path(run.out_dir)
    ckpt_path = _publish(out, f"model-{run.dataset}", ".ckpt", to_bytes(res.checkpoint))
    hist_path = _publish(out, f"history-{run.dataset}", ".jsonl", res.history.to_jsonl().encode())
    print(f"best validation RMSE {res.history.best_val_rmse:.3f} cycles at epoch {res.history.best_epoch} "
          f"({len(res.history)} epochs run)")
    print(f"wrote {ckpt_path}")
    print(f"wrote {hist_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pipeline import final_prediction_per_engine, load_run_bundle

    run = _run_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.config.n_features != ckpt.preprocess.n_features:
        raise StructuralError(
            f"checkpoint model expects {ckpt.config.n_features} features but its preprocessing "
            f"selects {ckpt.preprocess.n_features}"
        )
    trained_on = ckpt.metadata.get("dataset")
    if trained_on and trained_on != run.dataset:
        log.warning("checkpoint was trained on %s, evaluating on %s", trained_on, run.dataset)
    bundle = load_run_bundle(run)
    preds = final_prediction_per_engine(ckpt.params, ckpt.config, ckpt.preprocess, bundle.test)
    thresholds = sorted(set(DEFAULT_THRESHOLDS) | set(args.threshold or []))
    report = evaluate_predictions(
        preds.engine_ids,
        bundle.test_final_rul,
        preds.prediction.mean,
        preds.prediction.sigma,
        dataset=run.dataset,
        checkpoint_digest=file_digest(args.checkpoint),
        thresholds=thresholds,
        truncate_at_zero=args.truncate_intervals,
    )
    data = (json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n").encode()
    path = _publish(Path(run.out_dir), f"report-{run.dataset}", ".json", data)
    crit = report.zones["critical"].rmse
    print(f"RMSE {report.point.rmse:.3f}")
    print(f"critical-zone RMSE {'n/a' if crit is None else f'{crit:.3f}'}")
    if report.calibration is None:
        print("95% coverage n/a (no uncertainty head)")
    else:
        print(f"95% coverage {report.calibration.actual(0.95) * 100:.2f}%")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .autodiff.suite import run_suite

    res = run_suite(primitive_tol=args.tol, full_tol=args.tol, seed=args.seed or 0)
    for c in res.cases:
        status = "ok" if c.passed else "FAIL"
        print(f"{c.name:18s} {c.max_rel_error:.3e}  {status}")
    worst = res.worst
    if res.passed:
        print(f"all {len(res.cases)} checks below {args.tol:g}")
        return EXIT_OK
    print(f"gradient check failed: op {worst.name}, parameter {worst.worst_param}, "
          f"relative error {worst.max_rel_error:.3e} (tolerance {args.tol:g})", file=sys.stderr)
    return EXIT_FAILURE


def _fmt(v, pct=False):
    if v is None:
        return "n/a"
    return f"{v * 100:.2f}%" if pct else f"{v:.3f}"


def cmd_report(args) -> int:
    try:
        d = json.loads(Path(args.input).read_text())
    except json.JSONDecodeError as exc:
        raise StructuralError(f"{args.input}: not a JSON report ({exc})") from None
    if d.get("schema") != "report-v1":
        raise StructuralError(f"{args.input}: unsupported report schema {d.get('schema')!r}")
    p = d["point"]
    print(f"dataset {d['dataset']}  checkpoint {d['checkpoint_digest'][:12]}  engines {len(d['engines'])}")
    print(f"RMSE {_fmt(p['rmse'])}  MAE {_fmt(p['mae'])}  MAPE {_fmt(p['mape'])}%  R2 {_fmt(p['r2'])}")
    for zone in ("critical", "mid", "early"):
        z = d["zones"][zone]
        print(f"  {zone:8s} n={z['count']:4d}  RMSE {_fmt(z['rmse'])}  MAE {_fmt(z['mae'])}")
    if d.get("calibration"):
        cal = d["calibration"]
        cov = "  ".join(f"{c['level']:.0%}: {c['actual'] * 100:.2f}%" for c in cal["levels"])
        print(f"coverage  {cov}  calibration error {cal['calibration_error']:.4f}")
    for r in d["decisions"]:
        print(f"  threshold {r['threshold']:g}: tp {r['tp']} tn {r['tn']} fp {r['fp']} fn {r['fn']}  "
              f"precision {_fmt(r['precision'], True)} recall {_fmt(r['recall'], True)}")
    e = d["error_direction"]
    print(f"under {e['under_count']}  over {e['over_count']}  exact {e['exact_count']}  "
          f"max over-prediction {_fmt(e['max_over_prediction'])}")
    if d.get("high_uncertainty_count") is not None:
        print(f"predictions with sigma above 15% of predicted RUL: {d['high_uncertainty_count']}")
    return EXIT_OK


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _non_negative_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rulkit", description="Uncertainty-aware RUL pipeline for CMAPSS data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, train_flags=False):
        p.add_argument("--dataset", choices=DATASET_IDS, help="CMAPSS subset (default FD001)")
        p.add_argument("--data-dir", help="directory with the raw text files (default $RUL_DATA_DIR)")
        p.add_argument("--out", help="output directory (default runs/)")
        p.add_argument("--seed", type=_non_negative_int, help="global seed (default 42)")
        p.add_argument("--config", help="JSON run configuration; flags override its values")
        p.add_argument("--max-engines", type=_positive_int, help="use only the first N training engines")
        if train_flags:
            p.add_argument("--epochs", type=_positive_int, help="maximum epochs")
            p.add_argument("--batch", type=_positive_int, help="batch size")
            p.add_argument("--augment-factor", type=_positive_int, help="dataset multiplier for augmentation")
            p.add_argument("--ablate", action="append", choices=sorted(ABLATION_FLAGS), metavar="NAME",
                           help=f"switch a component off (repeatable): {', '.join(sorted(ABLATION_FLAGS))}")

    p = sub.add_parser("prepare", help="fit preprocessing and write the window cache")
    common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    common(p, train_flags=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test engines")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file from 'train'")
    p.add_argument("--threshold", type=float, action="append", help="extra maintenance threshold in cycles")
    p.add_argument("--truncate-intervals", action="store_true", help="clip interval lower bounds at 0")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--tol", type=float, default=1e-4, help="maximum relative error (default 1e-4)")
    p.add_argument("--seed", type=_non_negative_int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="print a summary of a report JSON file")
    p.add_argument("input", help="report file written by 'evaluate'")
    p.set_defaults(func=cmd_report)
    return parser


RUNTIME_ERRORS = (
    OSError,
    CMAPSSParseError,
    BundleStructureError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    StructuralError,
    TrainingDivergedError,
    NumericError,
    ValueError,
    KeyError,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"rulkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        print(f"rulkit: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
