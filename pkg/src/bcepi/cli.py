"""Command-line entry point: ``bcepi {features,train,evaluate,predict,importance}``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 model error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import dataset, evaluate, seqfeat
from .dataset import FEATURE_NAMES, PEPTIDE_FEATURES, PROTEIN_FEATURES, SplitSpec
from .errors import (BcepiError, ConfigError, DataError, MissingColumn, ModelSchemaMismatch)
from .nnet import Model, TrainConfig, config_dict, train, write_loss_csv

log = logging.getLogger("bcepi")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4

MANIFEST_SCHEMA = "bcepi-run"
MODEL_FILE = "model.json"
LOSS_FILE = "loss_history.csv"
MANIFEST_FILE = "manifest.json"

RUN_DEFAULTS = {
    "data_path": None,
    "output_dir": "run",
    "feature_mode": "passthrough",
    "threshold": 0.5,
    "skip_invalid": False,
    "train_fraction": 0.64,
    "val_fraction": 0.16,
    "test_fraction": 0.20,
    **config_dict(TrainConfig()),
}


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def featurize_records(records, mode: str, skip_invalid: bool, report=None):
    """Featurize records, optionally skipping ones with bad sequences.

    Returns (kept_records, feature_vectors).
    """
    kept, vectors = [], []
    for rec in records:
        try:
            vectors.append(seqfeat.featurize(rec, mode))
        except DataError as exc:
            if not skip_invalid:
                raise DataError(f"row {rec.row}: {exc}") from exc
            log.warning("skipping row %d: %s", rec.row, exc)
            if report is not None:
                report.rejected += 1
                report.rejections.append((rec.row, str(exc)))
            continue
        kept.append(rec)
    if report is not None:
        report.loaded = len(kept)
        report.positives = sum(r.target for r in kept)
    return kept, vectors


# --- config ---------------------------------------------------------------------

def resolve_config(config_path, overrides: dict) -> dict:
    """Defaults < config file < command-line flags (None means 'not given')."""
    cfg = dict(RUN_DEFAULTS)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    tc = TrainConfig(**{k: cfg[k] for k in names})
    tc.hidden_dims = tuple(int(h) for h in tc.hidden_dims)
    tc.validate()
    return tc


def _split_spec(cfg: dict) -> SplitSpec:
    try:
        return SplitSpec(cfg["train_fraction"], cfg["val_fraction"], cfg["test_fraction"], int(cfg["seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _check_run_config(cfg: dict) -> None:
    if not cfg["data_path"]:
        raise ConfigError("data_path is required (--data or config file)")
    if not Path(cfg["data_path"]).is_file():
        raise ConfigError(f"data file {cfg['data_path']} does not exist")
    if cfg["feature_mode"] not in ("passthrough", "recompute"):
        raise ConfigError(f"feature_mode must be passthrough or recompute, not {cfg['feature_mode']!r}")
    if not 0 < float(cfg["threshold"]) < 1:
        raise ConfigError("threshold must lie in (0, 1)")


def prepare_splits(cfg: dict):
    """Load, featurize and split the data exactly as ``train`` does."""
    records, report = dataset.load_csv(cfg["data_path"])
    records, vectors = featurize_records(records, cfg["feature_mode"], cfg["skip_invalid"], report)
    parts = dataset.split_indices([v.y for v in vectors], _split_spec(cfg))
    splits = {}
    for name, idx in zip(("train", "val", "test"), parts):
        X, y = dataset.to_matrix([vectors[i] for i in idx])
        splits[name] = (X, y, [records[i] for i in idx])
    return splits, report


# --- commands -----------------------------------------------------------------------

def cmd_features(args) -> int:
    records, report = dataset.load_csv(args.data)
    kept, vectors = featurize_records(records, args.mode, args.skip_invalid, report)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset.write_features_csv(out, vectors)
    _write_text(args.report or out.with_suffix(".report.txt"), report.to_text())
    if args.summary and vectors:
        X, y = dataset.to_matrix(vectors)
        dataset.write_summary_csv(args.summary, X, y)
    if args.correlation and vectors:
        dataset.write_correlation_csv(args.correlation, dataset.to_matrix(vectors)[0])
    if args.compare:
        _write_comparison(args.compare, kept)
    print(f"wrote {len(vectors)} rows to {out} ({report.rejected} rejected)")
    return EXIT_OK


def _write_comparison(path, records) -> None:
    """Side-by-side dataset vs recomputed descriptors, one row per record and feature."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "feature", "dataset", "recomputed", "difference"])
        for rec in records:
            try:
                fresh = seqfeat.describe(rec.peptide_seq, rec.protein_seq)
            except DataError as exc:
                w.writerow([rec.row, "*", "", "", f"error: {exc}"])
                continue
            for name, value in zip(FEATURE_NAMES, fresh):
                given = getattr(rec, name)
                w.writerow([rec.row, name, repr(given), repr(value), repr(value - given)])


def cmd_train(args) -> int:
    overrides = {
        "data_path": args.data, "output_dir": args.out_dir, "feature_mode": args.feature_mode,
        "threshold": args.threshold, "seed": args.seed, "learning_rate": args.learning_rate,
        "dropout_rate": args.dropout_rate, "batch_size": args.batch_size,
        "max_epochs": args.max_epochs, "patience": args.patience,
        "class_weight_positive": args.class_weight_positive,
        "hidden_dims": args.hidden_dims, "train_fraction": args.train_fraction,
        "val_fraction": args.val_fraction, "test_fraction": args.test_fraction,
        "skip_invalid": True if args.skip_invalid else None,
    }
    cfg = resolve_config(args.config, overrides)
    _check_run_config(cfg)
    tc = _train_config(cfg)
    _split_spec(cfg)
    cfg["data_path"] = str(Path(cfg["data_path"]).resolve())
    cfg["hidden_dims"] = list(tc.hidden_dims)

    splits, report = prepare_splits(cfg)
    Xtr, ytr, _ = splits["train"]
    Xva, yva, _ = splits["val"]
    params, std, tr = train(Xtr, ytr, Xva, yva, tc)
    model = Model(params, std, float(cfg["threshold"]))

    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / MODEL_FILE)
    write_loss_csv(out / LOSS_FILE, tr)
    _write_text(out / "ingestion_report.txt", report.to_text())
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "config": cfg,
        "seed": int(cfg["seed"]),
        "data_sha256": dataset.file_sha256(cfg["data_path"]),
        "records": {"loaded": report.loaded, "rejected": report.rejected,
                    "span_mismatches": len(report.span_mismatches)},
        "split_sizes": {k: int(len(v[1])) for k, v in splits.items()},
        "split_positives": {k: int(v[1].sum()) for k, v in splits.items()},
        "training": {"best_epoch": tr.best_epoch, "stopped_epoch": tr.stopped_epoch,
                     "restored_best": tr.restored_best,
                     "first_train_loss": tr.train_loss[0], "final_train_loss": tr.train_loss[-1]},
    }
    _write_text(out / MANIFEST_FILE, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"trained {tr.stopped_epoch} epochs (best {tr.best_epoch}); artifacts in {out}")
    return EXIT_OK


def load_manifest(run_dir) -> dict:
    path = Path(run_dir) / MANIFEST_FILE
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ConfigError(f"{path} is not a run manifest")
    return manifest


def _eval_data(args):
    """Resolve (model, X, y, rows) from --run-dir or --model/--data."""
    if args.run_dir:
        manifest = load_manifest(args.run_dir)
        cfg = manifest["config"]
        if dataset.file_sha256(cfg["data_path"]) != manifest["data_sha256"]:
            raise DataError(f"{cfg['data_path']} changed since training (checksum mismatch)")
        model = Model.load(args.model or Path(args.run_dir) / MODEL_FILE)
        splits, _ = prepare_splits(cfg)
        X, y, _ = splits[args.split]
        return model, X, y
    if not args.model or not args.data:
        raise ConfigError("give --run-dir, or both --model and --data")
    model = Model.load(args.model)
    records, _ = dataset.load_csv(args.data)
    _, vectors = featurize_records(records, args.mode, args.skip_invalid)
    X, y = dataset.to_matrix(vectors)
    return model, X, y


def cmd_evaluate(args) -> int:
    model, X, y = _eval_data(args)
    if len(y) == 0:
        raise DataError("no records to evaluate")
    cm = evaluate.confusion(y, model.predict_label(X))
    report = evaluate.classification_report(cm)
    text = evaluate.export_report(report, "text")
    print(text, end="")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "classification_report.txt", text)
        _write_text(out / "classification_report.csv", evaluate.export_report(report, "csv"))
        _write_text(out / "confusion_matrix.csv", evaluate.confusion_csv(cm))
    return EXIT_OK


def cmd_predict(args) -> int:
    model = Model.load(args.model)
    header, rows = dataset.read_csv_rows(args.input)
    if args.mode == "passthrough":
        for name in FEATURE_NAMES:
            if name not in header:
                raise MissingColumn(name)
        try:
            X = np.array([[float(r[n]) for n in FEATURE_NAMES] for r in rows], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise DataError(f"non-numeric feature value: {exc}") from exc
    else:
        for name in ("peptide_seq", "protein_seq"):
            if name not in header:
                raise MissingColumn(name)
        X = []
        for i, r in enumerate(rows, start=1):
            try:
                X.append(seqfeat.describe(r["peptide_seq"].strip(), r["protein_seq"].strip()))
            except DataError as exc:
                raise DataError(f"row {i}: {exc}") from exc
        X = np.array(X, dtype=np.float64)
    X = X.reshape(len(rows), len(FEATURE_NAMES))
    proba = model.predict_proba(X) if len(rows) else np.zeros(0)
    labels = (proba >= model.threshold).astype(int)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=[*header, "probability", "label"], lineterminator="\n")
        w.writeheader()
        for r, p, lab in zip(rows, proba, labels):
            w.writerow({**r, "probability": repr(float(p)), "label": int(lab)})
    print(f"wrote {len(rows)} predictions to {out}")
    return EXIT_OK


def cmd_importance(args) -> int:
    model, X, y = _eval_data(args)
    if len(y) == 0:
        raise DataError("no records to evaluate")
    rep = evaluate.permutation_importance(model, X, y, args.metric, args.repeats, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_text(out, rep.to_csv())
    print(evaluate.export_report(rep, "text"), end="")
    groups = rep.group_means({"protein": PROTEIN_FEATURES, "peptide": PEPTIDE_FEATURES})
    verdict = "holds" if groups["protein"] > groups["peptide"] else "does not hold"
    print(f"protein-feature mean {groups['protein']:.4f} vs peptide-feature mean "
          f"{groups['peptide']:.4f}: protein > peptide {verdict}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def _hidden_dims(text: str) -> list[int]:
    try:
        dims = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not dims:
        raise argparse.ArgumentTypeError("hidden dims cannot be empty")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcepi", description="B-cell epitope descriptor and DNN toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="compute the eight descriptors for every CSV row")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("passthrough", "recompute"), default="recompute")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="ingestion report path (default: <out>.report.txt)")
    p.add_argument("--skip-invalid", action="store_true",
                   help="skip rows with non-standard residues instead of failing")
    p.add_argument("--summary", help="write per-class summary statistics CSV")
    p.add_argument("--correlation", help="write 8x8 Pearson correlation CSV")
    p.add_argument("--compare", help="write dataset-vs-recomputed descriptor CSV")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a model and write model, loss history and manifest")
    p.add_argument("--config", help="JSON file of flat run settings")
    p.add_argument("--data")
    p.add_argument("--out-dir")
    p.add_argument("--feature-mode", choices=("passthrough", "recompute"))
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden-dims", type=_hidden_dims)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--dropout-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--class-weight-positive", type=float)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--skip-invalid", action="store_true")
    p.set_defaults(func=cmd_train)

    def eval_args(p):
        p.add_argument("--run-dir", help="training output dir; re-derives the split from its manifest")
        p.add_argument("--split", choices=("train", "val", "test"), default="test")
        p.add_argument("--model")
        p.add_argument("--data")
        p.add_argument("--mode", choices=("passthrough", "recompute"), default="passthrough")
        p.add_argument("--skip-invalid", action="store_true")

    p = sub.add_parser("evaluate", help="classification report and confusion matrix")
    eval_args(p)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="append probability and label columns to a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("passthrough", "recompute"), default="passthrough")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("importance", help="permutation feature importance")
    eval_args(p)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", choices=evaluate.METRICS, default="accuracy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_importance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ModelSchemaMismatch as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (ConfigError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BcepiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
