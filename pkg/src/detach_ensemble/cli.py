"""Command-line interface.

Exit codes: 0 success, 2 argument error, 3 data error, 4 internal invariant
violation. Settings resolve as command-line flag > ``--config`` JSON file >
built-in default.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import secrets
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import load_dataset, save_dataset
from .detach import DetachConfig
from .ensemble import (
    EnsembleConfig,
    ensemble_channel_relevance,
    fit_ensemble,
    labels_from_proba,
    load_ensemble,
    member_channel_relevance,
    predict_proba,
    save_ensemble,
)
from .evaluation import best_threshold, compute_metrics, loso_cv, roc, subject_majority_vote
from .exceptions import DataError, InvariantError
from .synth import SynthConfig, bayes_accuracy, generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4


@dataclass
class RunConfig:
    num_features: int = 10_000
    n_models: int = 25
    c: float = 0.1
    step_proportion: float = 0.05
    min_features: int = 10
    val_fraction: float = 0.25
    threshold: float = 0.5
    seed: Optional[int] = None
    normalize: bool = True
    bias_subset: Optional[int] = None
    max_dilations_per_kernel: int = 32
    channel_decay_base: float = 2.0
    reselect_alpha: bool = False
    jobs: int = 1

    def ensemble_config(self) -> EnsembleConfig:
        return EnsembleConfig(
            n_models=self.n_models,
            seed=self.seed,
            threshold=self.threshold,
            detach=DetachConfig(
                num_features=self.num_features,
                c=self.c,
                step_proportion=self.step_proportion,
                min_features=self.min_features,
                val_fraction=self.val_fraction,
                seed=self.seed,
                normalize=self.normalize,
                bias_subset=self.bias_subset,
                max_dilations_per_kernel=self.max_dilations_per_kernel,
                channel_decay_base=self.channel_decay_base,
                reselect_alpha=self.reselect_alpha,
            ),
        )


_RUN_FIELDS = {f.name for f in fields(RunConfig)}


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _fmt(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------
# argument parsing


def _add_run_flags(p: argparse.ArgumentParser, predict_only: bool = False) -> None:
    p.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    p.add_argument("--threshold", type=float)
    p.add_argument("--jobs", type=int, help="cap on worker threads")
    if predict_only:
        return
    p.add_argument("--seed", type=int)
    p.add_argument("--num-features", dest="num_features", type=int)
    p.add_argument("--n-models", "-N", dest="n_models", type=int)
    p.add_argument("--c", dest="c", type=float, help="accuracy/size trade-off for pruning")
    p.add_argument("--step-proportion", dest="step_proportion", type=float)
    p.add_argument("--min-features", dest="min_features", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--bias-subset", dest="bias_subset", type=int)
    p.add_argument("--max-dilations", dest="max_dilations_per_kernel", type=int)
    p.add_argument("--channel-decay-base", dest="channel_decay_base", type=float)
    p.add_argument("--reselect-alpha", dest="reselect_alpha", action="store_true", default=None)
    p.add_argument("--normalize", dest="normalize", action="store_true", default=None)
    p.add_argument("--no-normalize", dest="normalize", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detach-ensemble", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the four-channel synthetic benchmark")
    p.add_argument("--theta", type=float, required=True, help="degrees in [0, 90]")
    p.add_argument("--n-per-class", type=int, default=250)
    p.add_argument("--n-timesteps", type=int, default=512)
    p.add_argument("--sigma-amp", type=float, default=1.0)
    p.add_argument("--separation", type=float, default=None)
    p.add_argument("--base-amp", type=float, default=5.0)
    p.add_argument("--freqs", type=float, nargs=3, default=[3.0, 7.0, 5.0])
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--n-subjects", type=int, default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True, help="output path (.json/.bin stem or .csv)")

    p = sub.add_parser("train", help="fit an ensemble and write the model directory")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_run_flags(p)

    p = sub.add_parser("predict", help="write per-instance probabilities and labels")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_run_flags(p, predict_only=True)

    p = sub.add_parser("relevance", help="write per-member and ensemble channel relevance")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="metrics, ROC and relevance of a model on a dataset")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--best-threshold", action="store_true")
    _add_run_flags(p, predict_only=True)

    p = sub.add_parser("loso", help="leave-one-subject-out cross-validation")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_run_flags(p)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults < config file < explicit flags; generate a seed if none."""
    values = asdict(RunConfig())
    if getattr(args, "config", None) is not None:
        try:
            from_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        unknown = set(from_file) - _RUN_FIELDS
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        values.update(from_file)
    for name in _RUN_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig(**values)
    if cfg.seed is None:
        cfg.seed = secrets.randbits(31)
        _log(f"seed: {cfg.seed} (generated)")
    _validate_run(cfg)
    return cfg


def _validate_run(cfg: RunConfig) -> None:
    if cfg.n_models < 1:
        raise UsageError(f"--n-models must be >= 1, got {cfg.n_models}")
    if cfg.num_features < 84:
        raise UsageError(f"--num-features must be >= 84, got {cfg.num_features}")
    if cfg.c < 0:
        raise UsageError("--c must be >= 0")
    if not 0 < cfg.step_proportion < 1:
        raise UsageError("--step-proportion must lie in (0, 1)")
    if not 0 < cfg.val_fraction < 1:
        raise UsageError("--val-fraction must lie in (0, 1)")
    if not 0 < cfg.threshold < 1:
        raise UsageError("--threshold must lie in (0, 1)")
    if cfg.min_features < 1:
        raise UsageError("--min-features must be >= 1")
    if cfg.jobs < 1:
        raise UsageError("--jobs must be >= 1")


def _set_jobs(jobs: int) -> None:
    import numba

    numba.set_num_threads(max(1, min(jobs, numba.config.NUMBA_NUM_THREADS)))


# --------------------------------------------------------------------------
# writers


def write_predictions(path: Path, proba_positive: np.ndarray, labels: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "prob_positive", "predicted_label"])
        for i, (p, y) in enumerate(zip(proba_positive, labels)):
            w.writerow([i, _fmt(p), int(y)])


def write_relevance(path: Path, channel_names, columns: dict[str, np.ndarray]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(next(iter(columns.values())))
    names = channel_names or [str(i) for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel_name", *columns])
        for c in range(n):
            w.writerow([names[c], *(_fmt(col[c]) for col in columns.values())])


def write_roc(path: Path, curve) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for thr, f, t in curve.points:
            w.writerow([_fmt(thr), _fmt(f), _fmt(t)])


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, allow_nan=False))


def load_schema(name: str) -> dict:
    """Shipped JSON schema for a report: ``train_report``, ``evaluate_report`` or ``loso_report``."""
    from importlib.resources import files

    return json.loads(files(__package__).joinpath("schemas", f"{name}.schema.json").read_text())


def model_digest(directory: Path) -> str:
    """SHA-256 over the model files, skipping the timing report."""
    h = hashlib.sha256()
    for p in sorted(Path(directory).rglob("*")):
        if p.is_file() and p.name != "report.json":
            h.update(str(p.relative_to(directory)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    if not 0.0 <= args.theta <= 90.0:
        raise UsageError(f"--theta must lie in [0, 90], got {args.theta}")
    seed = args.seed
    if seed is None:
        seed = secrets.randbits(31)
        _log(f"seed: {seed} (generated)")
    try:
        cfg = SynthConfig(
            theta=args.theta,
            n_per_class=args.n_per_class,
            n_timesteps=args.n_timesteps,
            sigma_amp=args.sigma_amp,
            separation=args.separation,
            base_amp=args.base_amp,
            freqs=tuple(args.freqs),
            noise_sigma=args.noise_sigma,
            seed=seed,
            n_subjects=args.n_subjects,
        )
    except DataError as exc:
        raise UsageError(str(exc)) from exc
    ds = generate(cfg)
    save_dataset(ds, args.out)
    _log(
        f"wrote {ds.n_instances} instances x {ds.n_channels} channels x {ds.n_timesteps} steps to {args.out}"
        f" (Bayes accuracy {bayes_accuracy(cfg):.4f})"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    _set_jobs(cfg.jobs)
    ds = load_dataset(args.data)
    start = time.perf_counter()

    def progress(i, member):
        _log(f"member {i + 1}/{cfg.n_models}: val_acc={member.val_accuracy:.4f} "
             f"retained={len(member.retained_ids)}/{member.full_num_features}")

    model = fit_ensemble(ds, cfg.ensemble_config(), progress=progress)
    save_ensemble(model, args.out)
    elapsed = time.perf_counter() - start
    report = {
        "command": "train",
        "version": __version__,
        "config": asdict(cfg),
        "data": str(args.data),
        "n_instances": ds.n_instances,
        "n_channels": ds.n_channels,
        "members": [
            {
                "seed": m.config.seed,
                "val_accuracy": m.val_accuracy,
                "weight": float(w),
                "retained_features": int(len(m.retained_ids)),
                "retained_fraction": m.retained_fraction,
                "kernels": int(m.bank.n_kernels),
            }
            for m, w in zip(model.members, model.weights)
        ],
        "weights_sum": float(model.weights.sum()),
        "wall_clock_seconds": elapsed,
        "model_digest": model_digest(args.out),
    }
    _write_json(Path(args.out) / "report.json", report)
    _log(f"trained {cfg.n_models} members in {elapsed:.1f}s -> {args.out}")
    return EXIT_OK


def _load_model_and_data(args):
    model = load_ensemble(args.model)
    ds = load_dataset(args.data)
    if ds.n_channels != model.n_channels:
        raise DataError(f"channel count mismatch: model expects C={model.n_channels}, data has C={ds.n_channels}")
    return model, ds


def _predict_threshold(args, model) -> float:
    cfg_threshold = None
    if getattr(args, "config", None) is not None:
        try:
            cfg_threshold = json.loads(Path(args.config).read_text()).get("threshold")
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
    threshold = args.threshold if args.threshold is not None else cfg_threshold
    threshold = model.threshold if threshold is None else threshold
    if not 0 < threshold < 1:
        raise UsageError("--threshold must lie in (0, 1)")
    return float(threshold)


def cmd_predict(args) -> int:
    if args.jobs is not None:
        _set_jobs(args.jobs)
    model, ds = _load_model_and_data(args)
    threshold = _predict_threshold(args, model)
    p = predict_proba(model, ds)[:, 1]
    write_predictions(args.out, p, labels_from_proba(p, threshold, model.class_labels))
    _log(f"wrote {len(p)} predictions (threshold {threshold}) to {args.out}")
    return EXIT_OK


def _relevance_columns(model) -> dict[str, np.ndarray]:
    cols = {"relevance": ensemble_channel_relevance(model)}
    for i, m in enumerate(model.members):
        cols[f"member_{i:03d}"] = member_channel_relevance(m)
    return cols


def cmd_relevance(args) -> int:
    model = load_ensemble(args.model)
    write_relevance(args.out, model.channel_names, _relevance_columns(model))
    _log(f"wrote relevance for {model.n_channels} channels to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.jobs is not None:
        _set_jobs(args.jobs)
    model, ds = _load_model_and_data(args)
    threshold = _predict_threshold(args, model)
    out = Path(args.out_dir)
    p = predict_proba(model, ds)[:, 1]
    y_pred = labels_from_proba(p, threshold, model.class_labels)
    write_predictions(out / "predictions.csv", p, y_pred)
    metrics = compute_metrics(ds.labels, y_pred, model.positive_class, model.class_labels)
    report = {
        "command": "evaluate",
        "version": __version__,
        "config": {
            "model": str(args.model),
            "data": str(args.data),
            "threshold": threshold,
            "ensemble": None if model.config is None else model.config.to_dict(),
        },
        "n_instances": ds.n_instances,
        "default_threshold": {"threshold": threshold, "metrics": metrics.to_dict()},
        "auc": None,
        "best_threshold": None,
    }
    if len(np.unique(ds.labels)) == 2:
        curve = roc(ds.labels, p, model.positive_class, model.class_labels)
        write_roc(out / "roc.csv", curve)
        report["auc"] = curve.auc
        if args.best_threshold:
            thr, best = best_threshold(curve, ds.labels, p, "accuracy", model.positive_class, model.class_labels)
            report["best_threshold"] = {"threshold": thr, "metrics": best.to_dict()}
    if ds.subject_ids is not None:
        truth = {}
        for s in np.unique(ds.subject_ids).tolist():
            labels = np.unique(ds.labels[ds.subject_ids == s])
            if len(labels) == 1:
                truth[s] = int(labels[0])
        if truth:
            _, acc = subject_majority_vote(y_pred, ds.subject_ids, truth, model.positive_class, model.class_labels)
            report["subject_accuracy"] = acc
    write_relevance(out / "relevance.csv", model.channel_names, _relevance_columns(model))
    _write_json(out / "metrics.json", report)
    _log(f"accuracy {metrics.accuracy:.4f} at threshold {threshold}; reports in {out}")
    return EXIT_OK


def cmd_loso(args) -> int:
    cfg = resolve_config(args)
    _set_jobs(cfg.jobs)
    ds = load_dataset(args.data)
    if ds.subject_ids is None:
        raise DataError("loso requires subject ids in the dataset")
    out = Path(args.out_dir)

    def progress(s, fold):
        _log(f"fold subject={s}: accuracy {fold.metrics.accuracy:.4f} on {len(fold.test_indices)} trials")

    result = loso_cv(ds, cfg.ensemble_config(), threshold=cfg.threshold, progress=progress)
    names = ds.channel_names
    for fold in result.folds:
        write_relevance(out / f"relevance_subject_{fold.subject}.csv", names, {"relevance": fold.relevance})
    write_relevance(out / "relevance_mean.csv", names, {"relevance": result.mean_relevance})
    done = ~np.isnan(result.probabilities)
    y_pred = labels_from_proba(result.probabilities[done], cfg.threshold)
    # trials of skipped folds keep prob nan and label -1
    all_pred = np.full(ds.n_instances, -1)
    all_pred[done] = y_pred
    write_predictions(out / "predictions.csv", result.probabilities, all_pred)
    report = {
        "command": "loso",
        "version": __version__,
        "config": asdict(cfg),
        "n_instances": ds.n_instances,
        "summed_confusion": result.confusion.tolist(),
        "metrics": result.metrics.to_dict(),
        "folds": [
            {
                "subject": f.subject,
                "n_test": int(len(f.test_indices)),
                "metrics": f.metrics.to_dict(),
                "relevance": f.relevance.tolist(),
            }
            for f in result.folds
        ],
        "skipped": result.skipped,
        "mean_relevance": result.mean_relevance.tolist(),
    }
    truth = {}
    for s in np.unique(ds.subject_ids[done]).tolist():
        labels = np.unique(ds.labels[ds.subject_ids == s])
        if len(labels) == 1:
            truth[s] = int(labels[0])
    if truth:
        _, acc = subject_majority_vote(y_pred, ds.subject_ids[done], truth)
        report["subject_accuracy"] = acc
    if len(np.unique(ds.labels[done])) == 2:
        curve = roc(ds.labels[done], result.probabilities[done])
        write_roc(out / "roc.csv", curve)
        report["auc"] = curve.auc
    _write_json(out / "metrics.json", report)
    _log(f"LOSO over {len(result.folds)} folds: accuracy {result.metrics.accuracy:.4f}; reports in {out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "relevance": cmd_relevance,
    "evaluate": cmd_evaluate,
    "loso": cmd_loso,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _log(f"{parser.prog}: error: {exc}")
        return EXIT_USAGE
    except DataError as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA
    except InvariantError as exc:
        _log(f"internal invariant violated: {exc}")
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
