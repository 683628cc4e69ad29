"""Sequential Feature Detachment and the pruned single-model classifier.

SFD repeatedly fits a ridge classifier on the current feature set, records
its validation accuracy and drops the features with the smallest absolute
coefficients. The pruning level is then picked by maximising

    val_accuracy_k / full_accuracy + c * (1 - retained_fraction_k)

so ``c`` trades accuracy for model size.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import ridge
from .data import Dataset, NormStats, SplitSpec, split_indices, znormalize
from .exceptions import DataError, InvariantError
from .transform import (
    FeatureMatrix,
    KernelBank,
    bank_from_dict,
    bank_to_dict,
    build_kernel_bank,
    fit_biases,
    transform,
)

DETACH_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class PruningStep:
    retained_fraction: float
    retained_ids: np.ndarray
    val_accuracy: float


@dataclass(frozen=True, eq=False)
class PruningCurve:
    steps: list[PruningStep]
    full_accuracy: float

    @property
    def fractions(self) -> np.ndarray:
        return np.array([s.retained_fraction for s in self.steps])

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([s.val_accuracy for s in self.steps])

    def objective(self, c: float) -> np.ndarray:
        full = max(self.full_accuracy, 1e-12)
        return self.accuracies / full + c * (1.0 - self.fractions)


def _n_to_remove(count: int, step_proportion: float) -> int:
    # floor(p * count), at least one; 10 -> 5 -> 3 -> 2 -> 1 for p = 0.5
    return max(1, int(math.floor(step_proportion * count + 1e-9)))


def sfd(
    train_features: FeatureMatrix,
    train_labels,
    val_features: FeatureMatrix,
    val_labels,
    step_proportion: float = 0.05,
    min_features: int = 10,
    alphas=None,
    reselect_alpha: bool = False,
) -> PruningCurve:
    """Prune features by repeated ridge refits, keeping the largest |coefficient|.

    Each step removes ``max(1, floor(step_proportion * count))`` features,
    ties broken towards dropping the lower feature id, until at most
    ``min_features`` remain. Step 0 is the unpruned model.

    Alpha is chosen from ``alphas`` by leave-one-out error on the full
    feature set and then held fixed, unless ``reselect_alpha`` is set, in
    which case every step repeats the selection.
    """
    if not 0.0 < step_proportion < 1.0:
        raise DataError(f"step_proportion must lie in (0, 1), got {step_proportion}")
    if min_features < 1:
        raise DataError("min_features must be >= 1")
    if val_features.n_instances == 0:
        raise DataError("empty validation set")
    if not np.array_equal(train_features.feature_ids, val_features.feature_ids):
        raise DataError("train and validation feature columns differ")
    val_labels = np.asarray(val_labels)

    ids = np.asarray(train_features.feature_ids, dtype=np.int64)
    total = len(ids)
    cols = np.arange(total)
    steps = []
    step_alphas = alphas
    while True:
        current = FeatureMatrix(train_features.values[:, cols], ids[cols])
        model = ridge.fit_ridge(current, train_labels, step_alphas)
        if not reselect_alpha:
            step_alphas = [model.alpha]
        val = FeatureMatrix(val_features.values[:, cols], ids[cols])
        acc = float(np.mean(ridge.predict(model, val) == val_labels))
        steps.append(PruningStep(len(cols) / total, ids[cols].copy(), acc))
        if len(cols) <= min_features:
            break
        n_drop = min(_n_to_remove(len(cols), step_proportion), len(cols) - 1)
        order = np.lexsort((ids[cols], np.abs(model.coefficients)))
        cols = np.sort(cols[order[n_drop:]])
    return PruningCurve(steps=steps, full_accuracy=steps[0].val_accuracy)


def optimal_step(curve: PruningCurve, c: float) -> int:
    """Index of the step maximising the trade-off objective; ties go to the smaller model."""
    if not curve.steps:
        raise DataError("empty pruning curve")
    obj = curve.objective(c)
    best = int(np.flatnonzero(obj >= obj.max() - 1e-12)[-1])
    return best


def select_optimal(curve: PruningCurve, c: float) -> np.ndarray:
    return curve.steps[optimal_step(curve, c)].retained_ids


@dataclass
class DetachConfig:
    num_features: int = 10_000
    c: float = 0.1
    step_proportion: float = 0.05
    min_features: int = 10
    val_fraction: float = 0.25
    seed: int = 0
    alphas: Optional[list] = None
    normalize: bool = True
    max_dilations_per_kernel: int = 32
    channel_decay_base: float = 2.0
    bias_subset: Optional[int] = None
    reselect_alpha: bool = False

    def validate(self) -> None:
        if self.num_features < 84:
            raise DataError("num_features must be >= 84")
        if self.c < 0:
            raise DataError("c must be >= 0")
        if not 0 < self.step_proportion < 1:
            raise DataError("step_proportion must lie in (0, 1)")
        if not 0 < self.val_fraction < 1:
            raise DataError("val_fraction must lie in (0, 1)")
        if self.min_features < 1:
            raise DataError("min_features must be >= 1")


@dataclass(frozen=True, eq=False)
class DetachModel:
    bank: KernelBank  # restricted to kernels with a retained feature
    retained_ids: np.ndarray
    classifier: ridge.RidgeModel
    val_accuracy: float
    c: float
    config: DetachConfig
    norm_stats: Optional[NormStats] = None
    curve_fractions: np.ndarray = field(default_factory=lambda: np.zeros(0))
    curve_accuracies: np.ndarray = field(default_factory=lambda: np.zeros(0))
    full_num_features: int = 0

    @property
    def retained_fraction(self) -> float:
        return len(self.retained_ids) / self.full_num_features if self.full_num_features else float("nan")

    @property
    def n_channels(self) -> int:
        return self.bank.n_channels

    def features(self, dataset: Dataset) -> FeatureMatrix:
        if dataset.n_channels != self.bank.n_channels:
            raise DataError(f"model expects {self.bank.n_channels} channels, dataset has {dataset.n_channels}")
        if self.norm_stats is not None:
            dataset, _ = znormalize(dataset, self.norm_stats)
        return transform(self.bank, dataset)

    def decision_function(self, dataset: Dataset) -> np.ndarray:
        return ridge.decision_function(self.classifier, self.features(dataset))

    def predict(self, dataset: Dataset) -> np.ndarray:
        return ridge.predict(self.classifier, None, scores=self.decision_function(dataset))


def fit_detach(train: Dataset, config: Optional[DetachConfig] = None) -> DetachModel:
    """Fit one pruned MiniRocket-style classifier.

    The bank is fitted on a stratified inner-train part, SFD runs against the
    held-out part, and the classifier on the selected features is refit on
    the whole training set.
    """
    config = config or DetachConfig()
    config.validate()
    if len(np.unique(train.labels)) != 2:
        raise DataError("training set must contain both classes")

    stats = None
    data = train
    if config.normalize:
        data, stats = znormalize(train, None)

    inner_idx, val_idx = split_indices(
        data, SplitSpec(validation_fraction=config.val_fraction, seed=config.seed, stratified=True)
    )
    bank = build_kernel_bank(
        config.num_features,
        data.n_channels,
        data.n_timesteps,
        config.seed,
        max_dilations_per_kernel=config.max_dilations_per_kernel,
        channel_decay_base=config.channel_decay_base,
    )
    bank = fit_biases(bank, data.subset(inner_idx), bias_subset=config.bias_subset)
    features = transform(bank, data)

    curve = sfd(
        features.rows(inner_idx),
        data.labels[inner_idx],
        features.rows(val_idx),
        data.labels[val_idx],
        step_proportion=config.step_proportion,
        min_features=config.min_features,
        alphas=config.alphas,
        reselect_alpha=config.reselect_alpha,
    )
    k = optimal_step(curve, config.c)
    retained = curve.steps[k].retained_ids
    classifier = ridge.fit_ridge(features.select(retained), data.labels, config.alphas)
    restricted = bank.restrict(retained)
    if not np.array_equal(restricted.feature_ids, classifier.feature_ids):
        raise InvariantError("restricted bank and classifier disagree on retained features")
    return DetachModel(
        bank=restricted,
        retained_ids=retained,
        classifier=classifier,
        val_accuracy=curve.steps[k].val_accuracy,
        c=config.c,
        config=config,
        norm_stats=stats,
        curve_fractions=curve.fractions,
        curve_accuracies=curve.accuracies,
        full_num_features=bank.num_features,
    )


# --------------------------------------------------------------------------
# persistence: <dir>/detach.json + bank.json + biases.bin + coefficients.bin


def save_detach(model: DetachModel, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    clf = model.classifier
    manifest = {
        "version": DETACH_FORMAT_VERSION,
        "config": asdict(model.config),
        "c": model.c,
        "val_accuracy": model.val_accuracy,
        "full_num_features": model.full_num_features,
        "retained_ids": model.retained_ids.tolist(),
        "norm_stats": None if model.norm_stats is None else model.norm_stats.to_dict(),
        "curve": {"fractions": model.curve_fractions.tolist(), "accuracies": model.curve_accuracies.tolist()},
        "classifier": {
            "intercept": clf.intercept,
            "alpha": clf.alpha,
            "class_labels": list(clf.class_labels),
            "feature_ids": clf.feature_ids.tolist(),
            "alphas": clf.alphas.tolist(),
            "loo_errors": [float(e) if np.isfinite(e) else None for e in clf.loo_errors],
        },
    }
    (d / "detach.json").write_text(json.dumps(manifest, indent=1))
    (d / "bank.json").write_text(json.dumps(bank_to_dict(model.bank)))
    (d / "biases.bin").write_bytes(np.asarray(model.bank.biases, dtype="<f8").tobytes())
    block = np.concatenate([clf.coefficients, clf.mean, clf.scale]).astype("<f8")
    (d / "coefficients.bin").write_bytes(block.tobytes())


def load_detach(directory) -> DetachModel:
    d = Path(directory)
    if not (d / "detach.json").exists():
        raise DataError(f"{d} does not contain a fitted model (detach.json missing)")
    manifest = json.loads((d / "detach.json").read_text())
    if manifest.get("version") != DETACH_FORMAT_VERSION:
        raise DataError(f"unsupported model version {manifest.get('version')!r}")
    biases = np.frombuffer((d / "biases.bin").read_bytes(), dtype="<f8").astype(np.float64)
    bank = bank_from_dict(json.loads((d / "bank.json").read_text()), biases)
    c = manifest["classifier"]
    p = len(c["feature_ids"])
    block = np.frombuffer((d / "coefficients.bin").read_bytes(), dtype="<f8").astype(np.float64)
    if len(block) != 3 * p:
        raise DataError("coefficient block has the wrong length")
    classifier = ridge.RidgeModel(
        coefficients=block[:p],
        intercept=float(c["intercept"]),
        alpha=float(c["alpha"]),
        feature_ids=np.asarray(c["feature_ids"], dtype=np.int64),
        class_labels=tuple(c["class_labels"]),
        mean=block[p:2 * p],
        scale=block[2 * p:],
        alphas=np.asarray(c["alphas"], dtype=np.float64),
        loo_errors=np.array([np.inf if e is None else e for e in c["loo_errors"]], dtype=np.float64),
    )
    norm = manifest.get("norm_stats")
    return DetachModel(
        bank=bank,
        retained_ids=np.asarray(manifest["retained_ids"], dtype=np.int64),
        classifier=classifier,
        val_accuracy=float(manifest["val_accuracy"]),
        c=float(manifest["c"]),
        config=DetachConfig(**manifest["config"]),
        norm_stats=None if norm is None else NormStats.from_dict(norm),
        curve_fractions=np.asarray(manifest["curve"]["fractions"], dtype=np.float64),
        curve_accuracies=np.asarray(manifest["curve"]["accuracies"], dtype=np.float64),
        full_num_features=int(manifest["full_num_features"]),
    )
