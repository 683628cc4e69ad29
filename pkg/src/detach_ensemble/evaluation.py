"""Binary classification metrics, ROC analysis and subject-level validation."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .data import Dataset
from .ensemble import (
    EnsembleConfig,
    ensemble_channel_relevance,
    fit_ensemble,
    labels_from_proba,
    predict_proba,
)
from .exceptions import DataError, InvariantError

# thresholds just above 1 and just below 0: nothing / everything positive
THRESHOLD_ABOVE_ONE = math.nextafter(1.0, math.inf)
THRESHOLD_BELOW_ZERO = math.nextafter(0.0, -math.inf)


@dataclass(frozen=True, eq=False)
class Metrics:
    accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    confusion: np.ndarray  # [[TN, FP], [FN, TP]]; rows true, columns predicted
    degenerate: tuple = ()  # metrics whose denominator was zero (reported as 0)

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "f1": self.f1,
            "confusion": self.confusion.tolist(),
            "degenerate": list(self.degenerate),
        }


def _negative_class(positive_class, classes):
    classes = tuple(classes)
    if len(classes) != 2 or positive_class not in classes:
        raise DataError(f"positive class {positive_class!r} not among binary classes {classes}")
    return classes[0] if classes[1] == positive_class else classes[1]


def metrics_from_confusion(confusion) -> Metrics:
    (tn, fp), (fn, tp) = np.asarray(confusion, dtype=np.int64)
    degenerate = []

    def ratio(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    n = tn + fp + fn + tp
    if n == 0:
        raise DataError("empty confusion matrix")
    sens = ratio(tp, tp + fn, "sensitivity")
    spec = ratio(tn, tn + fp, "specificity")
    prec = ratio(tp, tp + fp, "precision")
    f1 = ratio(2 * prec * sens, prec + sens, "f1")
    return Metrics(
        accuracy=(tp + tn) / n,
        sensitivity=sens,
        specificity=spec,
        precision=prec,
        f1=f1,
        confusion=np.array([[tn, fp], [fn, tp]], dtype=np.int64),
        degenerate=tuple(degenerate),
    )


def confusion_matrix(y_true, y_pred, positive_class=1, classes=(0, 1)) -> np.ndarray:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if len(y_true) == 0:
        raise DataError("empty input")
    if y_true.shape != y_pred.shape:
        raise DataError(f"length mismatch: {len(y_true)} true vs {len(y_pred)} predicted labels")
    _negative_class(positive_class, classes)
    for arr in (y_true, y_pred):
        if not np.isin(arr, classes).all():
            raise DataError(f"labels outside binary set {tuple(classes)}")
    t = y_true == positive_class
    p = y_pred == positive_class
    return np.array([[np.sum(~t & ~p), np.sum(~t & p)], [np.sum(t & ~p), np.sum(t & p)]], dtype=np.int64)


def compute_metrics(y_true, y_pred, positive_class=1, classes=(0, 1)) -> Metrics:
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, positive_class, classes))


# --------------------------------------------------------------------------
# ROC


@dataclass(frozen=True, eq=False)
class RocCurve:
    thresholds: np.ndarray  # decreasing
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


def _positive_mask(y_true, positive_class, classes) -> np.ndarray:
    y_true = np.asarray(y_true)
    _negative_class(positive_class, classes)
    if not np.isin(y_true, classes).all():
        raise DataError(f"labels outside binary set {tuple(classes)}")
    return y_true == positive_class


def roc(y_true, prob_positive, positive_class=1, classes=(0, 1)) -> RocCurve:
    """ROC over every distinct probability plus the two sentinel thresholds.

    An instance counts as positive when its probability is ``>=`` the
    threshold. AUC is the trapezoid area under (FPR, TPR).
    """
    prob = np.asarray(prob_positive, dtype=np.float64)
    pos = _positive_mask(y_true, positive_class, classes)
    if len(prob) != len(pos):
        raise DataError("length mismatch between labels and probabilities")
    if len(prob) == 0:
        raise DataError("empty input")
    if np.any((prob < 0) | (prob > 1)) or np.any(~np.isfinite(prob)):
        raise DataError("probabilities must lie in [0, 1]")
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC/AUC undefined: y_true contains a single class")

    thresholds = np.concatenate([[THRESHOLD_ABOVE_ONE], np.unique(prob)[::-1], [THRESHOLD_BELOW_ZERO]])
    pos_sorted = np.sort(prob[pos])
    neg_sorted = np.sort(prob[~pos])
    tp = n_pos - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = n_neg - np.searchsorted(neg_sorted, thresholds, side="left")
    tpr, fpr = tp / n_pos, fp / n_neg
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=auc)


def best_threshold(
    curve: RocCurve, y_true, prob_positive, criterion: str = "accuracy", positive_class=1, classes=(0, 1)
) -> tuple[float, Metrics]:
    """Candidate threshold with the highest accuracy.

    Ties go to the threshold closest to 0.5, then to the lower one.
    """
    if criterion != "accuracy":
        raise DataError(f"unsupported criterion {criterion!r}")
    prob = np.asarray(prob_positive, dtype=np.float64)
    y_true = np.asarray(y_true)
    negative = _negative_class(positive_class, classes)
    best = None
    for thr in curve.thresholds:
        y_pred = np.where(prob >= thr, positive_class, negative)
        m = compute_metrics(y_true, y_pred, positive_class, classes)
        key = (m.accuracy, -abs(thr - 0.5), -thr)
        if best is None or key > best[0]:
            best = (key, float(thr), m)
    return best[1], best[2]


# --------------------------------------------------------------------------
# subject-level evaluation


def subject_majority_vote(y_pred_trials, subject_ids, y_true_subjects, positive_class=1, classes=(0, 1)):
    """Modal predicted label per subject, ties to the positive class.

    ``y_true_subjects`` maps subject id to its true label, or is a sequence
    aligned with ``np.unique(subject_ids)``. Returns
    ``(predictions: dict subject -> label, subject accuracy)``.
    """
    y_pred = np.asarray(y_pred_trials)
    subjects = np.asarray(subject_ids)
    if len(y_pred) != len(subjects):
        raise DataError("length mismatch between predictions and subject ids")
    negative = _negative_class(positive_class, classes)
    unique = np.unique(subjects)
    if isinstance(y_true_subjects, Mapping):
        truth = dict(y_true_subjects)
    else:
        values = list(y_true_subjects)
        if len(values) != len(unique):
            raise DataError("y_true_subjects must align with the unique subject ids")
        truth = dict(zip(unique.tolist(), values))
    missing = [s for s in truth if s not in set(unique.tolist())]
    if missing:
        raise DataError(f"subjects without trial predictions: {missing}")

    predictions = {}
    for s in unique.tolist():
        votes = y_pred[subjects == s]
        n_pos = int(np.sum(votes == positive_class))
        n_neg = len(votes) - n_pos
        predictions[s] = positive_class if n_pos >= n_neg else negative
    scored = [s for s in predictions if s in truth]
    if not scored:
        raise DataError("no subject has a true label")
    acc = float(np.mean([predictions[s] == truth[s] for s in scored]))
    return predictions, acc


@dataclass(frozen=True, eq=False)
class FoldResult:
    subject: int
    test_indices: np.ndarray
    train_subjects: np.ndarray
    metrics: Metrics
    relevance: np.ndarray


@dataclass(frozen=True, eq=False)
class LosoResult:
    confusion: np.ndarray
    folds: list[FoldResult]
    probabilities: np.ndarray  # P(positive) per instance, NaN where the fold was skipped
    skipped: list[dict] = field(default_factory=list)

    @property
    def metrics(self) -> Metrics:
        return metrics_from_confusion(self.confusion)

    @property
    def mean_relevance(self) -> np.ndarray:
        return np.mean([f.relevance for f in self.folds], axis=0)


def loso_cv(
    dataset: Dataset,
    config: Optional[EnsembleConfig] = None,
    threshold: float = 0.5,
    positive_class=1,
    progress=None,
) -> LosoResult:
    """Leave-one-subject-out: one ensemble per held-out subject, confusions summed."""
    config = config or EnsembleConfig()
    if dataset.subject_ids is None:
        raise DataError("LOSO needs subject ids")
    subjects = np.unique(dataset.subject_ids)
    if len(subjects) < 2:
        raise DataError("LOSO needs at least two subjects")
    classes = (0, 1)

    confusion = np.zeros((2, 2), dtype=np.int64)
    probabilities = np.full(dataset.n_instances, np.nan)
    folds, skipped = [], []
    for s in subjects.tolist():
        test_idx = np.flatnonzero(dataset.subject_ids == s)
        train_idx = np.flatnonzero(dataset.subject_ids != s)
        train_subjects = np.unique(dataset.subject_ids[train_idx])
        if s in train_subjects or np.intersect1d(test_idx, train_idx).size:
            raise InvariantError(f"fold {s}: held-out subject leaks into training")
        if len(np.unique(dataset.labels[train_idx])) < 2:
            record = {"subject": s, "reason": "training set has a single class"}
            warnings.warn(f"LOSO fold for subject {s} skipped: {record['reason']}")
            skipped.append(record)
            continue
        model = fit_ensemble(dataset.subset(train_idx), config)
        test = dataset.subset(test_idx)
        p = predict_proba(model, test)[:, 1]
        probabilities[test_idx] = p
        y_pred = labels_from_proba(p, threshold, classes)
        cm = confusion_matrix(test.labels, y_pred, positive_class, classes)
        confusion += cm
        folds.append(
            FoldResult(
                subject=s,
                test_indices=test_idx,
                train_subjects=train_subjects,
                metrics=metrics_from_confusion(cm),
                relevance=ensemble_channel_relevance(model),
            )
        )
        if progress is not None:
            progress(s, folds[-1])
    if not folds:
        raise DataError("every LOSO fold was skipped")
    return LosoResult(confusion=confusion, folds=folds, probabilities=probabilities, skipped=skipped)
