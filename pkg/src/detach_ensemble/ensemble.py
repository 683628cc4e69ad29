"""Performance-weighted ensemble of pruned classifiers and channel relevance.

Each member votes a hard label. Its weight is ``max(val_acc - 0.5, eps)``
normalised over members, so a member at chance level carries (almost) no
weight. The probability of a class is the total weight of the members voting
for it.

Channel relevance of a member spreads ``|theta_i| / |S_i|`` onto every
channel of the kernel behind each retained feature ``i`` (``S_i`` being that
kernel's channel set) and normalises. The ensemble relevance is the
per-channel median over members, renormalised.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset
from .detach import DetachConfig, DetachModel, fit_detach, load_detach, save_detach
from .exceptions import DataError

CHANCE_LEVEL = 0.5
WEIGHT_FLOOR = 1e-6
ENSEMBLE_FORMAT_VERSION = 1


@dataclass
class EnsembleConfig:
    n_models: int = 25
    seed: int = 0
    threshold: float = 0.5
    detach: DetachConfig = field(default_factory=DetachConfig)

    def validate(self) -> None:
        if self.n_models < 1:
            raise DataError("n_models must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise DataError("threshold must lie in (0, 1)")
        self.detach.validate()

    def member_config(self, i: int) -> DetachConfig:
        return replace(self.detach, seed=self.seed + i)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        d = dict(d)
        d["detach"] = DetachConfig(**d.get("detach", {}))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    members: list[DetachModel]
    weights: np.ndarray
    n_channels: int
    class_labels: tuple = (0, 1)
    threshold: float = 0.5
    config: Optional[EnsembleConfig] = None
    channel_names: Optional[list[str]] = None

    def __post_init__(self):
        if len(self.members) < 1 or len(self.members) != len(self.weights):
            raise DataError("ensemble needs one weight per member and at least one member")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise DataError("ensemble weights must be non-negative and sum to 1")

    @property
    def positive_class(self):
        return self.class_labels[1]


def member_weights(val_accuracies) -> np.ndarray:
    """``max(acc - 0.5, 1e-6)`` normalised to sum to one."""
    raw = np.maximum(np.asarray(val_accuracies, dtype=np.float64) - CHANCE_LEVEL, WEIGHT_FLOOR)
    return raw / raw.sum()


def fit_ensemble(train: Dataset, config: Optional[EnsembleConfig] = None, progress=None) -> EnsembleModel:
    """Train ``config.n_models`` members with seeds ``seed + i`` and weight them.

    Members are independent, so the result does not depend on training order.
    """
    config = config or EnsembleConfig()
    config.validate()
    if len(np.unique(train.labels)) != 2:
        raise DataError("training set must contain both classes")
    members = []
    for i in range(config.n_models):
        members.append(fit_detach(train, config.member_config(i)))
        if progress is not None:
            progress(i, members[-1])
    weights = member_weights([m.val_accuracy for m in members])
    return EnsembleModel(
        members=members,
        weights=weights,
        n_channels=train.n_channels,
        class_labels=members[0].classifier.class_labels,
        threshold=config.threshold,
        config=config,
        channel_names=train.channel_names,
    )


def _check(ensemble: EnsembleModel, dataset: Dataset) -> None:
    if dataset.n_channels != ensemble.n_channels:
        raise DataError(f"model expects C={ensemble.n_channels} channels, dataset has C={dataset.n_channels}")


def member_votes(ensemble: EnsembleModel, dataset: Dataset) -> np.ndarray:
    """(n_members, n_instances) hard labels."""
    _check(ensemble, dataset)
    return np.stack([m.predict(dataset) for m in ensemble.members])


def proba_from_votes(votes: np.ndarray, weights: np.ndarray, class_labels) -> np.ndarray:
    """Columns ``[P(class_labels[0]), P(class_labels[1])]`` from hard votes."""
    positive = votes == class_labels[1]
    p_pos = weights @ positive
    p_neg = weights @ ~positive
    proba = np.column_stack([p_neg, p_pos])
    return np.clip(proba, 0.0, 1.0)


def predict_proba(ensemble: EnsembleModel, dataset: Dataset) -> np.ndarray:
    votes = member_votes(ensemble, dataset)
    return proba_from_votes(votes, ensemble.weights, ensemble.class_labels)


def labels_from_proba(proba_positive, threshold: float, class_labels=(0, 1)) -> np.ndarray:
    """Positive when ``P(positive) >= threshold``."""
    if not 0.0 < threshold < 1.0:
        raise DataError(f"threshold must lie in (0, 1), got {threshold}")
    return np.where(np.asarray(proba_positive) >= threshold, class_labels[1], class_labels[0])


def predict_label(ensemble: EnsembleModel, dataset: Dataset, threshold: Optional[float] = None) -> np.ndarray:
    threshold = ensemble.threshold if threshold is None else threshold
    return labels_from_proba(predict_proba(ensemble, dataset)[:, 1], threshold, ensemble.class_labels)


# --------------------------------------------------------------------------
# channel relevance


def _normalise(v: np.ndarray) -> np.ndarray:
    total = v.sum()
    if total <= 0:
        return np.full(len(v), 1.0 / len(v))
    return v / total


def member_channel_relevance(model: DetachModel) -> np.ndarray:
    rel = np.zeros(model.n_channels)
    coefs = np.abs(model.classifier.coefficients)
    bank = model.bank
    sets = bank.feature_channel_sets()
    # classifier and bank share feature order
    for theta, chans in zip(coefs, sets):
        rel[chans] += theta / len(chans)
    return _normalise(rel)


def median_relevance(relevances) -> np.ndarray:
    return _normalise(np.median(np.asarray(relevances, dtype=np.float64), axis=0))


def ensemble_channel_relevance(ensemble: EnsembleModel) -> np.ndarray:
    return median_relevance([member_channel_relevance(m) for m in ensemble.members])


# --------------------------------------------------------------------------
# persistence: <dir>/manifest.json + member_000/ ...


def save_ensemble(ensemble: EnsembleModel, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": ENSEMBLE_FORMAT_VERSION,
        "n_models": len(ensemble.members),
        "weights": ensemble.weights.tolist(),
        "n_channels": ensemble.n_channels,
        "class_labels": list(ensemble.class_labels),
        "threshold": ensemble.threshold,
        "channel_names": ensemble.channel_names,
        "config": None if ensemble.config is None else ensemble.config.to_dict(),
        "members": [f"member_{i:03d}" for i in range(len(ensemble.members))],
    }
    for name, member in zip(manifest["members"], ensemble.members):
        save_detach(member, d / name)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_ensemble(directory) -> EnsembleModel:
    d = Path(directory)
    path = d / "manifest.json"
    if not path.exists():
        raise DataError(f"{d} is not a fitted ensemble (manifest.json missing)")
    manifest = json.loads(path.read_text())
    if manifest.get("version") != ENSEMBLE_FORMAT_VERSION:
        raise DataError(f"unsupported ensemble version {manifest.get('version')!r}")
    members = [load_detach(d / name) for name in manifest["members"]]
    config = manifest.get("config")
    return EnsembleModel(
        members=members,
        weights=np.asarray(manifest["weights"], dtype=np.float64),
        n_channels=int(manifest["n_channels"]),
        class_labels=tuple(manifest["class_labels"]),
        threshold=float(manifest["threshold"]),
        config=None if config is None else EnsembleConfig.from_dict(config),
        channel_names=manifest.get("channel_names"),
    )
