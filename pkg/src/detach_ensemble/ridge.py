"""Binary ridge classifier with closed-form leave-one-out alpha selection.

Columns are standardized with training statistics, classes are mapped to
targets -1/+1 and the intercept is left unpenalized. For every candidate
alpha the leave-one-out residuals follow from the hat-matrix identity
``e_i / (1 - H_ii)``, computed from one eigendecomposition shared by all
candidates (of ``Z^T Z`` when features <= instances, else of ``Z Z^T``).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DataError
from .transform import FeatureMatrix

DEFAULT_ALPHAS = np.logspace(-3, 5, 17)
_DEGENERATE_STD = 1e-12


@dataclass(frozen=True, eq=False)
class RidgeModel:
    coefficients: np.ndarray  # on standardized columns
    intercept: float
    alpha: float
    feature_ids: np.ndarray
    class_labels: tuple  # (label mapped to -1, label mapped to +1)
    mean: np.ndarray
    scale: np.ndarray
    alphas: np.ndarray  # candidate grid
    loo_errors: np.ndarray  # mean squared LOO residual per candidate

    @property
    def positive_class(self):
        return self.class_labels[1]


def encode_targets(labels) -> tuple[np.ndarray, tuple]:
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) != 2:
        raise DataError(f"need exactly two classes, got {classes.tolist()}")
    y = np.where(labels == classes[1], 1.0, -1.0)
    return y, (classes[0].item(), classes[1].item())


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.where(std < _DEGENERATE_STD, 1.0, std)
    return (X - mean) / scale, mean, scale


def _ridge_path(Z: np.ndarray, y: np.ndarray, alphas: np.ndarray):
    """Coefficient vectors and LOO mean squared errors for every alpha.

    ``Z`` must be column-centered. Returns ``(coefs (n_alphas, p), loo_mse)``.
    """
    n, p = Z.shape
    ybar = y.mean()
    yc = y - ybar
    coefs = np.empty((len(alphas), p))
    loo = np.empty(len(alphas))
    if p <= n:
        lam, V = np.linalg.eigh(Z.T @ Z)
        lam = np.clip(lam, 0.0, None)
        Q = Z @ V  # (n, p)
        Qy = Q.T @ yc
        Q2 = Q * Q
        for a, alpha in enumerate(alphas):
            inv = 1.0 / (lam + alpha)
            beta = V @ (Qy * inv)
            fitted = ybar + Q @ (Qy * inv)
            h = 1.0 / n + Q2 @ inv
            coefs[a] = beta
            loo[a] = _loo_mse(y, fitted, h)
    else:
        lam, U = np.linalg.eigh(Z @ Z.T)
        lam = np.clip(lam, 0.0, None)
        Uy = U.T @ yc
        U2 = U * U
        ZtU = Z.T @ U  # (p, n)
        for a, alpha in enumerate(alphas):
            inv = 1.0 / (lam + alpha)
            beta = ZtU @ (Uy * inv)
            fitted = ybar + U @ (Uy * lam * inv)
            h = 1.0 / n + U2 @ (lam * inv)
            coefs[a] = beta
            loo[a] = _loo_mse(y, fitted, h)
    return coefs, loo


def _loo_mse(y, fitted, h) -> float:
    denom = 1.0 - h
    if np.any(denom < 1e-12):
        return np.inf
    return float(np.mean(((y - fitted) / denom) ** 2))


def fit_ridge(features: FeatureMatrix, labels, alphas=None) -> RidgeModel:
    """Fit on ``features`` choosing alpha by closed-form leave-one-out error."""
    X = np.asarray(features.values, dtype=np.float64)
    n, p = X.shape
    if p < 1:
        raise DataError("empty feature matrix")
    if n < 2:
        raise DataError("need at least two instances")
    if len(labels) != n:
        raise DataError(f"{n} feature rows but {len(labels)} labels")
    y, classes = encode_targets(labels)
    alphas = DEFAULT_ALPHAS if alphas is None else np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 1 or len(alphas) == 0 or np.any(alphas < 0):
        raise DataError("alphas must be a non-empty list of non-negative values")

    Z, mean, scale = standardize(X)
    coefs, loo = _ridge_path(Z, y, alphas)
    best = int(np.argmin(loo))
    return RidgeModel(
        coefficients=coefs[best],
        intercept=float(y.mean()),
        alpha=float(alphas[best]),
        feature_ids=np.asarray(features.feature_ids, dtype=np.int64).copy(),
        class_labels=classes,
        mean=mean,
        scale=scale,
        alphas=alphas.copy(),
        loo_errors=loo,
    )


def decision_function(model: RidgeModel, features: FeatureMatrix) -> np.ndarray:
    """``theta . z + intercept``; positive scores favour ``class_labels[1]``."""
    if len(features.feature_ids) == len(model.feature_ids) and np.array_equal(
        features.feature_ids, model.feature_ids
    ):
        X = features.values
    else:
        X = features.values[:, features.columns(model.feature_ids)]
    Z = (np.asarray(X, dtype=np.float64) - model.mean) / model.scale
    return Z @ model.coefficients + model.intercept


def predict(model: RidgeModel, features: FeatureMatrix, scores: Optional[np.ndarray] = None) -> np.ndarray:
    """Class labels; a score of exactly zero goes to ``class_labels[1]``."""
    if scores is None:
        scores = decision_function(model, features)
    neg, pos = model.class_labels
    return np.where(scores >= 0, pos, neg)


def accuracy(model: RidgeModel, features: FeatureMatrix, labels) -> float:
    return float(np.mean(predict(model, features) == np.asarray(labels)))
