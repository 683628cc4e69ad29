"""Pruned random-convolution ensembles for multivariate time series, with channel relevance."""
import os

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the TBB layer warns on import when the installed TBB is too old
    import numba

    numba.config.THREADING_LAYER = "workqueue"

__version__ = "0.1.0"

from .data import Dataset, load_dataset, save_dataset  # noqa: E402
from .detach import DetachConfig, fit_detach  # noqa: E402
from .ensemble import (  # noqa: E402
    EnsembleConfig,
    ensemble_channel_relevance,
    fit_ensemble,
    predict_label,
    predict_proba,
)
from .exceptions import DataError, InvariantError  # noqa: E402
from .synth import SynthConfig, bayes_accuracy, generate  # noqa: E402

__all__ = [
    "DataError",
    "Dataset",
    "DetachConfig",
    "EnsembleConfig",
    "InvariantError",
    "SynthConfig",
    "bayes_accuracy",
    "ensemble_channel_relevance",
    "fit_detach",
    "fit_ensemble",
    "generate",
    "load_dataset",
    "predict_label",
    "predict_proba",
    "save_dataset",
]
