"""Four-channel binary benchmark with a tunable split of class information.

Channels 1 and 2 carry sinusoids whose amplitudes (A1, A2) are drawn from an
isotropic Gaussian per class. Class 1 is centred at ``(base_amp, base_amp)``;
class 2 is shifted by ``separation`` in direction ``(sin theta, cos theta)``,
so theta = 0 makes only A2 informative and theta = 90 only A1. Channel 3 is a
sinusoid whose amplitude ignores the class, channel 4 is empty, and every
channel gets white noise.

Labels are 0 for class 1 and 1 for class 2. Channel indices in code are
0-based (channel 1 is index 0).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .data import Dataset
from .exceptions import DataError

CHANNEL_NAMES = ["ch1", "ch2", "ch3", "ch4"]


@dataclass(frozen=True)
class SynthConfig:
    theta: float = 45.0  # degrees
    n_per_class: int = 250
    n_timesteps: int = 512
    sigma_amp: float = 1.0
    separation: Optional[float] = None  # defaults to 2 * sigma_amp
    base_amp: float = 5.0
    freqs: tuple = (3.0, 7.0, 5.0)
    noise_sigma: float = 1.0
    seed: int = 0
    n_subjects: Optional[int] = None

    def __post_init__(self):
        if self.separation is None:
            object.__setattr__(self, "separation", 2.0 * self.sigma_amp)
        object.__setattr__(self, "freqs", tuple(float(f) for f in self.freqs))
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.theta <= 90.0:
            raise DataError(f"theta must lie in [0, 90], got {self.theta}")
        if self.n_per_class < 1:
            raise DataError("n_per_class must be >= 1")
        if self.n_timesteps < 9:
            raise DataError("n_timesteps must be >= 9")
        if self.sigma_amp < 0 or self.noise_sigma < 0:
            raise DataError("sigmas must be >= 0")
        if self.separation < 0:
            raise DataError("separation must be >= 0")
        if len(self.freqs) != 3 or min(self.freqs) <= 0 or len(set(self.freqs)) != 3:
            raise DataError("freqs must be three distinct positive values")
        if self.n_subjects is not None and not 1 <= self.n_subjects <= 2 * self.n_per_class:
            raise DataError("n_subjects must lie in [1, number of instances]")

    def class_means(self) -> tuple[np.ndarray, np.ndarray]:
        m1 = np.array([self.base_amp, self.base_amp])
        rad = math.radians(self.theta)
        m2 = m1 + self.separation * np.array([math.sin(rad), math.cos(rad)])
        return m1, m2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["freqs"] = list(self.freqs)
        return d


def sample_amplitudes(config: SynthConfig, label: int, rng: np.random.Generator) -> np.ndarray:
    """(A1, A2, A3) for one instance of class ``label``."""
    m1, m2 = config.class_means()
    mean = m2 if label == 1 else m1
    a12 = mean + config.sigma_amp * rng.standard_normal(2)
    a3 = config.base_amp + config.sigma_amp * rng.standard_normal()
    return np.array([a12[0], a12[1], a3])


def render(config: SynthConfig, amplitudes: np.ndarray, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Series (4, T) for given amplitudes; noise is skipped when ``rng`` is None."""
    T = config.n_timesteps
    t = np.arange(T)
    x = np.zeros((4, T))
    for ch in range(3):
        x[ch] = amplitudes[ch] * np.sin(2.0 * np.pi * config.freqs[ch] * t / T)
    if rng is not None and config.noise_sigma > 0:
        x += config.noise_sigma * rng.standard_normal((4, T))
    return x


def generate(config: SynthConfig, return_amplitudes: bool = False):
    """Balanced dataset of ``2 * n_per_class`` instances in seeded random order.

    Instance ``j`` of class ``label`` draws from its own generator keyed on
    ``(seed, label, j)``, so content does not depend on generation order.
    """
    n = 2 * config.n_per_class
    values = np.empty((n, 4, config.n_timesteps), dtype=np.float32)
    labels = np.repeat([0, 1], config.n_per_class)
    amps = np.empty((n, 3))
    for i in range(n):
        label = int(labels[i])
        rng = np.random.default_rng([config.seed, label, i % config.n_per_class])
        amps[i] = sample_amplitudes(config, label, rng)
        values[i] = render(config, amps[i], rng)
    order = np.random.default_rng([config.seed, 2**32 - 1]).permutation(n)
    subjects = None
    if config.n_subjects is not None:
        subjects = np.arange(n) % config.n_subjects
    ds = Dataset(
        values=values[order],
        labels=labels[order],
        subject_ids=subjects,
        channel_names=list(CHANNEL_NAMES),
        origin={"generator": "synth", "config": config.to_dict()},
    )
    if return_amplitudes:
        return ds, amps[order]
    return ds


def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def bayes_accuracy(config: SynthConfig) -> float:
    """Best achievable accuracy from (A1, A2): Phi(separation / (2 sigma)).

    Two isotropic equal-variance Gaussians with equal priors; the optimal
    boundary is the perpendicular bisector of the means, so theta drops out.
    """
    if config.sigma_amp == 0:
        return 1.0 if config.separation > 0 else 0.5
    return normal_cdf(config.separation / (2.0 * config.sigma_amp))
