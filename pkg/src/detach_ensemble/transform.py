"""MiniRocket-style random convolutional features for multivariate series.

A kernel instance is one of the 84 fixed length-9 weight patterns (six -1,
three +2) together with a dilation, a padding mode and a subset of channels.
Its feature map is the pattern convolved along time on each channel of the
subset, summed across the subset. Every kernel instance carries one or more
biases; each (kernel instance, bias) pair is a feature whose value is the
proportion of positive values (PPV) of ``feature_map - bias``.

Biases are quantiles of the kernel's outputs on the training set, with the
quantile levels taken from a base-2 van der Corput sequence.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit, prange

from .data import Dataset
from .exceptions import DataError

KERNEL_LENGTH = 9
N_PATTERNS = 84
MAX_CHANNELS_PER_KERNEL = 9
BANK_FORMAT_VERSION = 1


def _make_patterns() -> np.ndarray:
    patterns = np.full((N_PATTERNS, KERNEL_LENGTH), -1.0)
    for i, positions in enumerate(combinations(range(KERNEL_LENGTH), 3)):
        patterns[i, list(positions)] = 2.0
    return patterns


PATTERNS = _make_patterns()
PATTERNS.setflags(write=False)


def van_der_corput(n: int, base: int = 2) -> np.ndarray:
    """First ``n`` terms (indices 1..n) of the van der Corput sequence."""
    out = np.empty(n)
    for i in range(1, n + 1):
        q, denom, k = 0.0, 1.0, i
        while k:
            denom *= base
            k, rem = divmod(k, base)
            q += rem / denom
        out[i - 1] = q
    return out


def dilation_schedule(n_timesteps: int, features_per_pattern: int, max_dilations_per_kernel: int = 32):
    """Dilations spaced uniformly in log2 up to ``(n_timesteps - 1) / 8``.

    Returns ``(dilations, features_per_dilation)``; the counts sum to
    ``features_per_pattern``.
    """
    n_dil = min(features_per_pattern, max_dilations_per_kernel)
    multiplier = features_per_pattern / n_dil
    max_exponent = np.log2((n_timesteps - 1) / (KERNEL_LENGTH - 1))
    dilations, counts = np.unique(
        np.floor(np.logspace(0, max_exponent, n_dil, base=2)).astype(np.int64), return_counts=True
    )
    counts = (counts * multiplier).astype(np.int64)
    remainder = features_per_pattern - counts.sum()
    i = 0
    while remainder > 0:
        counts[i] += 1
        remainder -= 1
        i = (i + 1) % len(counts)
    return dilations, counts


def channel_subset_probabilities(n_channels: int, base: float = 2.0) -> np.ndarray:
    """P(|channel_set| = k) proportional to base**-k for k = 1..min(9, C)."""
    kmax = min(MAX_CHANNELS_PER_KERNEL, n_channels)
    w = base ** -np.arange(1, kmax + 1, dtype=np.float64)
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class KernelBank:
    """Kernel instances (indexed ``k``) and their features (indexed ``f``).

    Features are stored grouped by kernel instance, in increasing kernel
    index, so the features of kernel ``k`` occupy a contiguous block.
    """

    n_channels: int
    n_timesteps: int
    seed: int
    pattern_idx: np.ndarray  # (K,)
    dilations: np.ndarray  # (K,)
    same_padding: np.ndarray  # (K,) bool
    channel_offsets: np.ndarray  # (K + 1,)
    channel_indices: np.ndarray  # flat channel sets
    feature_kernel: np.ndarray  # (F,) kernel instance of each feature
    feature_ids: np.ndarray  # (F,)
    quantiles: np.ndarray  # (F,)
    biases: Optional[np.ndarray] = None  # (F,) once fitted
    max_dilations_per_kernel: int = 32
    channel_decay_base: float = 2.0

    @property
    def fitted(self) -> bool:
        return self.biases is not None

    @property
    def n_kernels(self) -> int:
        return len(self.pattern_idx)

    @property
    def num_features(self) -> int:
        return len(self.feature_ids)

    def channel_set(self, k: int) -> np.ndarray:
        return self.channel_indices[self.channel_offsets[k]:self.channel_offsets[k + 1]]

    @property
    def channel_sets(self) -> list[np.ndarray]:
        return [self.channel_set(k) for k in range(self.n_kernels)]

    def feature_offsets(self) -> np.ndarray:
        return np.searchsorted(self.feature_kernel, np.arange(self.n_kernels + 1)).astype(np.int64)

    def feature_channel_sets(self) -> list[np.ndarray]:
        """Channel set of the kernel behind each feature, in feature order."""
        sets = self.channel_sets
        return [sets[k] for k in self.feature_kernel]

    def restrict(self, feature_ids) -> "KernelBank":
        """Bank holding only ``feature_ids`` and the kernel instances they use."""
        ids = np.unique(np.asarray(feature_ids, dtype=np.int64))
        keep = np.isin(self.feature_ids, ids)
        if keep.sum() != len(ids):
            raise DataError("restrict: some feature ids are not in this bank")
        used = np.unique(self.feature_kernel[keep])
        remap = np.full(self.n_kernels, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        sets = [self.channel_set(k) for k in used]
        offsets = np.concatenate([[0], np.cumsum([len(s) for s in sets])]).astype(np.int64)
        flat = np.concatenate(sets).astype(np.int64) if sets else np.zeros(0, dtype=np.int64)
        return replace(
            self,
            pattern_idx=self.pattern_idx[used],
            dilations=self.dilations[used],
            same_padding=self.same_padding[used],
            channel_offsets=offsets,
            channel_indices=flat,
            feature_kernel=remap[self.feature_kernel[keep]],
            feature_ids=self.feature_ids[keep],
            quantiles=self.quantiles[keep],
            biases=None if self.biases is None else self.biases[keep],
        )

    def relabel_channels(self, permutation) -> "KernelBank":
        """Bank with every channel index ``c`` in the channel sets replaced by ``permutation[c]``."""
        perm = np.asarray(permutation, dtype=np.int64)
        sets = [np.sort(perm[s]) for s in self.channel_sets]
        flat = np.concatenate(sets) if sets else np.zeros(0, dtype=np.int64)
        return replace(self, channel_indices=flat.astype(np.int64))


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # (n_instances, n_features)
    feature_ids: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.feature_ids):
            raise DataError(
                f"feature matrix has {self.values.shape} values for {len(self.feature_ids)} feature ids"
            )

    @property
    def n_instances(self) -> int:
        return self.values.shape[0]

    def columns(self, feature_ids) -> np.ndarray:
        """Column positions of ``feature_ids``; raises if any are missing."""
        ids = np.asarray(feature_ids, dtype=np.int64)
        order = np.argsort(self.feature_ids, kind="stable")
        sorted_ids = self.feature_ids[order]
        pos = np.searchsorted(sorted_ids, ids)
        pos = np.clip(pos, 0, max(len(sorted_ids) - 1, 0))
        if len(ids) and (len(sorted_ids) == 0 or np.any(sorted_ids[pos] != ids)):
            missing = ids[(len(sorted_ids) == 0) | (sorted_ids[pos] != ids)]
            raise DataError(f"feature matrix lacks feature ids {missing[:10].tolist()}")
        return order[pos]

    def select(self, feature_ids) -> "FeatureMatrix":
        ids = np.asarray(feature_ids, dtype=np.int64)
        return FeatureMatrix(self.values[:, self.columns(ids)], ids)

    def rows(self, indices) -> "FeatureMatrix":
        return FeatureMatrix(self.values[np.asarray(indices)], self.feature_ids)


# --------------------------------------------------------------------------
# construction


def build_kernel_bank(
    num_features: int,
    n_channels: int,
    n_timesteps: int,
    seed: int,
    max_dilations_per_kernel: int = 32,
    channel_decay_base: float = 2.0,
) -> KernelBank:
    """Unfitted bank with ``84 * (num_features // 84)`` features."""
    if num_features < N_PATTERNS:
        raise DataError(f"num_features must be >= {N_PATTERNS}, got {num_features}")
    if n_timesteps < KERNEL_LENGTH:
        raise DataError(f"receptive field of {KERNEL_LENGTH} cannot fit a series of length {n_timesteps}")
    if n_channels < 1:
        raise DataError("need at least one channel")
    if channel_decay_base <= 0:
        raise DataError("channel_decay_base must be positive")

    features_per_pattern = num_features // N_PATTERNS
    dilations, per_dilation = dilation_schedule(n_timesteps, features_per_pattern, max_dilations_per_kernel)

    n_dil = len(dilations)
    pattern_idx = np.tile(np.arange(N_PATTERNS), n_dil)
    dilation_idx = np.repeat(np.arange(n_dil), N_PATTERNS)
    kernel_dilations = dilations[dilation_idx]
    # alternate padding across kernel instances
    same = (dilation_idx + pattern_idx) % 2 == 0
    n_kernels = len(pattern_idx)

    rng = np.random.default_rng(seed)
    probs = channel_subset_probabilities(n_channels, channel_decay_base)
    sizes = rng.choice(np.arange(1, len(probs) + 1), size=n_kernels, p=probs)
    sets = [np.sort(rng.choice(n_channels, size=k, replace=False)) for k in sizes]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    flat = np.concatenate(sets).astype(np.int64)

    feature_kernel = np.repeat(np.arange(n_kernels), per_dilation[dilation_idx]).astype(np.int64)
    n_feat = len(feature_kernel)
    return KernelBank(
        n_channels=n_channels,
        n_timesteps=n_timesteps,
        seed=int(seed),
        pattern_idx=pattern_idx.astype(np.int64),
        dilations=kernel_dilations.astype(np.int64),
        same_padding=same,
        channel_offsets=offsets,
        channel_indices=flat,
        feature_kernel=feature_kernel,
        feature_ids=np.arange(n_feat, dtype=np.int64),
        quantiles=van_der_corput(n_feat),
        biases=None,
        max_dilations_per_kernel=max_dilations_per_kernel,
        channel_decay_base=channel_decay_base,
    )


# --------------------------------------------------------------------------
# numeric kernels
#
# The feature map is accumulated per position as
#   0.0 + w0*x[c0, .] + ... + w8*x[c0, .] + w0*x[c1, .] + ...
# i.e. channel-major then tap order, skipping zero-padded taps. The oracle
# uses the same order so both paths agree bit-for-bit.


@njit(cache=True, nogil=True)
def _feature_map(x, weights, dilation, same, chans, out):
    T = x.shape[1]
    half = 4 * dilation
    if same:
        lo, hi = 0, T
    else:
        lo, hi = half, T - half
    out[lo:hi] = 0.0
    for ci in range(chans.shape[0]):
        row = x[chans[ci]]
        for j in range(9):
            w = weights[j]
            off = (j - 4) * dilation
            a = max(lo, -off)
            b = min(hi, T - off)
            # slice views let LLVM vectorize the update
            src = row[a + off:b + off]
            dst = out[a:b]
            for t in range(b - a):
                dst[t] += w * src[t]
    return lo, hi


@njit(cache=True, nogil=True)
def _kernel_outputs(X, weights, dilation, same, chans):
    n, _, T = X.shape
    buf = np.empty(T)
    if same:
        L = T
    else:
        L = T - 8 * dilation
    out = np.empty(n * L)
    for i in range(n):
        lo, hi = _feature_map(X[i], weights, dilation, same, chans, buf)
        out[i * L:(i + 1) * L] = buf[lo:hi]
    return out


@njit(cache=True, parallel=True)
def _transform(X, patterns, pattern_idx, dilations, same, ch_off, ch_idx, feat_off, biases):
    n, _, T = X.shape
    K = pattern_idx.shape[0]
    out = np.zeros((n, biases.shape[0]))
    for i in prange(n):
        buf = np.empty(T)
        for k in range(K):
            lo, hi = _feature_map(
                X[i], patterns[pattern_idx[k]], dilations[k], same[k], ch_idx[ch_off[k]:ch_off[k + 1]], buf
            )
            L = hi - lo
            fmap = buf[lo:hi]
            for f in range(feat_off[k], feat_off[k + 1]):
                b = biases[f]
                count = 0
                for t in range(L):
                    count += fmap[t] > b
                out[i, f] = count / L
    return out


def quantile_type7(values: np.ndarray, qs: np.ndarray) -> np.ndarray:
    """Linear-interpolation quantiles (Hyndman-Fan type 7).

    ``x[lo] + (h - lo) * (x[lo + 1] - x[lo])`` with ``h = (N - 1) q``.
    Depends only on the multiset of ``values``.
    """
    n = len(values)
    h = (n - 1) * np.asarray(qs, dtype=np.float64)
    lo = np.floor(h).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    ordered = np.sort(values)
    xlo, xhi = ordered[lo], ordered[hi]
    return xlo + (h - lo) * (xhi - xlo)


def _check_channels(bank: KernelBank, dataset: Dataset) -> None:
    if dataset.n_channels != bank.n_channels:
        raise DataError(f"bank expects {bank.n_channels} channels, dataset has {dataset.n_channels}")
    if dataset.n_timesteps != bank.n_timesteps:
        raise DataError(f"bank expects series of length {bank.n_timesteps}, dataset has {dataset.n_timesteps}")


def fit_biases(bank: KernelBank, train: Dataset, bias_subset: Optional[int] = None) -> KernelBank:
    """Set each feature's bias to a quantile of its kernel's training outputs.

    By default every training instance is used, which makes the biases a
    deterministic function of (seed, training set). ``bias_subset`` limits
    fitting to a seeded random sample of that many instances.
    """
    if bank.fitted:
        raise DataError("bank is already fitted")
    if train.n_instances == 0:
        raise DataError("empty training set")
    _check_channels(bank, train)
    X = np.ascontiguousarray(train.values, dtype=np.float64)
    if bias_subset is not None and bias_subset < len(X):
        rng = np.random.default_rng([bank.seed, 1])
        X = X[np.sort(rng.choice(len(X), size=bias_subset, replace=False))]

    biases = np.empty(bank.num_features)
    offsets = bank.feature_offsets()
    for k in range(bank.n_kernels):
        f0, f1 = offsets[k], offsets[k + 1]
        if f0 == f1:
            continue
        outputs = _kernel_outputs(
            X, PATTERNS[bank.pattern_idx[k]], int(bank.dilations[k]), bool(bank.same_padding[k]), bank.channel_set(k)
        )
        biases[f0:f1] = quantile_type7(outputs, bank.quantiles[f0:f1])
    return replace(bank, biases=biases)


def transform(bank: KernelBank, dataset: Dataset) -> FeatureMatrix:
    """PPV features, one column per feature of ``bank``."""
    if not bank.fitted:
        raise DataError("kernel bank is not fitted")
    _check_channels(bank, dataset)
    X = np.ascontiguousarray(dataset.values, dtype=np.float64)
    values = _transform(
        X,
        PATTERNS,
        bank.pattern_idx,
        bank.dilations,
        bank.same_padding,
        bank.channel_offsets,
        bank.channel_indices,
        bank.feature_offsets(),
        bank.biases,
    )
    return FeatureMatrix(values, bank.feature_ids.copy())


def transform_oracle(bank: KernelBank, dataset: Dataset) -> FeatureMatrix:
    """Reference implementation: plain loops over instances, features, positions.

    Slow; intended for checking ``transform`` on small inputs.
    """
    if not bank.fitted:
        raise DataError("kernel bank is not fitted")
    _check_channels(bank, dataset)
    X = np.asarray(dataset.values, dtype=np.float64).tolist()
    T = dataset.n_timesteps
    out = np.zeros((dataset.n_instances, bank.num_features))
    for i in range(dataset.n_instances):
        for f in range(bank.num_features):
            k = int(bank.feature_kernel[f])
            weights = PATTERNS[bank.pattern_idx[k]].tolist()
            d = int(bank.dilations[k])
            chans = bank.channel_set(k).tolist()
            bias = float(bank.biases[f])
            positions = range(T) if bank.same_padding[k] else range(4 * d, T - 4 * d)
            positive = 0
            total = 0
            for t in positions:
                value = 0.0
                for c in chans:
                    for j in range(KERNEL_LENGTH):
                        idx = t + (j - 4) * d
                        if 0 <= idx < T:
                            value += weights[j] * X[i][c][idx]
                if value > bias:
                    positive += 1
                total += 1
            out[i, f] = positive / total
    return FeatureMatrix(out, bank.feature_ids.copy())


# --------------------------------------------------------------------------
# persistence


def bank_to_dict(bank: KernelBank) -> dict:
    return {
        "version": BANK_FORMAT_VERSION,
        "n_channels": bank.n_channels,
        "n_timesteps": bank.n_timesteps,
        "seed": bank.seed,
        "max_dilations_per_kernel": bank.max_dilations_per_kernel,
        "channel_decay_base": bank.channel_decay_base,
        "kernels": {
            "pattern": bank.pattern_idx.tolist(),
            "dilation": bank.dilations.tolist(),
            "padding": ["same" if s else "valid" for s in bank.same_padding],
            "channel_sets": [s.tolist() for s in bank.channel_sets],
        },
        "features": {
            "kernel": bank.feature_kernel.tolist(),
            "feature_id": bank.feature_ids.tolist(),
            "quantile": bank.quantiles.tolist(),
        },
        "fitted": bank.fitted,
    }


def bank_from_dict(d: dict, biases: Optional[np.ndarray]) -> KernelBank:
    if d.get("version") != BANK_FORMAT_VERSION:
        raise DataError(f"unsupported kernel bank version {d.get('version')!r}")
    kernels, features = d["kernels"], d["features"]
    sets = [np.asarray(s, dtype=np.int64) for s in kernels["channel_sets"]]
    offsets = np.concatenate([[0], np.cumsum([len(s) for s in sets])]).astype(np.int64)
    flat = np.concatenate(sets).astype(np.int64) if sets else np.zeros(0, dtype=np.int64)
    bank = KernelBank(
        n_channels=int(d["n_channels"]),
        n_timesteps=int(d["n_timesteps"]),
        seed=int(d["seed"]),
        pattern_idx=np.asarray(kernels["pattern"], dtype=np.int64),
        dilations=np.asarray(kernels["dilation"], dtype=np.int64),
        same_padding=np.asarray([p == "same" for p in kernels["padding"]], dtype=bool),
        channel_offsets=offsets,
        channel_indices=flat,
        feature_kernel=np.asarray(features["kernel"], dtype=np.int64),
        feature_ids=np.asarray(features["feature_id"], dtype=np.int64),
        quantiles=np.asarray(features["quantile"], dtype=np.float64),
        biases=biases,
        max_dilations_per_kernel=int(d["max_dilations_per_kernel"]),
        channel_decay_base=float(d["channel_decay_base"]),
    )
    if d.get("fitted") and (biases is None or len(biases) != bank.num_features):
        raise DataError("bias block missing or of the wrong length")
    return bank


def save_bank(bank: KernelBank, path) -> None:
    """Write ``<path>.json`` (structure) and ``<path>.biases.bin`` (f64 LE)."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.with_name(p.name + ".json").write_text(json.dumps(bank_to_dict(bank)))
    if bank.fitted:
        p.with_name(p.name + ".biases.bin").write_bytes(np.asarray(bank.biases, dtype="<f8").tobytes())


def load_bank(path) -> KernelBank:
    p = Path(path)
    header = p.with_name(p.name + ".json")
    if not header.exists():
        raise DataError(f"missing kernel bank file {header}")
    d = json.loads(header.read_text())
    biases = None
    if d.get("fitted"):
        raw = p.with_name(p.name + ".biases.bin")
        if not raw.exists():
            raise DataError(f"missing bias block {raw}")
        biases = np.frombuffer(raw.read_bytes(), dtype="<f8").astype(np.float64)
    return bank_from_dict(d, biases)
