"""Dataset container, on-disk formats, splitting and per-channel normalization.

Two formats are supported:

``dre-binary``
    ``<name>.json`` header plus ``<name>.bin`` payload of little-endian float32
    values in instance-major, channel-major order.
``csv-long``
    One row per sample with columns ``instance_id, channel, timestep, value,
    label`` and an optional ``subject_id``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import DataError

MIN_TIMESTEPS = 9
FORMAT_VERSION = 1
_ORDER = "instance-major, channel-major within instance"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled multivariate series, shape ``(n_instances, n_channels, n_timesteps)``.

    Arrays are copied on construction and marked read-only.
    """

    values: np.ndarray
    labels: np.ndarray
    subject_ids: Optional[np.ndarray] = None
    channel_names: Optional[list[str]] = None
    origin: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        values = np.array(self.values, copy=True)
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float64)
        if values.ndim != 3:
            raise DataError(f"values must be 3-D (instances, channels, timesteps), got shape {values.shape}")
        n, c, t = values.shape
        if n < 1 or c < 1:
            raise DataError("dataset needs at least one instance and one channel")
        if t < MIN_TIMESTEPS:
            raise DataError(f"series length {t} is shorter than the minimum {MIN_TIMESTEPS}")
        if not np.all(np.isfinite(values)):
            raise DataError("values contain NaN or infinity")

        labels = np.array(self.labels, copy=True)
        if labels.shape != (n,):
            raise DataError(f"expected {n} labels, got shape {labels.shape}")
        if labels.dtype.kind == "f":
            if not np.all(labels == np.round(labels)):
                raise DataError("labels must be integers")
        elif labels.dtype.kind not in "iub":
            raise DataError(f"labels must be integers, got dtype {labels.dtype}")
        labels = labels.astype(np.int64)
        if not np.isin(labels, (0, 1)).all():
            raise DataError(f"labels must be binary 0/1, got {sorted(set(labels.tolist()))}")

        subjects = None
        if self.subject_ids is not None:
            subjects = np.array(self.subject_ids, copy=True)
            if subjects.shape != (n,):
                raise DataError(f"expected {n} subject ids, got shape {subjects.shape}")
            if subjects.dtype.kind not in "iu":
                raise DataError("subject ids must be integers")
            subjects = subjects.astype(np.int64)
            subjects.setflags(write=False)

        names = None
        if self.channel_names is not None:
            names = [str(s) for s in self.channel_names]
            if len(names) != c:
                raise DataError(f"expected {c} channel names, got {len(names)}")

        values.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "subject_ids", subjects)
        object.__setattr__(self, "channel_names", names)

    @property
    def n_instances(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def n_timesteps(self) -> int:
        return self.values.shape[2]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            values=self.values[idx],
            labels=self.labels[idx],
            subject_ids=None if self.subject_ids is None else self.subject_ids[idx],
            channel_names=self.channel_names,
            origin=self.origin,
        )

    def with_values(self, values: np.ndarray) -> "Dataset":
        return Dataset(values, self.labels, self.subject_ids, self.channel_names, self.origin)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.values, labels, self.subject_ids, self.channel_names, self.origin)

    def equals(self, other: "Dataset") -> bool:
        """Exact equality of values, labels and metadata."""
        if self.values.shape != other.values.shape:
            return False
        same_subjects = (self.subject_ids is None and other.subject_ids is None) or (
            self.subject_ids is not None
            and other.subject_ids is not None
            and np.array_equal(self.subject_ids, other.subject_ids)
        )
        return (
            np.array_equal(self.values, other.values)
            and np.array_equal(self.labels, other.labels)
            and same_subjects
            and self.channel_names == other.channel_names
        )


# --------------------------------------------------------------------------
# persistence


def _binary_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")


def _infer_format(path) -> str:
    p = Path(path)
    if p.suffix == ".csv":
        return "csv-long"
    return "dre-binary"


def save_dataset(dataset: Dataset, path, format: Optional[str] = None) -> None:
    """Write ``dataset`` to ``path``.

    The binary payload is float32; float64 values are rounded on write.
    """
    fmt = format or _infer_format(path)
    try:
        if fmt == "dre-binary":
            _save_binary(dataset, path)
        elif fmt == "csv-long":
            _save_csv(dataset, path)
        else:
            raise DataError(f"unknown dataset format {fmt!r}")
    except OSError as exc:
        raise DataError(f"cannot write dataset to {path}: {exc}") from exc


def load_dataset(path, format: Optional[str] = None) -> Dataset:
    fmt = format or _infer_format(path)
    if fmt == "dre-binary":
        return _load_binary(path)
    if fmt == "csv-long":
        return _load_csv(path)
    raise DataError(f"unknown dataset format {fmt!r}")


def _save_binary(dataset: Dataset, path) -> None:
    header_path, payload_path = _binary_paths(path)
    header = {
        "version": FORMAT_VERSION,
        "n_instances": dataset.n_instances,
        "n_channels": dataset.n_channels,
        "n_timesteps": dataset.n_timesteps,
        "labels": dataset.labels.tolist(),
        "subject_ids": None if dataset.subject_ids is None else dataset.subject_ids.tolist(),
        "channel_names": dataset.channel_names,
        "dtype": "f32",
        "order": _ORDER,
    }
    if dataset.origin is not None:
        header["origin"] = dataset.origin
    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(dataset.values, dtype="<f4")
    payload_path.write_bytes(payload.tobytes())
    header_path.write_text(json.dumps(header, indent=1))


def _load_binary(path) -> Dataset:
    header_path, payload_path = _binary_paths(path)
    if not header_path.exists():
        raise DataError(f"missing header file {header_path}")
    if not payload_path.exists():
        raise DataError(f"missing payload file {payload_path}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"header {header_path} is not valid JSON: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported header version {header.get('version')!r}")
    if header.get("dtype") != "f32":
        raise DataError(f"unsupported dtype {header.get('dtype')!r}")
    try:
        n, c, t = int(header["n_instances"]), int(header["n_channels"]), int(header["n_timesteps"])
        labels = header["labels"]
    except KeyError as exc:
        raise DataError(f"header missing field {exc}") from exc
    raw = payload_path.read_bytes()
    if len(raw) != n * c * t * 4:
        raise DataError(
            f"payload size {len(raw)} bytes does not match header {n}x{c}x{t} float32 ({n * c * t * 4} bytes)"
        )
    values = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(n, c, t)
    return Dataset(
        values=values,
        labels=np.asarray(labels, dtype=np.int64),
        subject_ids=None if header.get("subject_ids") is None else np.asarray(header["subject_ids"], dtype=np.int64),
        channel_names=header.get("channel_names"),
        origin=header.get("origin"),
    )


def _save_csv(dataset: Dataset, path) -> None:
    import pandas as pd

    n, c, t = dataset.values.shape
    inst, ch, ts = np.meshgrid(np.arange(n), np.arange(c), np.arange(t), indexing="ij")
    channel = ch.ravel() if dataset.channel_names is None else np.asarray(dataset.channel_names, dtype=object)[ch.ravel()]
    frame = {
        "instance_id": inst.ravel(),
        "channel": channel,
        "timestep": ts.ravel(),
        # float64 repr round-trips float32 values exactly
        "value": dataset.values.ravel().astype(np.float64),
        "label": dataset.labels[inst.ravel()],
    }
    if dataset.subject_ids is not None:
        frame["subject_id"] = dataset.subject_ids[inst.ravel()]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(frame).to_csv(path, index=False, float_format="%.17g")


def _load_csv(path) -> Dataset:
    import pandas as pd

    p = Path(path)
    if not p.exists():
        raise DataError(f"missing file {p}")
    df = pd.read_csv(p, dtype={"channel": str}, float_precision="round_trip")
    required = {"instance_id", "channel", "timestep", "value", "label"}
    missing = required - set(df.columns)
    if missing:
        raise DataError(f"CSV missing columns {sorted(missing)}")

    try:
        labels_raw = pd.to_numeric(df["label"], errors="raise")
    except (ValueError, TypeError) as exc:
        raise DataError(f"unknown label strings in {p}: {exc}") from exc

    channel_str = df["channel"].astype(str)
    if channel_str.str.fullmatch(r"\d+").all():
        channel_idx = channel_str.astype(np.int64).to_numpy()
        names = None
    else:
        names = list(dict.fromkeys(channel_str))
        lookup = {name: i for i, name in enumerate(names)}
        channel_idx = channel_str.map(lookup).to_numpy()

    inst_ids = np.unique(df["instance_id"].to_numpy())
    inst_idx = np.searchsorted(inst_ids, df["instance_id"].to_numpy())
    n = len(inst_ids)
    c = int(channel_idx.max()) + 1
    counts = np.zeros((n, c), dtype=np.int64)
    np.add.at(counts, (inst_idx, channel_idx), 1)
    if np.any(counts == 0):
        raise DataError("ragged channel count: some instance lacks a channel")
    if np.any(counts != counts[0, 0]):
        raise DataError("ragged series length: instances/channels have differing numbers of timesteps")
    t = int(counts[0, 0])
    ts = df["timestep"].to_numpy()
    if ts.min() < 0 or ts.max() >= t:
        raise DataError("ragged series length: timestep indices are not 0..T-1")
    values = np.full((n, c, t), np.nan)
    values[inst_idx, channel_idx, ts] = df["value"].to_numpy(dtype=np.float64)
    if np.isnan(values).any():
        raise DataError("duplicate or missing (instance, channel, timestep) rows")

    def per_instance(column):
        col = np.zeros(n, dtype=np.float64)
        arr = np.asarray(column, dtype=np.float64)
        col[inst_idx] = arr
        check = np.zeros(n, dtype=np.float64)
        check[inst_idx[::-1]] = arr[::-1]
        if not np.array_equal(col, check):
            raise DataError(f"column {column.name!r} is not constant within an instance")
        return col

    labels = per_instance(labels_raw)
    subjects = None
    if "subject_id" in df.columns:
        subjects = per_instance(df["subject_id"]).astype(np.int64)
    # float32 values written by save_dataset come back exactly
    as32 = values.astype(np.float32)
    if np.array_equal(as32.astype(np.float64), values):
        values = as32
    return Dataset(values=values, labels=labels, subject_ids=subjects, channel_names=names)


# --------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    validation_fraction: float = 0.25
    seed: int = 0
    stratified: bool = True
    group_by_subject: bool = False

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise DataError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_indices(dataset: Dataset, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return sorted (train, validation) index arrays."""
    rng = np.random.default_rng(spec.seed)
    frac = spec.validation_fraction
    n = dataset.n_instances

    if spec.group_by_subject:
        if dataset.subject_ids is None:
            raise DataError("group_by_subject requested but dataset has no subject ids")
        subjects = np.unique(dataset.subject_ids)
        if len(subjects) < 2:
            raise DataError("group_by_subject needs at least two subjects")
        n_val_subjects = min(max(1, _round_half_up(frac * len(subjects))), len(subjects) - 1)
        chosen = rng.permutation(subjects)[:n_val_subjects]
        val_mask = np.isin(dataset.subject_ids, chosen)
    elif spec.stratified:
        val_mask = np.zeros(n, dtype=bool)
        for label in np.unique(dataset.labels):
            members = np.flatnonzero(dataset.labels == label)
            if len(members) < 2:
                raise DataError(f"stratified split needs >=2 instances of class {label}, got {len(members)}")
            k = min(max(1, _round_half_up(frac * len(members))), len(members) - 1)
            val_mask[rng.permutation(members)[:k]] = True
    else:
        if n < 2:
            raise DataError("cannot split fewer than two instances")
        k = min(max(1, _round_half_up(frac * n)), n - 1)
        val_mask = np.zeros(n, dtype=bool)
        val_mask[rng.permutation(n)[:k]] = True

    return np.flatnonzero(~val_mask), np.flatnonzero(val_mask)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    train_idx, val_idx = split_indices(dataset, spec)
    return dataset.subset(train_idx), dataset.subset(val_idx)


# --------------------------------------------------------------------------
# normalization

_DEGENERATE_STD = 1e-12


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def channel_stats(dataset: Dataset) -> NormStats:
    x = dataset.values.astype(np.float64)
    mean = x.mean(axis=(0, 2))
    std = x.std(axis=(0, 2))
    return NormStats(mean, std)


def znormalize(dataset: Dataset, stats: Optional[NormStats] = None) -> tuple[Dataset, NormStats]:
    """Per-channel z-normalization; computes stats from ``dataset`` when not given.

    Channels whose std is below 1e-12 are only centered.
    """
    if stats is None:
        stats = channel_stats(dataset)
    elif len(stats.mean) != dataset.n_channels or len(stats.std) != dataset.n_channels:
        raise DataError(
            f"normalization stats cover {len(stats.mean)} channels, dataset has {dataset.n_channels}"
        )
    scale = np.where(stats.std < _DEGENERATE_STD, 1.0, stats.std)
    x = (dataset.values.astype(np.float64) - stats.mean[None, :, None]) / scale[None, :, None]
    return dataset.with_values(x), stats
