import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from detach_ensemble.data import (
    Dataset,
    NormStats,
    SplitSpec,
    load_dataset,
    save_dataset,
    split,
    split_indices,
    znormalize,
)
from detach_ensemble.exceptions import DataError
from detach_ensemble.synth import SynthConfig, generate


def test_binary_roundtrip_small(tmp_path):
    ds = Dataset(values=np.arange(18, dtype=np.float32).reshape(2, 1, 9), labels=[0, 1])
    save_dataset(ds, tmp_path / "d")
    header = json.loads((tmp_path / "d.json").read_text())
    assert header["n_instances"] == 2 and header["n_channels"] == 1 and header["n_timesteps"] == 9
    assert header["subject_ids"] is None
    assert (tmp_path / "d.bin").stat().st_size == 18 * 4
    back = load_dataset(tmp_path / "d")
    assert back.values.shape == (2, 1, 9)
    assert back.subject_ids is None
    assert back.equals(ds)


def test_binary_roundtrip_single_instance(tmp_path):
    ds = Dataset(values=np.ones((1, 2, 9), dtype=np.float32), labels=[1], subject_ids=[4], channel_names=["a", "b"])
    save_dataset(ds, tmp_path / "one")
    assert load_dataset(tmp_path / "one").equals(ds)


def test_synthetic_roundtrip_bitwise(tmp_path):
    ds = generate(SynthConfig(n_per_class=50, n_timesteps=64, seed=3, n_subjects=5))
    save_dataset(ds, tmp_path / "syn")
    back = load_dataset(tmp_path / "syn")
    assert back.values.tobytes() == ds.values.tobytes()
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.subject_ids, ds.subject_ids)
    assert back.channel_names == ds.channel_names
    assert back.origin == ds.origin


def test_binary_size_mismatch(tmp_path):
    ds = Dataset(values=np.zeros((2, 1, 9), dtype=np.float32), labels=[0, 1])
    save_dataset(ds, tmp_path / "d")
    (tmp_path / "d.bin").write_bytes(b"\0" * 20)
    with pytest.raises(DataError):
        load_dataset(tmp_path / "d")


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "absent")


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(values=rng.standard_normal((3, 2, 10)), labels=[0, 1, 1], subject_ids=[1, 1, 2])
    save_dataset(ds, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    assert np.array_equal(back.values, ds.values)
    assert np.array_equal(back.subject_ids, ds.subject_ids)


def _long_rows(lengths):
    rows = []
    for i, length in enumerate(lengths):
        for t in range(length):
            rows.append({"instance_id": i, "channel": 0, "timestep": t, "value": 0.5, "label": i % 2})
    return pd.DataFrame(rows)


def test_csv_ragged(tmp_path):
    _long_rows([9, 8]).to_csv(tmp_path / "r.csv", index=False)
    with pytest.raises(DataError, match="ragged series length"):
        load_dataset(tmp_path / "r.csv")


def test_csv_unknown_label(tmp_path):
    df = _long_rows([9, 9])
    df["label"] = df["label"].map({0: "yes", 1: "maybe"})
    df.to_csv(tmp_path / "l.csv", index=False)
    with pytest.raises(DataError, match="unknown label"):
        load_dataset(tmp_path / "l.csv")


def test_invariants():
    with pytest.raises(DataError):
        Dataset(values=np.zeros((2, 1, 8)), labels=[0, 1])
    with pytest.raises(DataError):
        Dataset(values=np.zeros((2, 1, 9)), labels=[0])
    with pytest.raises(DataError):
        Dataset(values=np.full((1, 1, 9), np.nan), labels=[0])
    with pytest.raises(DataError):
        Dataset(values=np.zeros((2, 1, 9)), labels=[0, 1], subject_ids=[1])


def test_split_counts_and_determinism():
    ds = Dataset(values=np.zeros((10, 1, 9)), labels=np.arange(10) % 2)
    spec = SplitSpec(validation_fraction=0.3, seed=11, stratified=False)
    tr, va = split_indices(ds, spec)
    assert (len(tr), len(va)) == (7, 3)
    tr2, va2 = split_indices(ds, spec)
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2)
    assert np.array_equal(np.sort(np.concatenate([tr, va])), np.arange(10))


def test_split_stratified():
    ds = Dataset(values=np.zeros((10, 1, 9)), labels=[0] * 5 + [1] * 5)
    _, val = split(ds, SplitSpec(validation_fraction=0.4, seed=1))
    assert np.bincount(val.labels).tolist() == [2, 2]


def test_split_group_by_subject():
    ds = Dataset(values=np.zeros((6, 1, 9)), labels=[0, 1] * 3, subject_ids=[0, 0, 1, 1, 2, 2])
    for seed in range(20):
        train, val = split(ds, SplitSpec(validation_fraction=0.34, seed=seed, group_by_subject=True))
        assert len(np.unique(val.subject_ids)) == 1
        assert not set(train.subject_ids) & set(val.subject_ids)
        assert train.n_instances + val.n_instances == 6


def test_split_errors():
    with pytest.raises(DataError):
        SplitSpec(validation_fraction=1.0)
    ds = Dataset(values=np.zeros((4, 1, 9)), labels=[0, 1, 0, 1])
    with pytest.raises(DataError):
        split(ds, SplitSpec(group_by_subject=True))


@given(
    st.integers(2, 30),
    st.floats(0.05, 0.95),
    st.integers(0, 2**32),
)
def test_split_stratification_property(n_per_class, frac, seed):
    labels = np.repeat([0, 1], n_per_class)
    ds = Dataset(values=np.zeros((len(labels), 1, 9)), labels=labels)
    tr, va = split_indices(ds, SplitSpec(validation_fraction=frac, seed=seed))
    assert len(np.intersect1d(tr, va)) == 0
    counts = np.bincount(labels[va], minlength=2)
    assert np.all(np.abs(counts - frac * n_per_class) <= 1.0)


def test_znormalize_constant_channel():
    ds = Dataset(values=np.full((3, 1, 9), 5.0), labels=[0, 1, 0])
    out, stats = znormalize(ds)
    assert np.all(out.values == 0.0)
    assert stats.std[0] == 0.0


def test_znormalize_already_standard():
    x = np.tile([-1.0, 1.0], 10)[None, None, :]
    ds = Dataset(values=np.repeat(x, 2, axis=0), labels=[0, 1])
    out, _ = znormalize(ds)
    assert np.max(np.abs(out.values - ds.values)) < 1e-12


def test_znormalize_moments_and_idempotence(rng):
    ds = Dataset(values=3.0 + 7.0 * rng.standard_normal((20, 3, 30)), labels=np.arange(20) % 2)
    out, stats = znormalize(ds)
    assert np.all(np.abs(out.values.mean(axis=(0, 2))) < 1e-9)
    assert np.all(np.abs(out.values.std(axis=(0, 2)) - 1.0) < 1e-9)
    again, _ = znormalize(out)
    assert np.max(np.abs(again.values - out.values)) < 1e-9
    # test-time stats are applied unchanged
    other = Dataset(values=rng.standard_normal((4, 3, 30)), labels=[0, 1, 0, 1])
    applied, same = znormalize(other, stats)
    assert same is stats
    assert np.allclose(applied.values, (other.values - stats.mean[None, :, None]) / stats.std[None, :, None])


def test_znormalize_stats_mismatch():
    ds = Dataset(values=np.zeros((2, 2, 9)), labels=[0, 1])
    with pytest.raises(DataError):
        znormalize(ds, NormStats(np.zeros(3), np.ones(3)))


def test_dataset_is_read_only():
    ds = Dataset(values=np.zeros((2, 1, 9)), labels=[0, 1])
    with pytest.raises(ValueError):
        ds.values[0, 0, 0] = 1.0
