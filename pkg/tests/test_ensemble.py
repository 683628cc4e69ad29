import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from detach_ensemble import ridge
from detach_ensemble.detach import DetachConfig, DetachModel
from detach_ensemble.ensemble import (
    EnsembleConfig,
    EnsembleModel,
    ensemble_channel_relevance,
    fit_ensemble,
    labels_from_proba,
    load_ensemble,
    median_relevance,
    member_channel_relevance,
    member_weights,
    predict_label,
    predict_proba,
    proba_from_votes,
    save_ensemble,
)
from detach_ensemble.exceptions import DataError
from detach_ensemble.synth import SynthConfig, generate
from detach_ensemble.transform import bank_from_dict


def make_member(channel_sets, coefficients, n_channels, kept=None):
    """Member whose bank has one feature per kernel; ``kept`` selects retained kernels."""
    K = len(channel_sets)
    bank = bank_from_dict(
        {
            "version": 1,
            "n_channels": n_channels,
            "n_timesteps": 32,
            "seed": 0,
            "max_dilations_per_kernel": 32,
            "channel_decay_base": 2.0,
            "kernels": {
                "pattern": list(range(K)),
                "dilation": [1] * K,
                "padding": ["valid"] * K,
                "channel_sets": [sorted(s) for s in channel_sets],
            },
            "features": {"kernel": list(range(K)), "feature_id": list(range(K)), "quantile": [0.5] * K},
            "fitted": True,
        },
        np.zeros(K),
    )
    kept = np.arange(K) if kept is None else np.asarray(kept)
    bank = bank.restrict(kept)
    p = len(kept)
    clf = ridge.RidgeModel(
        coefficients=np.asarray(coefficients, dtype=float),
        intercept=0.0,
        alpha=1.0,
        feature_ids=kept.astype(np.int64),
        class_labels=(0, 1),
        mean=np.zeros(p),
        scale=np.ones(p),
        alphas=np.array([1.0]),
        loo_errors=np.array([0.0]),
    )
    return DetachModel(bank=bank, retained_ids=kept, classifier=clf, val_accuracy=0.8, c=0.1,
                       config=DetachConfig(), full_num_features=K)


def test_weights_rule():
    assert np.allclose(member_weights([0.9, 0.7]), [2 / 3, 1 / 3], atol=1e-15)
    assert member_weights([0.73]).tolist() == [1.0]
    assert np.allclose(member_weights([0.5, 0.4, 0.2]), [1 / 3] * 3)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
def test_weights_normalised(accs):
    w = member_weights(accs)
    assert np.all(w >= 0) and abs(w.sum() - 1.0) <= 1e-12


def test_proba_from_votes_examples():
    w = np.array([2 / 3, 1 / 3])
    p = proba_from_votes(np.array([[0, 1, 1], [1, 1, 0]]), w, (0, 1))
    # instance 1 is unanimous; instances 0 and 2 split (A, B) and (B, A)
    assert p[1].tolist() == [0.0, 1.0]
    assert p[0].tolist() == [2 / 3, 1 / 3]
    assert p[2].tolist() == [1 / 3, 2 / 3]


def test_threshold_rules():
    assert labels_from_proba([0.5], 0.5).tolist() == [1]
    assert labels_from_proba([0.0], 0.999).tolist() == [0]
    with pytest.raises(DataError):
        labels_from_proba([0.5], 1.0)
    p = np.random.default_rng(0).uniform(size=200)
    counts = [labels_from_proba(p, t).sum() for t in np.linspace(0.01, 0.99, 50)]
    assert np.all(np.diff(counts) <= 0)


def test_relevance_arithmetic():
    m = make_member([{0}, {1, 2}], [1.0, -1.0], n_channels=4)
    assert np.allclose(member_channel_relevance(m), [0.5, 0.25, 0.25, 0.0])


def test_relevance_one_hot():
    m = make_member([{2}], [0.7], n_channels=5)
    assert member_channel_relevance(m).tolist() == [0, 0, 1.0, 0, 0]


def test_relevance_three_kernels_two_retained():
    sets = [{0, 1}, {1, 2, 3}, {3, 4}]
    m = make_member(sets, [0.6, 0.3], n_channels=5, kept=[0, 2])
    rel = member_channel_relevance(m)
    assert rel[2] == 0.0
    assert np.all(rel[[0, 1, 3, 4]] > 0)
    assert np.allclose(rel, np.array([0.3, 0.3, 0, 0.15, 0.15]) / 0.9)


def test_median_relevance():
    rels = np.array([[0.1, 0.9], [0.5, 0.5], [0.9, 0.1]])
    assert np.median(rels, axis=0)[0] == 0.5
    assert np.allclose(median_relevance(rels), [0.5, 0.5])
    assert median_relevance(np.zeros((2, 4))).tolist() == [0.25] * 4


def test_median_robust_to_one_corrupted_member(rng):
    base = np.array([0.5, 0.3, 0.1, 0.1])
    rels = np.abs(base + 0.03 * rng.standard_normal((7, 4)))
    rels /= rels.sum(axis=1, keepdims=True)
    corrupted = rels.copy()
    corrupted[3] = 0.25
    assert np.argmax(median_relevance(corrupted)) == np.argmax(median_relevance(rels))


def test_relevance_permutation_equivariance():
    sets = [{0}, {1, 3}, {2, 3, 4}, {4}]
    m = make_member(sets, [0.4, -1.2, 0.3, 0.8], n_channels=5)
    perm = np.array([3, 0, 4, 1, 2])
    moved = DetachModel(**{**m.__dict__, "bank": m.bank.relabel_channels(perm)})
    rel, rel_moved = member_channel_relevance(m), member_channel_relevance(moved)
    assert np.allclose(rel_moved[perm], rel)


@given(
    n_channels=st.integers(1, 12),
    n_kernels=st.integers(1, 20),
    seed=st.integers(0, 2**31 - 1),
)
def test_relevance_sums_to_one(n_channels, n_kernels, seed):
    rng = np.random.default_rng(seed)
    sets = [set(rng.choice(n_channels, size=rng.integers(1, min(9, n_channels) + 1), replace=False).tolist())
            for _ in range(n_kernels)]
    m = make_member(sets, rng.standard_normal(n_kernels), n_channels)
    rel = member_channel_relevance(m)
    assert np.all(rel >= 0) and abs(rel.sum() - 1.0) <= 1e-9


@pytest.fixture(scope="module")
def tiny():
    train = generate(SynthConfig(theta=30, n_per_class=30, n_timesteps=64, seed=1))
    test = generate(SynthConfig(theta=30, n_per_class=20, n_timesteps=64, seed=2))
    cfg = EnsembleConfig(n_models=3, seed=4, detach=DetachConfig(num_features=336))
    return train, test, cfg, fit_ensemble(train, cfg)


def test_fit_ensemble_structure(tiny):
    train, test, cfg, ens = tiny
    assert len(ens.members) == 3
    assert [m.config.seed for m in ens.members] == [4, 5, 6]
    assert abs(ens.weights.sum() - 1) <= 1e-12
    p = predict_proba(ens, test)
    assert p.shape == (test.n_instances, 2)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
    assert np.array_equal(predict_label(ens, test), labels_from_proba(p[:, 1], 0.5))
    rel = ensemble_channel_relevance(ens)
    assert abs(rel.sum() - 1) <= 1e-9


def test_ensemble_determinism(tiny):
    train, test, cfg, ens = tiny
    again = fit_ensemble(train, cfg)
    assert np.array_equal(again.weights, ens.weights)
    assert predict_proba(again, test).tobytes() == predict_proba(ens, test).tobytes()


def test_single_member_relevance(tiny):
    train, _, cfg, _ = tiny
    one = fit_ensemble(train, EnsembleConfig(n_models=1, seed=9, detach=cfg.detach))
    assert one.weights.tolist() == [1.0]
    assert np.allclose(ensemble_channel_relevance(one), member_channel_relevance(one.members[0]))


def test_unanimous_votes(tiny):
    train, test, _, ens = tiny
    same = EnsembleModel(members=[ens.members[0]] * 3, weights=np.full(3, 1 / 3), n_channels=4)
    p = predict_proba(same, test)
    assert set(np.unique(p)) <= {0.0, 1.0}


def test_persistence(tmp_path, tiny):
    _, test, _, ens = tiny
    save_ensemble(ens, tmp_path / "e")
    back = load_ensemble(tmp_path / "e")
    assert predict_proba(back, test).tobytes() == predict_proba(ens, test).tobytes()
    assert back.channel_names == ens.channel_names
    assert np.allclose(ensemble_channel_relevance(back), ensemble_channel_relevance(ens))


def test_errors(tiny):
    train, test, cfg, ens = tiny
    with pytest.raises(DataError):
        fit_ensemble(train, EnsembleConfig(n_models=0))
    with pytest.raises(DataError):
        predict_proba(ens, test.with_values(test.values[:, :3]))
    with pytest.raises(DataError):
        EnsembleModel(members=ens.members, weights=np.array([0.5, 0.5, 0.5]), n_channels=4)
