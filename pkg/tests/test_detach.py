import numpy as np
import pytest

from detach_ensemble import ridge
from detach_ensemble.detach import (
    DetachConfig,
    PruningCurve,
    PruningStep,
    fit_detach,
    load_detach,
    optimal_step,
    save_detach,
    select_optimal,
    sfd,
)
from detach_ensemble.exceptions import DataError
from detach_ensemble.synth import SynthConfig, generate
from detach_ensemble.transform import FeatureMatrix, build_kernel_bank, fit_biases, transform


def noise_problem(rng, n=80, p=10):
    X = rng.uniform(size=(n, p))
    labels = (X[:, 0] > 0.5).astype(int)
    return FeatureMatrix(X, np.arange(p) + 100), labels


def test_removal_schedule(rng):
    fm, labels = noise_problem(rng)
    curve = sfd(fm.rows(range(60)), labels[:60], fm.rows(range(60, 80)), labels[60:], step_proportion=0.5, min_features=1)
    assert [len(s.retained_ids) for s in curve.steps] == [10, 5, 3, 2, 1]
    assert np.all(np.diff(curve.fractions) < 0)
    for a, b in zip(curve.steps, curve.steps[1:]):
        assert set(b.retained_ids) < set(a.retained_ids)


def test_informative_feature_survives(rng):
    fm, labels = noise_problem(rng, n=200, p=30)
    curve = sfd(fm.rows(range(150)), labels[:150], fm.rows(range(150, 200)), labels[150:], 0.2, 1)
    assert curve.steps[-1].retained_ids.tolist() == [100]
    assert curve.steps[-1].val_accuracy == 1.0


def test_tie_break_drops_lower_id():
    # identical columns give identical |coefficients|
    x = np.linspace(0, 1, 20)
    X = np.column_stack([x, x, x])
    labels = (x > 0.5).astype(int)
    fm = FeatureMatrix(X, np.array([7, 3, 9]))
    curve = sfd(fm, labels, fm, labels, step_proportion=0.34, min_features=1)
    assert curve.steps[1].retained_ids.tolist() == [7, 9]
    assert curve.steps[2].retained_ids.tolist() == [9]


def test_sfd_errors(rng):
    fm, labels = noise_problem(rng)
    with pytest.raises(DataError):
        sfd(fm, labels, fm, labels, step_proportion=1.0)
    with pytest.raises(DataError):
        sfd(fm, labels, FeatureMatrix(fm.values[:, :5], fm.feature_ids[:5]), labels)
    with pytest.raises(DataError):
        sfd(fm, np.zeros(len(labels)), fm, labels)


def make_curve(accs, fracs):
    steps = [PruningStep(f, np.arange(max(1, int(100 * f))), a) for a, f in zip(accs, fracs)]
    return PruningCurve(steps=steps, full_accuracy=accs[0])


def test_selection_objective():
    fracs = [1.0, 0.8, 0.6, 0.4, 0.2]
    curve = make_curve([0.80, 0.81, 0.82, 0.90, 0.70], fracs)
    assert optimal_step(curve, 0.0) == 3
    obj = curve.objective(0.1)
    k = optimal_step(curve, 0.1)
    assert np.all(obj[k] >= obj - 1e-15)
    assert len(select_optimal(curve, 0.1)) == len(curve.steps[k].retained_ids)


def test_selection_tie_goes_to_smaller_model():
    # 0.9/0.9 + 0.5 * 0 == 0.85/0.9 + 0.5 * (1 - x)  ->  x = 1 - (0.05/0.9)/0.5
    x = 1 - (0.05 / 0.9) / 0.5
    curve = make_curve([0.9, 0.85], [1.0, x])
    obj = curve.objective(0.5)
    assert abs(obj[0] - obj[1]) < 1e-12
    assert optimal_step(curve, 0.5) == 1


@pytest.fixture(scope="module")
def small_train():
    return generate(SynthConfig(theta=45, n_per_class=40, n_timesteps=96, seed=5))


@pytest.fixture(scope="module")
def small_model(small_train):
    return fit_detach(small_train, DetachConfig(num_features=840, seed=2))


def test_fit_detach_sanity(small_model):
    assert 0 < small_model.retained_fraction < 1
    assert small_model.val_accuracy > 0.5
    assert np.array_equal(small_model.classifier.feature_ids, small_model.retained_ids)
    assert np.array_equal(small_model.bank.feature_ids, small_model.retained_ids)


def test_kernel_count_matches_surviving_kernels(small_train, small_model):
    full = build_kernel_bank(840, 4, 96, seed=2)
    used = np.unique(full.feature_kernel[np.isin(full.feature_ids, small_model.retained_ids)])
    assert small_model.bank.n_kernels == len(used)
    assert len(np.unique(small_model.bank.feature_kernel)) == small_model.bank.n_kernels


def test_restricted_bank_equals_full_bank_columns(small_train):
    from detach_ensemble.data import znormalize

    data, _ = znormalize(small_train)
    bank = fit_biases(build_kernel_bank(840, 4, 96, seed=2), data)
    keep = np.arange(0, bank.num_features, 13)
    full = transform(bank, data).select(keep).values
    restricted = transform(bank.restrict(keep), data).values
    assert np.max(np.abs(full - restricted)) <= 1e-12


def test_fit_detach_determinism(small_train, small_model):
    again = fit_detach(small_train, DetachConfig(num_features=840, seed=2))
    assert np.array_equal(again.retained_ids, small_model.retained_ids)
    assert np.array_equal(again.classifier.coefficients, small_model.classifier.coefficients)


def test_min_features_floor(small_train):
    model = fit_detach(small_train, DetachConfig(num_features=168, seed=1, min_features=160, c=10.0))
    assert len(model.retained_ids) >= 160
    assert len(model.curve_fractions) >= 2


def test_refit_uses_full_training_set(small_train, small_model):
    from detach_ensemble.data import znormalize

    data, _ = znormalize(small_train, small_model.norm_stats)
    feats = transform(small_model.bank, data)
    expected = ridge.fit_ridge(feats, data.labels)
    assert np.allclose(expected.coefficients, small_model.classifier.coefficients, rtol=1e-10, atol=1e-12)


def test_save_load_roundtrip(tmp_path, small_train, small_model):
    save_detach(small_model, tmp_path / "m")
    back = load_detach(tmp_path / "m")
    assert np.array_equal(back.predict(small_train), small_model.predict(small_train))
    assert back.decision_function(small_train).tobytes() == small_model.decision_function(small_train).tobytes()
    with pytest.raises(DataError):
        load_detach(tmp_path / "missing")


def test_config_validation(small_train):
    with pytest.raises(DataError):
        fit_detach(small_train, DetachConfig(num_features=10))
    with pytest.raises(DataError):
        fit_detach(small_train.with_labels(np.zeros(small_train.n_instances, dtype=int)), DetachConfig(num_features=84))
