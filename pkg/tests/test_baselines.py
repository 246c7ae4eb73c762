import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vshift import vmatrix as vm
from vshift import vsvm
from vshift.baselines import KdeModel, fit_weighted, importance_weights, kde_density
from vshift.dataset import LabeledDataset, TargetSample
from vshift.errors import DimensionError, SchemaError


def test_single_gaussian_values():
    model = KdeModel([[0.0]], 1.0)
    assert kde_density(model, [0.0])[0] == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-12)
    assert kde_density(model, [1.0])[0] == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi),
                                                         rel=1e-12)
    assert kde_density(model, [0.0])[0] == pytest.approx(0.39894, abs=5e-6)


def test_matches_direct_sum(rng):
    S, X = rng.standard_normal((15, 3)), rng.standard_normal((4, 3))
    h = 0.8
    direct = [np.mean([np.exp(-np.sum((x - s) ** 2) / (2 * h * h)) for s in S])
              / ((2 * np.pi) ** 1.5 * h ** 3) for x in X]
    np.testing.assert_allclose(KdeModel(S, h).density(X), direct, rtol=1e-12)


def test_integrates_to_one(rng):
    model = KdeModel(rng.normal(0, 1, (20, 1)), 0.7)
    grid = np.linspace(-15, 15, 20001)
    assert np.trapezoid(model.density(grid[:, None]), grid) == pytest.approx(1.0, abs=1e-3)


def test_positivity_far_away():
    model = KdeModel([[0.0]], 0.1)
    assert model.log_density([[50.0]])[0] > -np.inf
    assert np.isfinite(model.log_density([[50.0]])[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_permutation_symmetry(seed):
    r = np.random.default_rng(seed)
    S, X = r.random((12, 2)), r.random((5, 2))
    a = KdeModel(S, 0.5).density(X)
    b = KdeModel(S[r.permutation(12)], 0.5).density(X)
    np.testing.assert_allclose(a, b, rtol=1e-12)
    assert np.all(a > 0)


def test_kde_validation():
    with pytest.raises(ValueError):
        KdeModel([[0.0]], 0.0)
    with pytest.raises(SchemaError):
        KdeModel(np.zeros((0, 2)), 1.0)
    with pytest.raises(DimensionError):
        KdeModel([[0.0, 1.0]], 1.0).density([[0.0]])


def test_identical_samples_give_unit_weights(rng):
    X = rng.random((30, 2))
    w = importance_weights(X, TargetSample(X), 2.0, "ratio")
    np.testing.assert_allclose(w.values, 1.0, rtol=1e-12)


def test_tau_zero_gives_unit_weights(rng):
    w = importance_weights(rng.random((10, 2)), TargetSample(rng.random((10, 2)) + 1),
                           1.0, "exponentiated", tau=0.0)
    np.testing.assert_array_equal(w.values, 1.0)


def test_two_point_ratio():
    w = importance_weights([[0.0]], TargetSample([[1.0]]), 1.0, "ratio")
    assert w.values[0] == pytest.approx(math.exp(-0.5), rel=1e-12)
    assert w.values[0] == pytest.approx(0.60653, abs=5e-6)


def test_exponentiated_tau_one_equals_ratio(rng):
    X, T = rng.random((20, 2)), TargetSample(rng.random((30, 2)) * 1.5)
    a = importance_weights(X, T, 0.5, "ratio").values
    b = importance_weights(X, T, 0.5, "exponentiated", tau=1.0).values
    np.testing.assert_allclose(a, b, rtol=1e-13)


def test_exponentiated_is_power_of_ratio(rng):
    X, T = rng.random((20, 2)), TargetSample(rng.random((30, 2)) + 0.2)
    a = importance_weights(X, T, 0.5, "ratio").values
    b = importance_weights(X, T, 0.5, "exponentiated", tau=0.5).values
    np.testing.assert_allclose(b, np.sqrt(a), rtol=1e-12)


def test_floor_keeps_weights_finite(caplog):
    # tiny bandwidth underflows every density except the target mass at 40
    w = importance_weights([[0.0], [40.0]], TargetSample([[40.0]]), 0.01, "ratio")
    assert np.all(np.isfinite(w.values)) and np.all(w.values >= 0)


def test_matched_distributions_median_band():
    medians = []
    for seed in range(20):
        r = np.random.default_rng(seed)
        X, T = r.standard_normal((200, 2)), r.standard_normal((200, 2))
        medians.append(np.median(importance_weights(X, TargetSample(T), 0.5, "ratio").values))
    assert all(0.5 <= m <= 2 for m in medians)


def test_weight_validation(rng):
    X = rng.random((5, 2))
    with pytest.raises(SchemaError):
        importance_weights(X, TargetSample(np.zeros((0, 2))))
    with pytest.raises(DimensionError):
        importance_weights(X, TargetSample(rng.random((5, 3))))
    with pytest.raises(ValueError):
        importance_weights(X, TargetSample(X), scheme="exponentiated", tau=1.5)
    with pytest.raises(ValueError):
        importance_weights(X, TargetSample(X), scheme="kliep")


def _problem(seed, N=15):
    r = np.random.default_rng(seed)
    X = r.random((N, 2))
    return LabeledDataset(X, (X[:, 0] > 0.5).astype(int))


def test_unit_weights_equal_unweighted():
    train = _problem(1)
    a = fit_weighted(train, np.ones(15))
    b = vsvm.fit(train, vm.identity_v(15))
    assert a.coefficients.tobytes() == b.coefficients.tobytes()
    assert a.intercept == b.intercept


def test_zero_weight_point_is_ignored():
    train = _problem(2)
    w = np.ones(15)
    w[-1] = 0.0
    kernel = vsvm.KernelConfig("gaussian", 0.5)
    model = fit_weighted(train, w, kernel, 0.1)
    K = vsvm.kernel_matrix(kernel, train.features)
    r = K @ model.coefficients + model.intercept - train.labels
    assert r @ np.diag(w) @ r == pytest.approx(r[:-1] @ r[:-1], rel=1e-12)
    reduced = fit_weighted(train.subset(np.arange(14)), np.ones(14), kernel, 0.1)
    assert abs(model.coefficients[-1]) < 1e-12
    Xq = np.random.default_rng(0).random((10, 2))
    np.testing.assert_allclose(model.decision_function(Xq), reduced.decision_function(Xq), atol=1e-10)


def test_weight_count_checked():
    with pytest.raises(DimensionError):
        fit_weighted(_problem(3), np.ones(4))


def test_weights_csv(tmp_path, rng):
    w = importance_weights(rng.random((6, 1)), TargetSample(rng.random((8, 1))), 1.0)
    w.to_csv(tmp_path / "w.csv")
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "w.csv"), w.values)
