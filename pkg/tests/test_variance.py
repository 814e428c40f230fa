import numpy as np
import pytest
from oracles import logistic_mle, ols, rubin_pool

from mnarstack.data import BINARY, CONTINUOUS, DataMatrix
from mnarstack.errors import NotPositiveDefiniteError
from mnarstack.estimators import LINEAR, LOGISTIC, TargetAnalysisSpec, per_imputation_fits, weighted_fit
from mnarstack.mice import MiceConfig, run_mice
from mnarstack.simulation import SimulationConfig, generate_dataset, impose_missingness
from mnarstack.stacking import ImputedStack, MnarWeightSpec, stack, weights_logistic
from mnarstack.variance import (
    VarianceRequest,
    bootstrap_between,
    combine_variance,
    estimate_variance,
    jackknife_between,
    louis_cov,
    louis_information,
    symmetrize,
)

LIN = TargetAnalysisSpec(LINEAR, 0, (1,))


def copies(values, M, kinds=None):
    data = DataMatrix.from_arrays(values, kinds=kinds)
    return ImputedStack(np.broadcast_to(data.values, (M,) + data.values.shape), np.full((M, data.n), 1 / M), data)


def sim_stack(seed, n=300, M=10, phi1=1.0, family="linear"):
    cfg = SimulationConfig(n=n, outcome_family=family, M=M)
    rng = np.random.default_rng(seed)
    data = impose_missingness(generate_dataset(cfg, rng), 1.0, rng)
    st_ = stack(run_mice(data, MiceConfig(M, n_iterations=5, seed=seed)))
    return weights_logistic(st_, MnarWeightSpec(0, phi1))


def test_request_validation():
    with pytest.raises(ValueError):
        VarianceRequest("sandwich")
    with pytest.raises(ValueError):
        VarianceRequest("bootstrap", n_bootstrap=1)


def test_louis_no_missingness_linear():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(80)
    y = 1 + 0.5 * x + rng.standard_normal(80)
    st_ = copies(np.column_stack([y, x]), 5)
    fit = weighted_fit(st_, LIN)
    complete, spread = louis_information(st_, LIN, fit.theta, fit.dispersion)
    assert np.all(spread == 0)
    _, cov, _ = ols(np.column_stack([np.ones(80), x]), y)
    np.testing.assert_allclose(louis_cov(st_, LIN, fit.theta, fit.dispersion), cov, rtol=1e-8)


def test_louis_no_missingness_logistic():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(200)
    y = (rng.random(200) < 1 / (1 + np.exp(-0.7 * x))).astype(float)
    st_ = copies(np.column_stack([y, x]), 4, kinds=[BINARY, CONTINUOUS])
    spec = TargetAnalysisSpec(LOGISTIC, 0, (1,))
    fit = weighted_fit(st_, spec)
    _, spread = louis_information(st_, spec, fit.theta)
    assert np.all(spread == 0)
    _, cov = logistic_mle(np.column_stack([np.ones(200), x]), y)
    np.testing.assert_allclose(louis_cov(st_, spec, fit.theta), cov, rtol=1e-8)


def test_louis_spread_is_psd_and_reduces_information():
    st_ = sim_stack(2)
    fit = weighted_fit(st_, LIN)
    complete, spread = louis_information(st_, LIN, fit.theta, fit.dispersion)
    assert np.linalg.eigvalsh(spread).min() >= -1e-10
    cov = louis_cov(st_, LIN, fit.theta, fit.dispersion)
    assert np.all(np.diag(cov) > np.diag(np.linalg.inv(complete)))


def test_louis_not_positive_definite():
    rng = np.random.default_rng(3)
    n, M = 30, 5
    x = rng.standard_normal(n)
    values = np.zeros((M, n, 2))
    values[:, :, 1] = x
    values[:, :, 0] = rng.normal(0, 50, (M, n))
    obs = np.ones((n, 2), dtype=bool)
    obs[:, 0] = False
    st_ = ImputedStack(values, np.full((M, n), 1 / M), DataMatrix.from_arrays(values[0], obs))
    with pytest.raises(NotPositiveDefiniteError) as info:
        louis_cov(st_, LIN, np.zeros(2), dispersion=0.01)
    assert info.value.min_eigenvalue < 0


def test_identical_imputations_zero_between():
    rng = np.random.default_rng(4)
    st_ = copies(rng.standard_normal((40, 2)), 6)
    vb = bootstrap_between(st_, LIN, VarianceRequest("bootstrap", 20, 1))
    vj = jackknife_between(st_, LIN)
    assert np.max(np.abs(vb)) < 1e-25 and np.max(np.abs(vj)) < 1e-25


def test_jackknife_two_imputations_hand_expansion():
    st_ = sim_stack(5, n=120, M=2, phi1=0.0)
    fits = per_imputation_fits(st_, LIN)
    # Leaving out imputation 1 fits imputation 2 alone and vice versa.
    d = (fits[1][0] - fits[0][0]) / 2
    expected = (1 / 2) * (np.outer(d, d) + np.outer(-d, -d))
    np.testing.assert_allclose(jackknife_between(st_, LIN), expected, rtol=1e-9)


def test_jackknife_deterministic_and_bootstrap_seeded():
    st_ = sim_stack(6)
    assert np.array_equal(jackknife_between(st_, LIN), jackknife_between(st_, LIN))
    req = VarianceRequest("bootstrap", 30, seed=9)
    assert np.array_equal(bootstrap_between(st_, LIN, req), bootstrap_between(st_, LIN, req))
    assert not np.array_equal(bootstrap_between(st_, LIN, req), bootstrap_between(st_, LIN, VarianceRequest("bootstrap", 30, 10)))


def test_combine_variance():
    assert combine_variance(1.0, 0.01, 50)[0, 0] == pytest.approx(1.51)
    v = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert np.array_equal(combine_variance(v, np.zeros((2, 2)), 10), v)
    with pytest.warns(UserWarning):
        assert combine_variance(1.0, 0.5, 1)[0, 0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        combine_variance(v, np.zeros((3, 3)), 5)


def test_combined_dominates_stack_covariance():
    st_ = sim_stack(7)
    fit = weighted_fit(st_, LIN)
    for method in ("bootstrap", "jackknife"):
        res = estimate_variance(st_, LIN, fit, VarianceRequest(method, 50, 1))
        assert np.array_equal(res.v_total, res.v_total.T)
        assert np.linalg.eigvalsh(res.v_total - res.v_stack).min() >= -1e-12
        assert res.se_method == method


def test_symmetrize_rejects_asymmetric():
    with pytest.raises(AssertionError):
        symmetrize(np.array([[1.0, 0.0], [1e-3, 1.0]]))


def test_bootstrap_and_jackknife_between_agree_within_factor_two():
    st_ = sim_stack(8, n=1000, M=50)
    vb = np.diag(bootstrap_between(st_, LIN, VarianceRequest("bootstrap", 200, 3)))
    vj = np.diag(jackknife_between(st_, LIN))
    assert np.all(vb / vj < 2) and np.all(vj / vb < 2)


def test_louis_se_close_to_rubin_at_mar():
    st_ = sim_stack(9, n=1000, M=50, phi1=0.0)
    fit = weighted_fit(st_, LIN)
    louis_se = np.sqrt(np.diag(louis_cov(st_, LIN, fit.theta, fit.dispersion)))
    fits = per_imputation_fits(st_, LIN)
    _, total = rubin_pool([f[0] for f in fits], [f[1] for f in fits])
    rubin_se = np.sqrt(np.diag(total))
    assert np.all(np.abs(louis_se / rubin_se - 1) < 0.10)
