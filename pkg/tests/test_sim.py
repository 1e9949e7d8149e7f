import math

import numpy as np
import pytest
from scipy.stats import norm

from cdte.learners import ForestParams
from cdte.sim import (
    BenchmarkConfig,
    DgpSpec,
    effect_multiplier,
    log_scale,
    propensity,
    risk_profile,
    run_benchmark,
    sample_dgp,
    true_cdte,
)
from cdte.statistics import StatisticSpec

SQ = StatisticSpec.superquantile(0.75)


@pytest.fixture(scope="module")
def big_sample():
    return sample_dgp(DgpSpec(), 1_000_000, np.random.default_rng(0))


def test_propensity_near_half_at_center(big_sample):
    d = big_sample
    near = np.abs(d.X[:, 0] - 0.5) < 0.0025
    assert abs(d.a[near].mean() - 0.5) < 0.01
    assert propensity(DgpSpec(), np.full((1, 10), 0.5))[0] == pytest.approx(0.5)


def test_true_propensity_range():
    p = propensity(DgpSpec(), np.array([[0.0] * 10, [1.0] * 10]))
    assert p[0] > 0.04 and p[1] < 0.96


def test_log_outcome_centered_on_design(big_sample):
    d = big_sample
    resid = np.log(d.y) - log_scale(d.X, d.a)
    for a in (0, 1):
        bin_ = (d.a == a) & (np.abs(d.X[:, 0] - 0.6) < 0.05) & (np.abs(d.X[:, 1] - 0.4) < 0.05)
        assert abs(resid[bin_].mean()) < 0.01


def test_truncated_outcomes_respect_cap():
    dgp = DgpSpec(truncate=True)
    d = sample_dgp(dgp, 100_000, np.random.default_rng(1))
    cap = np.exp(log_scale(d.X, d.a) + dgp.sigma * norm.ppf(0.99))
    assert np.all(d.y <= cap * (1 + 1e-12))
    assert np.mean(d.y >= cap * (1 - 1e-12)) == pytest.approx(0.01, abs=0.002)


def test_csqte_multiplier():
    c = effect_multiplier(DgpSpec(), SQ)
    s = 0.2
    assert c == pytest.approx(math.exp(s * s / 2) * norm.cdf(s - norm.ppf(0.75)) / 0.25, rel=1e-12)
    assert round(c, 2) == 1.29


def test_cqte_multiplier():
    c = effect_multiplier(DgpSpec(), StatisticSpec.quantile(0.75))
    assert c == pytest.approx(math.exp(0.2 * norm.ppf(0.75)), rel=1e-12)
    assert round(c, 2) == 1.14


def test_cklrte_multiplier():
    c = effect_multiplier(DgpSpec(truncate=True), StatisticSpec.klrisk(-math.log(0.25)))
    assert abs(c - 1.42) <= 0.02


def test_zero_x1_means_no_effect():
    x = np.array([0.7, 0.0] + [0.3] * 8)
    for spec in (SQ, StatisticSpec.quantile(0.6), StatisticSpec.mean()):
        assert true_cdte(DgpSpec(), spec, x) == 0.0
    assert true_cdte(DgpSpec(truncate=True), StatisticSpec.klrisk(1.0), x) == 0.0


def test_csqte_formula_at_unit_point():
    x = np.array([1.0, 1.0] + [0.0] * 8)
    assert abs(true_cdte(DgpSpec(), SQ, x) - 1.29 * (math.e ** 2 - math.e)) <= 0.01


def test_mean_effect_closed_form():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(20, 10))
    want = np.exp(X[:, 0]) * math.exp(0.02) * (np.exp(X[:, 1]) - 1)
    np.testing.assert_allclose(true_cdte(DgpSpec(), StatisticSpec.mean(), X), want, rtol=1e-12)


def test_benchmark_smoke():
    cfg = BenchmarkConfig(SQ, n_grid=(200,), reps=1, eval_points=50, oracle_draws=10_000,
                          forest=ForestParams(n_trees=20))
    res = run_benchmark(cfg)
    assert not res.failures
    assert len(res.records) == 5
    assert all(np.isfinite(r[3]) for r in res.records)
    assert res.csv_rows()[0][0] == "flexible/plugin"


def test_csqte_benchmark_learner_beats_plugin(csqte_bench):
    assert csqte_bench.mean_mse("flexible/cdte_ols", 3200) < csqte_bench.mean_mse("flexible/plugin", 3200)
    assert csqte_bench.coverage_rate("flexible/plugin_ols", 3200) < csqte_bench.coverage_rate(
        "flexible/cdte_ols", 3200)


@pytest.fixture(scope="module")
def profile():
    taus = np.r_[np.linspace(0.01, 0.99, 50), 0.5, 0.9999]
    return np.array(risk_profile(taus=taus, n=1_000_000, seed=0))


def test_risk_profile_ordering(profile):
    assert np.all(profile[:, 1] <= profile[:, 2]) and np.all(profile[:, 2] <= profile[:, 3])


def test_risk_profile_reaches_cap(profile):
    top = profile[-1]
    np.testing.assert_allclose(top[1:], 6.0, atol=1e-9)


def test_risk_profile_median(profile):
    assert abs(profile[50, 1] - 1.0) < 0.01
