import numpy as np
import pytest

from cdte.crossfit import NuisanceConfig, cdte_learn, crossfit, derive_seed, fit_nuisances, plugin_learn
from cdte.dataset import Dataset
from cdte.errors import ConfigurationError, NuisanceError
from cdte.inference import FeatureMap, true_projection_coef
from cdte.learners import ForestParams
from cdte.sim import DgpSpec, oracle_fit_fn, sample_dgp, true_cdte
from cdte.statistics import StatisticSpec

SMALL = ForestParams(n_trees=30)


@pytest.fixture(scope="module")
def data_2000():
    return sample_dgp(DgpSpec(), 2000, np.random.default_rng(5))


@pytest.fixture(scope="module")
def data_3200():
    return sample_dgp(DgpSpec(), 3200, np.random.default_rng(6))


def test_constant_propensity(data_2000):
    cfg = NuisanceConfig(propensity="constant", outcome="ols")
    nuis = fit_nuisances(data_2000, StatisticSpec.mean(), cfg)
    np.testing.assert_array_equal(nuis.e(data_2000.X[:50]), 0.5)


def test_quantile_without_density_learner(data_2000):
    with pytest.raises(ConfigurationError, match="density"):
        fit_nuisances(data_2000, StatisticSpec.quantile(0.75), NuisanceConfig(density=None))


def test_unknown_learner_name():
    with pytest.raises(ConfigurationError):
        NuisanceConfig(quantile="boosting")


def test_klrisk_needs_an_evar_learner():
    with pytest.raises(ConfigurationError):
        NuisanceConfig.variant("misspecified", StatisticSpec.klrisk(1.0))


def test_sqrf_nuisances_are_finite(data_2000):
    nuis = fit_nuisances(data_2000, StatisticSpec.superquantile(0.75), NuisanceConfig(forest=SMALL))
    X = np.random.default_rng(7).uniform(size=(100, 10))
    for a in (0, 1):
        kappa, h, alpha = nuis.arm(a, X)
        assert np.all(np.isfinite(kappa)) and np.all(np.isfinite(h)) and np.all(np.isfinite(alpha))
    assert np.all((nuis.e(X) >= 0.01) & (nuis.e(X) <= 0.99))


def test_mean_projection_recovers_oracle_slope(data_3200):
    spec = StatisticSpec.mean()
    fitted = cdte_learn(data_3200, 5, spec, NuisanceConfig(outcome="forest"), "ols", seed=1)
    proj = fitted.projection()
    oracle = true_projection_coef(spec, FeatureMap(), DgpSpec(), n=200_000, seed=3)
    half = proj.ci[2, 1] - proj.gamma_hat[2]
    assert proj.gamma_hat[2] > 0
    assert abs(proj.gamma_hat[2] - oracle[2]) <= 3 * half


def test_fold_count_changes_predictions(data_3200):
    spec = StatisticSpec.superquantile(0.75)
    cfg = NuisanceConfig(forest=SMALL)
    X = np.random.default_rng(8).uniform(size=(300, 10))
    truth = true_cdte(DgpSpec(), spec, X)
    mses = {}
    for K in (2, 5):
        cf = crossfit(data_3200, K, spec, cfg, seed=2, X_new=X)
        learner = cdte_learn(data_3200, K, spec, cfg, "ols", seed=2, crossfit_result=cf)
        mses[K] = (learner.predict(X), np.mean((learner.predict(X) - truth) ** 2),
                   np.mean((cf.plugin_new.mean(axis=0) - truth) ** 2))
    assert not np.array_equal(mses[2][0], mses[5][0])
    for K in (2, 5):
        assert mses[K][1] < mses[K][2]


def test_too_few_rows_for_folds():
    d = Dataset(np.zeros((9, 1)), [0, 1] * 4 + [0], np.arange(9.0))
    with pytest.raises(ConfigurationError, match="2K"):
        crossfit(d, 5, StatisticSpec.mean())


def test_oracle_mean_plugin_is_true_cate(data_2000):
    dgp = DgpSpec()
    spec = StatisticSpec.mean()
    cf = crossfit(data_2000, 5, spec, seed=0, fit_nuisances_fn=oracle_fit_fn(dgp))
    np.testing.assert_allclose(cf.plugin, true_cdte(dgp, spec, data_2000.X), rtol=1e-12)


def test_raw_and_smoothed_plugin_differ(data_2000):
    spec = StatisticSpec.superquantile(0.75)
    cfg = NuisanceConfig(forest=SMALL)
    cf = crossfit(data_2000, 5, spec, cfg, seed=4)
    raw = plugin_learn(data_2000, 5, spec, cfg, None, seed=4, crossfit_result=cf)
    rf = plugin_learn(data_2000, 5, spec, cfg, "forest", seed=4, crossfit_result=cf)
    X = np.random.default_rng(9).uniform(size=(50, 10))
    assert not np.allclose(raw.predict(X), rf.predict(X))


def test_pseudo_outcomes_use_out_of_fold_nuisances(data_2000):
    cf = crossfit(data_2000, 4, StatisticSpec.superquantile(0.75), NuisanceConfig(forest=SMALL), seed=0)
    np.testing.assert_array_equal(cf.pseudo.fold_of, np.arange(2000) % 4 + 1)
    assert [n.fold for n in cf.nuisances] == [1, 2, 3, 4]
    assert np.all(np.isfinite(cf.pseudo.values))


def test_threads_do_not_change_results(data_2000):
    spec = StatisticSpec.superquantile(0.75)
    cfg = NuisanceConfig(forest=SMALL)
    a = crossfit(data_2000, 3, spec, cfg, seed=11)
    b = crossfit(data_2000, 3, spec, cfg, seed=11, threads=3)
    assert np.array_equal(a.pseudo.values, b.pseudo.values)


def test_seed_derivation_is_stable():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert derive_seed(0, 1) != derive_seed(0, 2)


def test_failed_fold_is_named(data_2000):
    def broken(train, spec, config, seed):
        raise NuisanceError("boom")
    with pytest.raises(NuisanceError) as info:
        crossfit(data_2000, 5, StatisticSpec.mean(), fit_nuisances_fn=broken)
    assert info.value.fold == 1


def test_csqte_benchmark_paired_mse(csqte_bench):
    cdte = csqte_bench.mse("flexible/cdte_ols", 3200)
    plug = csqte_bench.mse("flexible/plugin", 3200)
    assert np.mean(plug > cdte) >= 0.8
