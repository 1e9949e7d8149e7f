import numpy as np
import pytest

from cdte.crossfit import NuisanceConfig, crossfit
from cdte.diagnostics import Failure, FoldDiagnostics, RunReport, summarize
from cdte.learners import ForestParams
from cdte.sim import BenchmarkConfig, DgpSpec, sample_dgp
from cdte import sim
from cdte.errors import NuisanceError
from cdte.statistics import StatisticSpec


@pytest.fixture(scope="module")
def clean_run():
    data = sample_dgp(DgpSpec(), 1600, np.random.default_rng(3))
    return crossfit(data, 5, StatisticSpec.superquantile(0.75), NuisanceConfig(forest=ForestParams(n_trees=20)))


def test_clean_run_has_zero_counters(clean_run):
    rep = clean_run.report
    assert rep.clean
    assert rep.counters == {"propensity_clips": 0, "density_floors": 0, "exp_clamps": 0}
    assert len(rep.folds) == 5
    assert all(f["pinball_loss"] > 0 and f["propensity_logloss"] > 0 for f in rep.folds)


def test_failed_rep_is_recorded(monkeypatch):
    real = sim.run_one

    def flaky(config, variant, n, rep, *args):
        if rep == 1:
            raise NuisanceError("injected", fold=2)
        return real(config, variant, n, rep, *args)

    monkeypatch.setattr(sim, "run_one", flaky)
    cfg = BenchmarkConfig(StatisticSpec.superquantile(0.75), n_grid=(200,), reps=2, eval_points=20,
                          oracle_draws=10_000, final_stages=("ols",), forest=ForestParams(n_trees=10))
    with pytest.warns(RuntimeWarning, match="replication 1"):
        res = sim.run_benchmark(cfg)
    assert len(res.failures) == 1 and res.failures[0].rep == 1
    assert res.report.failures[0]["rep"] == 1
    assert {r[2] for r in res.records} == {0}


def test_report_round_trip():
    rep = summarize([FoldDiagnostics(1, 10, 5, 0.6, 0.2, 1, 0, 2)], [Failure(3, "x")])
    again = RunReport.from_json(rep.to_json())
    assert again.to_dict() == rep.to_dict()
    assert summarize(rep.folds, rep.failures).to_dict() == rep.to_dict()
    assert rep.counters["exp_clamps"] == 2 and not rep.clean


def test_negative_counter_rejected():
    with pytest.raises(ValueError):
        summarize([{"fold": 1, "propensity_clips": -1}])
