import math
import os
import pickle
import sys
import warnings
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cdte.sim import BenchmarkConfig, DgpSpec, run_benchmark  # noqa: E402
from cdte.statistics import StatisticSpec  # noqa: E402

# Desk-scale benchmark designs shared by the module and acceptance tests.
BENCHMARKS = {
    "csqte": lambda: BenchmarkConfig(StatisticSpec.superquantile(0.75), n_grid=(3200,), reps=20,
                                     variants=("flexible",)),
    "cqte": lambda: BenchmarkConfig(StatisticSpec.quantile(0.75), n_grid=(3200,), reps=20,
                                    variants=("flexible", "misspecified", "slow")),
    "cklrte": lambda: BenchmarkConfig(StatisticSpec.klrisk(-math.log(0.25)), n_grid=(3200,), reps=20,
                                      variants=("flexible", "slow"), dgp=DgpSpec(truncate=True)),
}

# Set CDTE_BENCH_CACHE to a directory to reuse results across sessions while iterating.
_CACHE = os.environ.get("CDTE_BENCH_CACHE")


def _benchmark(name):
    cfg = BENCHMARKS[name]()
    path = Path(_CACHE) / f"{name}.pkl" if _CACHE else None
    if path is not None and path.exists():
        res = pickle.loads(path.read_bytes())
        if res.config == cfg:
            return res
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_benchmark(cfg)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(pickle.dumps(res))
    return res


@pytest.fixture(scope="session")
def csqte_bench():
    return _benchmark("csqte")


@pytest.fixture(scope="session")
def cqte_bench():
    return _benchmark("cqte")


@pytest.fixture(scope="session")
def cklrte_bench():
    return _benchmark("cklrte")


VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
