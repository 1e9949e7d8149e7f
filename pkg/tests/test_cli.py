import csv
import json
import math

import numpy as np
import pytest

from cdte import cli
from cdte.dataset import atomic_write_rows
from cdte.sim import DgpSpec, sample_dgp

SMALL_BENCH = """
[run]
seed = 1
[statistic]
kind = "superquantile"
tau = 0.75
[benchmark]
n_grid = [200]
reps = 1
eval_points = 40
oracle_draws = 10000
final_stages = ["ols"]
[forest]
n_trees = 20
[[checks]]
kind = "mse_below"
estimator = "flexible/cdte_ols"
baseline = "flexible/plugin_ols"
n = 200
"""


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_bundled_configs_parse():
    for name in ("csqte_desk.toml", "cqte_desk.toml", "cklrte_desk.toml", "figure1.toml"):
        cfg = cli.load_config(name)
        assert cfg.checks
    bench = cli.load_config("csqte_desk.toml").benchmark
    assert bench.n_grid == (200, 800, 3200) and bench.reps == 20
    assert cli.load_config("cklrte_desk.toml").benchmark.spec.delta == pytest.approx(math.log(4))


def test_simulate_writes_results_csv(tmp_path, capsys):
    code = cli.main(["simulate", "--config", _write(tmp_path, SMALL_BENCH), "--out", str(tmp_path / "o")])
    lines = (tmp_path / "o" / "results.csv").read_text().splitlines()
    assert lines[0] == "estimator,n,rep,mse"
    assert len(lines) == 1 + 3
    assert json.loads((tmp_path / "o" / "summary.json").read_text())
    verdict = capsys.readouterr().out.strip().splitlines()[-1]
    assert verdict.endswith(": PASS") or verdict.endswith(": FAIL")
    assert code == (0 if verdict.endswith("PASS") else 1)


def test_figure1_config_ordering(tmp_path, capsys):
    text = """
[risk_profile]
tau_min = 0.01
tau_max = 0.99
levels = 5
n = 200000
[[checks]]
kind = "ordering"
"""
    code = cli.main(["simulate", "--config", _write(tmp_path, text), "--out", str(tmp_path)])
    assert code == 0
    assert "PASS" in capsys.readouterr().out
    with open(tmp_path / "risk_profile.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    for r in rows:
        assert float(r["quantile"]) <= float(r["superquantile"]) <= float(r["evar"])


def test_tau_out_of_range_names_field(tmp_path, capsys):
    text = SMALL_BENCH.replace("tau = 0.75", "tau = 1.5")
    assert cli.main(["simulate", "--config", _write(tmp_path, text)]) == 2
    assert "tau" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(cli.ConfigError, match="bogus"):
        cli.parse_config({"benchmark": {"bogus": 1}})
    with pytest.raises(cli.ConfigError, match="extra"):
        cli.parse_config({"extra": {}})


def test_klrisk_requires_truncation():
    with pytest.raises(cli.ConfigError, match="truncate"):
        cli.parse_config({"statistic": {"kind": "klrisk"}, "dgp": {"truncate": False}})


def test_klrisk_tau_maps_to_delta():
    spec = cli.parse_statistic({"kind": "klrisk", "tau": 0.75})
    assert spec.delta == pytest.approx(math.log(4))


@pytest.fixture(scope="module")
def synthetic_csv(tmp_path_factory):
    d = sample_dgp(DgpSpec(), 400, np.random.default_rng(5))
    path = tmp_path_factory.mktemp("data") / "d.csv"
    header = ["y", "a"] + [f"x{j}" for j in range(10)]
    rows = [[format(d.y[i], ".17g"), str(int(d.a[i]))] + [format(v, ".17g") for v in d.X[i]]
            for i in range(d.n)]
    atomic_write_rows(path, header, rows)
    return path


def _fit_args(path, out, *extra):
    return ["fit", "--data", str(path), "--outcome", "y", "--treatment", "a",
            "--features", ",".join(f"x{j}" for j in range(10)), "--statistic", "superquantile",
            "--tau", "0.75", "--out", str(out), *extra]


def test_fit_projection_json(synthetic_csv, tmp_path):
    assert cli.main(_fit_args(synthetic_csv, tmp_path, "--project", "x1", "--seed", "3")) == 0
    proj = json.loads((tmp_path / "projection.json").read_text())
    k = len(proj["coef"])
    assert k == 2
    assert len(proj["ci_lower"]) == len(proj["ci_upper"]) == len(proj["stderr"]) == k
    with open(tmp_path / "predictions.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["row", "cdte"] and len(rows) == 401


def test_fit_is_deterministic(synthetic_csv, tmp_path):
    for sub in ("a", "b"):
        assert cli.main(_fit_args(synthetic_csv, tmp_path / sub, "--seed", "7",
                                  "--final-stage", "ols")) == 0
    assert (tmp_path / "a" / "predictions.csv").read_bytes() == (tmp_path / "b" / "predictions.csv").read_bytes()


def test_fit_missing_treatment_is_usage_error(synthetic_csv, tmp_path):
    args = _fit_args(synthetic_csv, tmp_path)
    i = args.index("--treatment")
    del args[i:i + 2]
    with pytest.raises(SystemExit) as exc:
        cli.main(args)
    assert exc.value.code == 2


def test_fit_missing_column_is_error(synthetic_csv, tmp_path, capsys):
    args = _fit_args(synthetic_csv, tmp_path)
    args[args.index("--treatment") + 1] = "treat"
    assert cli.main(args) == 2
    assert "treat" in capsys.readouterr().err


def test_fit_help_documents_lower_tail(capsys):
    with pytest.raises(SystemExit):
        cli.main(["fit", "--help"])
    out = capsys.readouterr().out
    assert "negate the outcome" in out


def test_risk_profile_command(tmp_path):
    out = tmp_path / "rp.csv"
    assert cli.main(["risk-profile", "--taus", "0.5,0.9", "--n", "100000", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3
    assert cli.main(["risk-profile", "--taus", "0.5,1.2", "--out", str(out)]) == 2
