"""Command-line entry points: ``simulate``, ``fit`` and ``risk-profile``.

Exit status is 0 on success, 1 when an embedded check fails or a
replication failed, and 2 for usage, configuration or data errors.
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .crossfit import VARIANTS, NuisanceConfig, cdte_learn
from .dataset import atomic_write_rows, load_csv
from .errors import CDTEError, ConfigurationError
from .inference import FeatureMap
from .learners.forest import ForestParams
from .sim import BenchmarkConfig, DgpSpec, _atomic_write_text, risk_profile, run_benchmark, write_risk_profile
from .statistics import StatisticSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ConfigurationError):
    """Invalid configuration; the message names the offending field."""


# --------------------------------------------------------------------------
# config schema
# --------------------------------------------------------------------------

def _num(v, where, lo=None, hi=None, integer=False, lo_open=False, hi_open=False):
    ok_type = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok_type:
        raise ConfigError(f"{where}: expected {'an integer' if integer else 'a number'}, got {v!r}")
    if isinstance(v, float) and not math.isfinite(v):
        raise ConfigError(f"{where}: must be finite, got {v!r}")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{where}: must be {'>' if lo_open else '>='} {lo}, got {v!r}")
    if hi is not None and (v >= hi if hi_open else v > hi):
        raise ConfigError(f"{where}: must be {'<' if hi_open else '<='} {hi}, got {v!r}")
    return v


def _choice(v, where, allowed):
    if v not in allowed:
        raise ConfigError(f"{where}: must be one of {list(allowed)}, got {v!r}")
    return v


def _list(v, where, item):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a non-empty list, got {v!r}")
    return [item(x, f"{where}[{i}]") for i, x in enumerate(v)]


def _keys(section: dict, name: str, allowed):
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}]: expected a table")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"[{name}]: unknown key(s) {unknown}; allowed: {sorted(allowed)}")


SECTIONS = ("run", "statistic", "benchmark", "dgp", "forest", "nuisance", "risk_profile", "checks")


def parse_statistic(sec: dict, where: str = "[statistic]") -> StatisticSpec:
    _keys(sec, where.strip("[]"), ("kind", "tau", "delta"))
    kind = _choice(sec.get("kind", "superquantile"), f"{where} kind",
                   ("mean", "quantile", "superquantile", "klrisk"))
    tau = sec.get("tau")
    delta = sec.get("delta")
    if kind in ("quantile", "superquantile"):
        tau = _num(0.75 if tau is None else tau, f"{where} tau", 0.0, 1.0, lo_open=True, hi_open=True)
        if delta is not None:
            raise ConfigError(f"{where} delta: not a parameter of {kind}")
        return StatisticSpec(kind, tau=float(tau))
    if kind == "klrisk":
        if delta is None and tau is not None:
            # level tau maps to radius delta = -log(1 - tau)
            tau = _num(tau, f"{where} tau", 0.0, 1.0, lo_open=True, hi_open=True)
            delta = -math.log1p(-tau)
        delta = _num(-math.log(0.25) if delta is None else delta, f"{where} delta", 0.0)
        return StatisticSpec(kind, delta=float(delta))
    if tau is not None or delta is not None:
        raise ConfigError(f"{where}: the mean takes neither tau nor delta")
    return StatisticSpec(kind)


@dataclass
class Check:
    kind: str
    estimator: str | None = None
    baseline: str | None = None
    n: int | None = None
    value: float | None = None
    tol: float | None = None

    def label(self) -> str:
        k = self.kind
        if k == "mse_below":
            return f"{self.estimator} mse < {self.baseline} mse (n={self.n})"
        if k == "coverage_at_least":
            return f"{self.estimator} coverage >= {self.value} (n={self.n})"
        if k == "coverage_at_most":
            return f"{self.estimator} coverage <= {self.value} (n={self.n})"
        if k == "ordering":
            return "quantile <= superquantile <= evar at every level"
        if k == "monotone":
            return "quantile, superquantile, evar nondecreasing in level"
        if k == "median":
            return f"quantile at tau=0.5 within {self.tol} of {self.value}"
        if k == "limit":
            return f"all statistics equal {self.value} (within {self.tol}) at the top level"
        return k


CHECK_KINDS = {
    "mse_below": ("estimator", "baseline", "n"),
    "coverage_at_least": ("estimator", "n", "value"),
    "coverage_at_most": ("estimator", "n", "value"),
    "ordering": (),
    "monotone": (),
    "median": ("value", "tol"),
    "limit": ("value", "tol"),
}


def parse_checks(raw) -> list[Check]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ConfigError("[[checks]]: expected an array of tables")
    out = []
    for i, c in enumerate(raw):
        where = f"checks[{i}]"
        if not isinstance(c, dict):
            raise ConfigError(f"{where}: expected a table")
        kind = _choice(c.get("kind"), f"{where} kind", tuple(CHECK_KINDS))
        need = CHECK_KINDS[kind]
        _keys(c, where, ("kind", *need))
        for k in need:
            if k not in c:
                raise ConfigError(f"{where} {k}: required for kind {kind!r}")
        if "n" in c:
            _num(c["n"], f"{where} n", 1, integer=True)
        for k in ("value", "tol"):
            if k in c:
                _num(c[k], f"{where} {k}")
        out.append(Check(kind, c.get("estimator"), c.get("baseline"), c.get("n"), c.get("value"), c.get("tol")))
    return out


@dataclass
class SimulateConfig:
    mode: str  # "benchmark" or "risk_profile"
    seed: int = 0
    out_dir: str = "results"
    threads: int = 1
    benchmark: BenchmarkConfig | None = None
    profile: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)


def parse_config(doc: dict) -> SimulateConfig:
    """Validate a parsed TOML document; every error names its field."""
    _keys(doc, "top level", SECTIONS)
    run = doc.get("run", {})
    _keys(run, "run", ("seed", "out_dir", "threads"))
    seed = _num(run.get("seed", 0), "[run] seed", 0, integer=True)
    threads = _num(run.get("threads", 1), "[run] threads", 1, integer=True)
    out_dir = run.get("out_dir", "results")
    if not isinstance(out_dir, str):
        raise ConfigError("[run] out_dir: expected a string")
    checks = parse_checks(doc.get("checks"))

    if "risk_profile" in doc:
        if "benchmark" in doc:
            raise ConfigError("a config holds either [benchmark] or [risk_profile], not both")
        rp = doc["risk_profile"]
        _keys(rp, "risk_profile", ("mu", "sigma", "cap", "tau_min", "tau_max", "levels", "taus", "n"))
        prof = {
            "mu": float(_num(rp.get("mu", 0.0), "[risk_profile] mu")),
            "sigma": float(_num(rp.get("sigma", 0.5), "[risk_profile] sigma", 0.0, lo_open=True)),
            "cap": float(_num(rp.get("cap", 6.0), "[risk_profile] cap", 0.0, lo_open=True)),
            "n": _num(rp.get("n", 1_000_000), "[risk_profile] n", 1, integer=True),
        }
        if "taus" in rp:
            taus = _list(rp["taus"], "[risk_profile] taus",
                         lambda v, w: float(_num(v, w, 0.0, 1.0, lo_open=True, hi_open=True)))
        else:
            lo = _num(rp.get("tau_min", 0.01), "[risk_profile] tau_min", 0.0, 1.0, lo_open=True, hi_open=True)
            hi = _num(rp.get("tau_max", 0.99), "[risk_profile] tau_max", 0.0, 1.0, lo_open=True, hi_open=True)
            k = _num(rp.get("levels", 50), "[risk_profile] levels", 1, integer=True)
            if hi < lo:
                raise ConfigError("[risk_profile] tau_max: must be >= tau_min")
            taus = np.linspace(lo, hi, k).tolist()
        prof["taus"] = taus
        return SimulateConfig("risk_profile", seed, out_dir, threads, None, prof, checks)

    spec = parse_statistic(doc.get("statistic", {}))
    b = doc.get("benchmark", {})
    _keys(b, "benchmark", ("n_grid", "reps", "eval_points", "variants", "final_stages", "K", "eval_seed",
                           "oracle_draws", "level"))
    n_grid = tuple(_list(b.get("n_grid", [200, 800, 3200]), "[benchmark] n_grid",
                         lambda v, w: _num(v, w, 2, integer=True)))
    reps = _num(b.get("reps", 20), "[benchmark] reps", 1, integer=True)
    eval_points = _num(b.get("eval_points", 500), "[benchmark] eval_points", 1, integer=True)
    variants = tuple(_list(b.get("variants", ["flexible"]), "[benchmark] variants",
                           lambda v, w: _choice(v, w, tuple(VARIANTS))))
    stages = tuple(_list(b.get("final_stages", ["ols", "forest"]), "[benchmark] final_stages",
                         lambda v, w: _choice(v, w, ("ols", "forest"))))
    K = _num(b.get("K", 5), "[benchmark] K", 2, integer=True)
    if min(n_grid) < 2 * K:
        raise ConfigError(f"[benchmark] n_grid: every n must be >= 2K = {2 * K}")
    eval_seed = _num(b.get("eval_seed", 20240601), "[benchmark] eval_seed", 0, integer=True)
    oracle_draws = _num(b.get("oracle_draws", 1_000_000), "[benchmark] oracle_draws", 1000, integer=True)
    level = _num(b.get("level", 0.95), "[benchmark] level", 0.0, 1.0, lo_open=True, hi_open=True)

    dg = doc.get("dgp", {})
    _keys(dg, "dgp", ("d", "sigma", "truncate"))
    truncate = dg.get("truncate", spec.kind.value == "klrisk")
    if not isinstance(truncate, bool):
        raise ConfigError("[dgp] truncate: expected true or false")
    if spec.kind.value == "klrisk" and not truncate:
        raise ConfigError("[dgp] truncate: the KL risk needs the capped outcome law (truncate = true)")
    dgp = DgpSpec(d=_num(dg.get("d", 10), "[dgp] d", 2, integer=True),
                  sigma=float(_num(dg.get("sigma", 0.2), "[dgp] sigma", 0.0, lo_open=True)), truncate=truncate)

    fo = doc.get("forest", {})
    _keys(fo, "forest", ("n_trees", "min_leaf", "mtry", "bootstrap"))
    forest = ForestParams(
        n_trees=_num(fo.get("n_trees", 100), "[forest] n_trees", 1, integer=True),
        min_leaf=None if "min_leaf" not in fo else _num(fo["min_leaf"], "[forest] min_leaf", 1, integer=True),
        mtry=None if "mtry" not in fo else _num(fo["mtry"], "[forest] mtry", 1, integer=True),
        bootstrap=bool(fo.get("bootstrap", True)),
    )
    nu = doc.get("nuisance", {})
    _keys(nu, "nuisance", ("density_bandwidth",))
    bw = float(_num(nu.get("density_bandwidth", 1.0), "[nuisance] density_bandwidth", 0.0, lo_open=True))
    try:
        bench = BenchmarkConfig(spec, n_grid, reps, eval_points, variants, stages, K, seed, eval_seed, dgp,
                                2, level, oracle_draws, forest, bw, threads)
    except CDTEError as exc:
        raise ConfigError(f"[benchmark]: {exc}") from exc
    return SimulateConfig("benchmark", seed, out_dir, threads, bench, {}, checks)


def resolve_config_path(name: str) -> Path:
    """A path on disk, else the name of a bundled config."""
    p = Path(name)
    if p.exists():
        return p
    bundled = resources.files("cdte").joinpath("configs").joinpath(p.name)
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config file not found: {name}")


def load_config(path) -> SimulateConfig:
    p = resolve_config_path(str(path))
    try:
        doc = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: TOML syntax error: {exc}") from exc
    return parse_config(doc)


# --------------------------------------------------------------------------
# checks
# --------------------------------------------------------------------------

def evaluate_benchmark_check(c: Check, result) -> bool:
    if c.kind == "mse_below":
        a, b = result.mean_mse(c.estimator, c.n), result.mean_mse(c.baseline, c.n)
        return bool(np.isfinite(a) and np.isfinite(b) and a < b)
    cov = result.coverage_rate(c.estimator, c.n)
    if math.isnan(cov):
        return False
    return cov >= c.value if c.kind == "coverage_at_least" else cov <= c.value


def evaluate_profile_check(c: Check, rows) -> bool:
    arr = np.array(rows)
    q, s, e = arr[:, 1], arr[:, 2], arr[:, 3]
    if c.kind == "ordering":
        return bool(np.all(q <= s) and np.all(s <= e))
    if c.kind == "monotone":
        return bool(all(np.all(np.diff(v) >= 0) for v in (q, s, e)))
    if c.kind == "median":
        # linear interpolation when 0.5 falls between grid levels
        if not arr[0, 0] <= 0.5 <= arr[-1, 0]:
            return False
        return bool(abs(np.interp(0.5, arr[:, 0], q) - c.value) <= c.tol)
    if c.kind == "limit":
        return bool(all(abs(v[-1] - c.value) <= c.tol for v in (q, s, e)))
    raise ConfigError(f"check kind {c.kind!r} does not apply to a risk profile")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _verdicts(checks, fn, out) -> bool:
    ok = True
    for c in checks:
        passed = fn(c)
        ok &= passed
        print(f"{c.label()}: {'PASS' if passed else 'FAIL'}", file=out)
    return ok


def cmd_simulate(args, out=None) -> int:
    out = out or sys.stdout
    cfg = load_config(args.config)
    out_dir = Path(args.out or cfg.out_dir)
    if cfg.mode == "risk_profile":
        for c in cfg.checks:
            if c.kind in ("mse_below", "coverage_at_least", "coverage_at_most"):
                raise ConfigError(f"check kind {c.kind!r} needs a [benchmark] config")
        p = cfg.profile
        rows = risk_profile(p["mu"], p["sigma"], p["cap"], p["taus"], p["n"], cfg.seed)
        write_risk_profile(rows, out_dir / "risk_profile.csv")
        ok = _verdicts(cfg.checks, lambda c: evaluate_profile_check(c, rows), out)
        return 0 if ok else 1
    bench = cfg.benchmark
    if args.threads:
        from dataclasses import replace
        bench = replace(bench, threads=args.threads)
    for c in cfg.checks:
        if c.kind not in ("mse_below", "coverage_at_least", "coverage_at_most"):
            raise ConfigError(f"check kind {c.kind!r} needs a [risk_profile] config")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = run_benchmark(bench)
    result.write_csv(out_dir / "results.csv")
    result.write_json(out_dir / "summary.json")
    _atomic_write_text(out_dir / "report.json", result.report.to_json(indent=2))
    for f in result.failures:
        print(f"replication {f.rep} (n={f.n}, {f.estimator}) failed: {f.error}", file=out)
    ok = _verdicts(cfg.checks, lambda c: evaluate_benchmark_check(c, result), out)
    return 0 if ok and not result.failures else 1


def _statistic_from_flags(args) -> StatisticSpec:
    sec = {"kind": args.statistic}
    if args.tau is not None:
        sec["tau"] = args.tau
    if args.delta is not None:
        sec["delta"] = args.delta
    return parse_statistic(sec, "--statistic")


def cmd_fit(args, out=None) -> int:
    out = out or sys.stdout
    spec = _statistic_from_flags(args)
    features = [f.strip() for f in args.features.split(",") if f.strip()] if args.features else None
    if not features:
        raise ConfigError("--features: at least one covariate column is required")
    data = load_csv(args.data, args.outcome, args.treatment, features)
    order = np.arange(data.n)
    if args.shuffle is not None:
        order = np.random.default_rng(args.shuffle).permutation(data.n)
        data = data.take(order)
    cfg = NuisanceConfig.variant(args.variant, spec, propensity=args.propensity,
                                 density_bandwidth=args.density_bandwidth)
    fmap = None
    stage = args.final_stage
    if args.project:
        chosen = [c.strip() for c in args.project.split(",") if c.strip()]
        fmap = FeatureMap.select(list(data.feature_names), chosen)
        stage = "ols"
    fitted = cdte_learn(data, args.folds, spec, cfg, stage, args.seed, fmap, threads=args.threads)
    out_dir = Path(args.out)
    pred = np.empty(data.n)
    pred[order] = fitted.predict(data.X)
    atomic_write_rows(out_dir / "predictions.csv", ["row", "cdte"],
                      [[str(i), format(v, ".17g")] for i, v in enumerate(pred)])
    _atomic_write_text(out_dir / "report.json", fitted.report.to_json(indent=2))
    if args.project:
        proj = fitted.projection()
        _atomic_write_text(out_dir / "projection.json", proj.to_json(indent=2))
        for name, c, lo, hi in zip(proj.names, proj.gamma_hat, proj.ci[:, 0], proj.ci[:, 1]):
            print(f"{name}: {c:.6g} [{lo:.6g}, {hi:.6g}]", file=out)
    return 0


def cmd_risk_profile(args, out=None) -> int:
    out = out or sys.stdout
    if args.taus:
        taus = [float(t) for t in args.taus.split(",")]
    else:
        taus = np.linspace(args.tau_min, args.tau_max, args.levels).tolist()
    for t in taus:
        if not 0.0 < t < 1.0:
            raise ConfigError(f"--taus: every tau must lie in (0, 1), got {t}")
    if not args.sigma > 0 or not args.cap > 0:
        raise ConfigError("--sigma and --cap must be > 0")
    rows = risk_profile(args.mu, args.sigma, args.cap, taus, args.n, args.seed)
    write_risk_profile(rows, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdte", description="Conditional distributional treatment effect learning.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a benchmark or risk-profile config")
    s.add_argument("--config", required=True, help="TOML config path or bundled config name")
    s.add_argument("--out", help="output directory (overrides [run] out_dir)")
    s.add_argument("--threads", type=int, default=None, help="cap on worker threads")

    f = sub.add_parser(
        "fit", help="fit the effect learner on a CSV dataset",
        epilog="Statistics measure the upper tail. For a lower-tail superquantile effect, "
               "negate the outcome column before fitting and negate the predictions afterwards.")
    f.add_argument("--data", required=True)
    f.add_argument("--outcome", required=True)
    f.add_argument("--treatment", required=True)
    f.add_argument("--features", required=True, help="comma-separated covariate columns")
    f.add_argument("--statistic", choices=("mean", "quantile", "superquantile", "klrisk"), default="superquantile")
    f.add_argument("--tau", type=float)
    f.add_argument("--delta", type=float)
    f.add_argument("--folds", type=int, default=5)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--project", help="comma-separated features for the OLS projection")
    f.add_argument("--variant", choices=tuple(VARIANTS), default="flexible")
    f.add_argument("--propensity", choices=("logistic", "forest", "constant"), default="logistic")
    f.add_argument("--final-stage", choices=("ols", "forest"), default="ols")
    f.add_argument("--density-bandwidth", type=float, default=1.0)
    f.add_argument("--shuffle", type=int, metavar="SEED", help="permute rows with this seed before folding")
    f.add_argument("--threads", type=int, default=1)

    r = sub.add_parser("risk-profile", help="quantile / superquantile / EVaR table of a capped lognormal")
    r.add_argument("--mu", type=float, default=0.0)
    r.add_argument("--sigma", type=float, default=0.5)
    r.add_argument("--cap", type=float, default=6.0)
    r.add_argument("--taus", help="comma-separated levels (overrides the grid flags)")
    r.add_argument("--tau-min", type=float, default=0.01)
    r.add_argument("--tau-max", type=float, default=0.99)
    r.add_argument("--levels", type=int, default=50)
    r.add_argument("--n", type=int, default=1_000_000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"simulate": cmd_simulate, "fit": cmd_fit, "risk-profile": cmd_risk_profile}[args.command]
    try:
        return handler(args)
    except CDTEError as exc:
        print(f"cdte {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
