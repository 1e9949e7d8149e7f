"""Simulation study: data generation, analytic oracles and Monte-Carlo benchmarks.

Design: ``X ~ U[0,1]^d``, ``A ~ Bernoulli(sigmoid(6 x0 - 3))`` and
``Y | X, A ~ Lognormal(x0 + A x1, sigma)``, optionally capped at the 99th
conditional quantile.  Every statistic used here is positively homogeneous
and the cap scales with ``exp(x0 + a x1)``, so each arm's statistic is
``exp(x0 + a x1)`` times the same statistic of the standardized law
``W = exp(sigma Z)`` (capped at ``exp(sigma z_.99)``).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize
from scipy.special import expit, logsumexp
from scipy.stats import norm

from .crossfit import NuisanceConfig, crossfit, derive_seed, fit_final
from .dataset import Dataset, atomic_write_rows
from .diagnostics import Failure, summarize
from .errors import CDTEError, DomainError
from .inference import FeatureMap, true_projection_coef
from .learners.forest import ForestParams
from .pseudo import ArmEvaluator, NuisanceSet
from .statistics import Kind, StatisticSpec, weighted_evar, weighted_superquantile


@dataclass(frozen=True)
class DgpSpec:
    d: int = 10
    sigma: float = 0.2
    truncate: bool = False
    cap_level: float = 0.99
    prop_slope: float = 6.0
    prop_intercept: float = -3.0

    def __post_init__(self):
        if self.d < 2:
            raise DomainError("the design needs d >= 2")
        if not self.sigma > 0:
            raise DomainError("sigma must be > 0")

    @property
    def z_cap(self) -> float:
        return float(norm.ppf(self.cap_level))


def sample_covariates(dgp: DgpSpec, n: int, rng) -> np.ndarray:
    return rng.uniform(size=(n, dgp.d))


def propensity(dgp: DgpSpec, X) -> np.ndarray:
    X = np.atleast_2d(X)
    return expit(dgp.prop_slope * X[:, 0] + dgp.prop_intercept)


def log_scale(X, a) -> np.ndarray:
    X = np.atleast_2d(X)
    return X[:, 0] + np.asarray(a) * X[:, 1]


def sample_dgp(dgp: DgpSpec, n: int, rng) -> Dataset:
    if n < 1:
        raise DomainError("n must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    X = sample_covariates(dgp, n, rng)
    a = (rng.uniform(size=n) < propensity(dgp, X)).astype(int)
    m = log_scale(X, a)
    z = rng.standard_normal(n)
    if dgp.truncate:
        z = np.minimum(z, dgp.z_cap)
    return Dataset(X, a, np.exp(m + dgp.sigma * z))


# --------------------------------------------------------------------------
# standardized-law statistics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StdStat:
    """Statistic of the standardized law: ``kappa``, auxiliary ``h`` and density at the quantile."""

    kappa: float
    h: tuple = ()
    density: float | None = None


def _std_quantile(dgp: DgpSpec, tau: float) -> tuple[float, float]:
    s = dgp.sigma
    if dgp.truncate and tau >= dgp.cap_level:
        return math.exp(s * dgp.z_cap), float("nan")
    z = norm.ppf(tau)
    q = math.exp(s * z)
    return q, norm.pdf(z) / (q * s)


def _std_superquantile(dgp: DgpSpec, tau: float) -> tuple[float, float]:
    s = dgp.sigma
    q, _ = _std_quantile(dgp, tau)
    if not dgp.truncate:
        return math.exp(s * s / 2) * norm.cdf(s - norm.ppf(tau)) / (1 - tau), q
    zc = dgp.z_cap
    cap = math.exp(s * zc)
    if tau >= dgp.cap_level:
        return cap, q
    # E[min(W, cap) I[W >= q]] split into the continuous part and the atom at cap
    tail = math.exp(s * s / 2) * (norm.cdf(s - norm.ppf(tau)) - norm.cdf(s - zc)) + (1 - dgp.cap_level) * cap
    return tail / (1 - tau), q


def _std_mean(dgp: DgpSpec) -> float:
    s = dgp.sigma
    if not dgp.truncate:
        return math.exp(s * s / 2)
    zc = dgp.z_cap
    return math.exp(s * s / 2) * norm.cdf(zc - s) + (1 - dgp.cap_level) * math.exp(s * zc)


def _log_mgf_shifted(dgp: DgpSpec, beta: float) -> float:
    """``log E[exp((W - cap)/beta)]`` for the capped standardized law (adaptive quadrature)."""
    s, zc = dgp.sigma, dgp.z_cap
    cap = math.exp(s * zc)
    f = lambda z: math.exp((math.exp(s * z) - cap) / beta) * norm.pdf(z)  # noqa: E731
    cont, _ = integrate.quad(f, -12.0, zc, epsabs=0.0, epsrel=1e-12, limit=200, points=[zc - 1.0])
    return math.log(cont + (1 - dgp.cap_level))


@lru_cache(maxsize=64)
def _std_klrisk(dgp: DgpSpec, delta: float) -> tuple[float, float, float]:
    """EVaR of the capped standardized law; returns ``(R, beta, lam)``.

    The objective ``cap + beta (log E[exp((W-cap)/beta)] + delta)`` is scanned
    on a 10^4-point log grid of ``beta`` with Gauss-Legendre integration, then
    refined by bounded scalar minimization with adaptive quadrature.
    """
    if not dgp.truncate:
        raise DomainError("the KL risk of an uncapped lognormal is infinite; use truncate=True")
    s, zc = dgp.sigma, dgp.z_cap
    cap = math.exp(s * zc)
    if delta == 0:
        mean = _std_mean(dgp)
        return mean, float("inf"), float("-inf")
    nodes, wts = np.polynomial.legendre.leggauss(400)
    lo, hi = -12.0, zc
    z = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    wz = 0.5 * (hi - lo) * wts * norm.pdf(z)
    betas = np.logspace(-4, 3, 10_000)
    expo = (np.exp(s * z)[None, :] - cap) / betas[:, None]
    logint = logsumexp(expo, b=wz[None, :], axis=1)
    logm = np.logaddexp(logint, math.log(1 - dgp.cap_level))
    g = cap + betas * (logm + delta)
    i = int(np.argmin(g))
    lo_b, hi_b = betas[max(i - 1, 0)], betas[min(i + 1, betas.size - 1)]
    res = optimize.minimize_scalar(lambda b: cap + b * (_log_mgf_shifted(dgp, b) + delta),
                                   bounds=(lo_b, hi_b), method="bounded",
                                   options={"xatol": 1e-12 * hi_b, "maxiter": 500})
    beta = float(res.x)
    R = float(res.fun)
    return R, beta, R - beta * (delta + 1)


def std_statistic(dgp: DgpSpec, spec: StatisticSpec) -> StdStat:
    kind = spec.kind
    if kind is Kind.MEAN:
        return StdStat(_std_mean(dgp))
    if kind is Kind.QUANTILE:
        q, f = _std_quantile(dgp, spec.tau)
        return StdStat(q, (), f)
    if kind is Kind.SUPERQUANTILE:
        mu, q = _std_superquantile(dgp, spec.tau)
        return StdStat(mu, (q,))
    R, beta, lam = _std_klrisk(dgp, float(spec.delta))
    return StdStat(R, (beta, lam))


def effect_multiplier(dgp: DgpSpec, spec: StatisticSpec) -> float:
    """``c`` in ``true_cdte(x) = c (exp(x0 + x1) - exp(x0))``."""
    return std_statistic(dgp, spec).kappa


def true_cdte(dgp: DgpSpec, spec: StatisticSpec, x):
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    out = effect_multiplier(dgp, spec) * (np.exp(X[:, 0] + X[:, 1]) - np.exp(X[:, 0]))
    return float(out[0]) if x.ndim == 1 else out


@dataclass
class _OracleArm:
    dgp: DgpSpec
    std: StdStat
    arm: int

    def evaluate(self, X):
        scale = np.exp(log_scale(X, self.arm))
        h = np.column_stack([scale * v for v in self.std.h]) if self.std.h else np.empty((scale.size, 0))
        return self.std.kappa * scale, h

    def density(self, X):
        return self.std.density / np.exp(log_scale(X, self.arm))


def true_nuisances(dgp: DgpSpec, spec: StatisticSpec) -> NuisanceSet:
    """Analytic nuisances: true propensity (unclipped) and arm statistics."""
    std = std_statistic(dgp, spec)
    arms = []
    for a in (0, 1):
        model = _OracleArm(dgp, std, a)
        arms.append(ArmEvaluator(spec, model, model.density if spec.kind is Kind.QUANTILE else None))
    return NuisanceSet(spec, lambda X: propensity(dgp, X), tuple(arms))


def oracle_fit_fn(dgp: DgpSpec):
    """``fit_nuisances`` replacement returning analytic truth (ignores the data)."""
    def fit(train, spec, config, seed):
        return true_nuisances(dgp, spec)
    return fit


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------

ESTIMATORS = ("cdte_ols", "cdte_rf", "plugin", "plugin_ols", "plugin_rf")
COVERAGE_ESTIMATORS = ("cdte_ols", "plugin_ols")


@dataclass(frozen=True)
class BenchmarkConfig:
    spec: StatisticSpec
    n_grid: tuple = (200, 800, 3200)
    reps: int = 20
    eval_points: int = 500
    variants: tuple = ("flexible",)
    final_stages: tuple = ("ols", "forest")
    K: int = 5
    seed: int = 0
    eval_seed: int = 20240601
    dgp: DgpSpec = field(default_factory=DgpSpec)
    coverage_index: int = 2  # x1 coefficient in [1, x0, ..., x9]
    level: float = 0.95
    oracle_draws: int = 1_000_000
    forest: ForestParams = field(default_factory=ForestParams)
    density_bandwidth: float = 1.0
    threads: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise DomainError("reps must be >= 1")
        if self.eval_points < 1:
            raise DomainError("eval_points must be >= 1")
        if not self.n_grid or min(self.n_grid) < 2 * self.K:
            raise DomainError("every n in n_grid must be >= 2K")
        for fs in self.final_stages:
            if fs not in ("ols", "forest"):
                raise DomainError(f"final stage must be 'ols' or 'forest', got {fs!r}")
        for v in self.variants:
            NuisanceConfig.variant(v, self.spec)

    def nuisance_config(self, variant: str) -> NuisanceConfig:
        return NuisanceConfig.variant(variant, self.spec, forest=self.forest,
                                      density_bandwidth=self.density_bandwidth)


@dataclass
class BenchmarkResult:
    """Long-format replication records with aggregation helpers.

    ``records``: ``(estimator, n, rep, mse)``; ``coverage``:
    ``(estimator, n, rep, covered)``; estimator names are ``variant/name``.
    """

    config: BenchmarkConfig
    records: list = field(default_factory=list)
    coverage: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    oracle_coef: list = field(default_factory=list)

    def mse(self, estimator: str, n: int) -> np.ndarray:
        return np.array([r[3] for r in self.records if r[0] == estimator and r[1] == n])

    def mean_mse(self, estimator: str, n: int) -> float:
        v = self.mse(estimator, n)
        return float(v.mean()) if v.size else float("nan")

    def coverage_rate(self, estimator: str, n: int) -> float:
        v = [c[3] for c in self.coverage if c[0] == estimator and c[1] == n]
        return float(np.mean(v)) if v else float("nan")

    def estimators(self) -> list[str]:
        seen = []
        for r in self.records:
            if r[0] not in seen:
                seen.append(r[0])
        return seen

    def summary(self) -> list[dict]:
        rows = []
        for est in self.estimators():
            for n in self.config.n_grid:
                v = self.mse(est, n)
                if not v.size:
                    continue
                row = {"estimator": est, "n": int(n), "reps": int(v.size), "mean_mse": float(v.mean()),
                       "se_mse": float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0}
                cov = self.coverage_rate(est, n)
                row["coverage"] = None if math.isnan(cov) else cov
                rows.append(row)
        return rows

    @property
    def report(self):
        return summarize(self.diagnostics, self.failures)

    def csv_rows(self):
        return [[est, str(n), str(rep), format(mse, ".17g")] for est, n, rep, mse in self.records]

    def write_csv(self, path) -> None:
        atomic_write_rows(path, ["estimator", "n", "rep", "mse"], self.csv_rows())

    def summary_dict(self) -> dict:
        return {"statistic": self.config.spec.kind.value, "tau": self.config.spec.tau,
                "delta": self.config.spec.delta, "n_grid": list(self.config.n_grid),
                "reps": self.config.reps, "oracle_coef": self.oracle_coef,
                "summary": self.summary(), "report": self.report.to_dict()}

    def write_json(self, path) -> None:
        _atomic_write_text(path, json.dumps(self.summary_dict(), indent=2, sort_keys=True))


def _atomic_write_text(path, text: str) -> None:
    import os
    import tempfile
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def eval_design(config: BenchmarkConfig) -> np.ndarray:
    return sample_covariates(config.dgp, config.eval_points, np.random.default_rng(config.eval_seed))


def run_one(config: BenchmarkConfig, variant: str, n: int, rep: int, X_eval, truth, gamma_true):
    """One replication; returns ``(mse_records, coverage_records, diagnostics)``."""
    data = sample_dgp(config.dgp, n, np.random.default_rng(np.random.SeedSequence([config.seed, rep, n])))
    fseed = derive_seed(config.seed, rep, n)
    cfg = config.nuisance_config(variant)
    cf = crossfit(data, config.K, config.spec, cfg, fseed, X_new=X_eval, threads=config.threads)
    fmap = FeatureMap()
    preds = {"plugin": cf.plugin_new.mean(axis=0)}
    covered = {}
    fseed_final = derive_seed(fseed, 0)
    for stage in config.final_stages:
        tag = "ols" if stage == "ols" else "rf"
        for name, targets in (("cdte", cf.pseudo.values), ("plugin", cf.plugin)):
            model, proj = fit_final(data.X, targets, stage, fseed_final, fmap, config.forest, config.level)
            key = f"{name}_{tag}"
            preds[key] = fmap(X_eval) @ model if stage == "ols" else model.predict(X_eval)
            if proj is not None:
                covered[key] = proj.covers(config.coverage_index, gamma_true[config.coverage_index])
    recs = [(f"{variant}/{k}", n, rep, float(np.mean((v - truth) ** 2))) for k, v in preds.items()]
    covs = [(f"{variant}/{k}", n, rep, bool(v)) for k, v in covered.items()]
    diags = []
    for d in cf.diagnostics:
        dd = asdict(d)
        dd.update(rep=rep, n=n)
        diags.append(dd)
    return recs, covs, diags


def run_benchmark(config: BenchmarkConfig, progress=None) -> BenchmarkResult:
    """Monte-Carlo comparison of the effect learner against plug-in baselines.

    Replication ``rep`` at sample size ``n`` draws its data from the seed
    ``(seed, rep, n)``.  A failing replication is recorded (and warned
    about) and its estimators are left out of the aggregates.
    """
    X_eval = eval_design(config)
    truth = true_cdte(config.dgp, config.spec, X_eval)
    gamma = true_projection_coef(config.spec, FeatureMap(), config.dgp, n=config.oracle_draws,
                                 seed=derive_seed(config.eval_seed, 1))
    result = BenchmarkResult(config, oracle_coef=gamma.tolist())
    for variant in config.variants:
        for n in config.n_grid:
            for rep in range(config.reps):
                try:
                    recs, covs, diags = run_one(config, variant, n, rep, X_eval, truth, gamma)
                except (CDTEError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
                    msg = f"{type(exc).__name__}: {exc}"
                    warnings.warn(f"replication {rep} (n={n}, {variant}) failed: {msg}", RuntimeWarning,
                                  stacklevel=2)
                    result.failures.append(Failure(rep, msg, n, variant))
                    continue
                result.records.extend(recs)
                result.coverage.extend(covs)
                result.diagnostics.extend(diags)
                if progress is not None:
                    progress(variant, n, rep)
    return result


# --------------------------------------------------------------------------
# risk profile
# --------------------------------------------------------------------------

def risk_profile(mu: float = 0.0, sigma: float = 0.5, cap: float = 6.0, taus=None,
                 n: int = 1_000_000, seed: int = 0) -> list[tuple[float, float, float, float]]:
    """Quantile, superquantile and EVaR (``delta = -log(1 - tau)``) per level.

    Computed on ``n`` draws of ``min(Lognormal(mu, sigma), cap)``.
    """
    if taus is None:
        taus = np.linspace(0.01, 0.99, 50)
    taus = np.asarray(taus, dtype=float)
    if np.any((taus <= 0) | (taus >= 1)):
        raise DomainError("every tau must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    # presorted input makes the stable sort inside the estimators linear
    y = np.sort(np.minimum(rng.lognormal(mu, sigma, size=n), cap))
    w = np.ones(n)
    rows = []
    for tau in taus:
        sq, q = weighted_superquantile(y, w, float(tau))
        ev = weighted_evar(y, w, float(-math.log1p(-tau))).R
        rows.append((float(tau), q, sq, ev))
    return rows


def write_risk_profile(rows, path) -> None:
    atomic_write_rows(path, ["tau", "quantile", "superquantile", "evar"],
                      [[format(v, ".17g") for v in r] for r in rows])
