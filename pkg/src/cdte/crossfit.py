"""Cross-fitted pseudo-outcome regression and the plug-in baseline."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .dataset import Dataset, assign_folds, split
from .diagnostics import FoldDiagnostics, logloss, summarize
from .errors import CDTEError, ConfigurationError, NuisanceError
from .inference import FeatureMap, ProjectionResult, ols_project
from .learners.conditional import (
    WeightedStatisticModel,
    density_at_quantile,
    fit_weighted_quantile,
    forest_factory,
    half_split,
    linear_quantile_learner,
    make_weighter,
    ols_factory,
    two_stage_superquantile,
)
from .learners.forest import ForestParams, fit_forest, fit_forest_classifier
from .learners.linear import ConstantPropensity, fit_logistic, fit_ols
from .pseudo import ArmEvaluator, NuisanceSet, PseudoOutcomes, RegressionStatisticModel, pseudo_outcome_arrays
from .statistics import Kind, StatisticSpec, kl_clamp_count, pinball_loss

PROPENSITY = ("logistic", "forest", "constant")
QUANTILE = ("qrf", "linear", "kernel")
SUPERQUANTILE = ("sqrf", "two-stage-ols", "kernel")
EVAR = ("forest", "kernel")
OUTCOME = ("forest", "ols", "kernel")

VARIANTS = {
    "flexible": dict(quantile="qrf", superquantile="sqrf", evar="forest", outcome="forest"),
    "misspecified": dict(quantile="linear", superquantile="two-stage-ols", outcome="ols"),
    "slow": dict(quantile="kernel", superquantile="kernel", evar="kernel", outcome="kernel"),
}


@dataclass(frozen=True)
class NuisanceConfig:
    """Learner choices for every nuisance.

    ``outcome`` picks the conditional-mean learner used for the mean
    statistic.  ``density_bandwidth`` is the Gaussian bandwidth ``b`` of the
    density-at-quantile targets.
    """

    propensity: str = "logistic"
    propensity_value: float = 0.5
    quantile: str = "qrf"
    superquantile: str = "sqrf"
    evar: str = "forest"
    outcome: str = "forest"
    density: str | None = "kernel"
    density_bandwidth: float = 1.0
    forest: ForestParams = field(default_factory=ForestParams)
    half_split_seed: int | None = None

    def __post_init__(self):
        for name, allowed in (("propensity", PROPENSITY), ("quantile", QUANTILE),
                              ("superquantile", SUPERQUANTILE), ("evar", EVAR), ("outcome", OUTCOME)):
            if getattr(self, name) not in allowed:
                raise ConfigurationError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.density not in (None, "kernel"):
            raise ConfigurationError(f"density must be 'kernel' or None, got {self.density!r}")
        if not self.density_bandwidth > 0:
            raise ConfigurationError("density_bandwidth must be > 0")
        if not 0.0 < self.propensity_value < 1.0:
            raise ConfigurationError("propensity_value must lie in (0, 1)")

    @classmethod
    def variant(cls, name: str, spec: StatisticSpec | None = None, **overrides) -> "NuisanceConfig":
        if name not in VARIANTS:
            raise ConfigurationError(f"unknown nuisance variant {name!r}; choose from {sorted(VARIANTS)}")
        if spec is not None and spec.kind is Kind.KLRISK and "evar" not in VARIANTS[name]:
            raise ConfigurationError(f"variant {name!r} is not defined for the KL-risk statistic")
        return cls(**{**VARIANTS[name], **overrides})

    def check(self, spec: StatisticSpec) -> None:
        if spec.kind is Kind.QUANTILE and self.density is None:
            raise ConfigurationError("the quantile statistic needs a density learner (density='kernel')")


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _forest(cfg: NuisanceConfig, seed: int) -> ForestParams:
    return replace(cfg.forest, seed=seed)


def _fit_propensity(train: Dataset, cfg: NuisanceConfig, seed: int):
    if cfg.propensity == "constant":
        return ConstantPropensity(cfg.propensity_value)
    if cfg.propensity == "logistic":
        return fit_logistic(train.X, train.a)
    return fit_forest_classifier(train.X, train.a, _forest(cfg, seed))


def _quantile_learner(cfg: NuisanceConfig, seed: int):
    if cfg.quantile == "linear":
        return linear_quantile_learner
    return fit_weighted_quantile("forest" if cfg.quantile == "qrf" else "kernel", _forest(cfg, seed))


def _fit_arm(train: Dataset, arm: int, spec: StatisticSpec, cfg: NuisanceConfig, seed: int):
    sub = np.flatnonzero(train.a == arm)
    X, y = train.X[sub], train.y[sub]
    s = [derive_seed(seed, arm, j) for j in range(4)]
    kind = spec.kind
    if kind is Kind.MEAN:
        if cfg.outcome == "ols":
            model = RegressionStatisticModel(fit_ols(X, y))
        elif cfg.outcome == "forest":
            model = RegressionStatisticModel(fit_forest(X, y, _forest(cfg, s[0])))
        else:
            model = WeightedStatisticModel(make_weighter("kernel", X, y), y, "mean")
        return ArmEvaluator(spec, model)
    if kind is Kind.QUANTILE:
        learner = _quantile_learner(cfg, s[0])
        q = learner(X, y, spec.tau)
        h1, _ = half_split(y.size, cfg.half_split_seed)
        q_half = _quantile_learner(cfg, s[1])(X[h1], y[h1], spec.tau)
        f = density_at_quantile(train, arm, q_half, cfg.density_bandwidth,
                                forest_factory(s[2], cfg.forest), cfg.half_split_seed)
        model = q if isinstance(q, WeightedStatisticModel) else RegressionStatisticModel(q)
        return ArmEvaluator(spec, model, f)
    if kind is Kind.SUPERQUANTILE:
        if cfg.superquantile == "two-stage-ols":
            q = fit_weighted_quantile("forest", _forest(cfg, s[0]))(X, y, spec.tau)
            mu = two_stage_superquantile(train, arm, spec.tau,
                                         fit_weighted_quantile("forest", _forest(cfg, s[1])),
                                         ols_factory, cfg.half_split_seed)
            return ArmEvaluator(spec, RegressionStatisticModel(mu, (q,)))
        src = "forest" if cfg.superquantile == "sqrf" else "kernel"
        w = make_weighter(src, X, y, _forest(cfg, s[0]))
        return ArmEvaluator(spec, WeightedStatisticModel(w, y, "superquantile", tau=spec.tau))
    w = make_weighter(cfg.evar, X, y, _forest(cfg, s[0]))
    return ArmEvaluator(spec, WeightedStatisticModel(w, y, "klrisk", delta=spec.delta))


def fit_nuisances(train: Dataset, spec: StatisticSpec, config: NuisanceConfig | None = None,
                  seed: int = 0, fold: int | None = None) -> NuisanceSet:
    """Fit propensity and per-arm nuisances on a training split."""
    cfg = config or NuisanceConfig()
    cfg.check(spec)
    try:
        e = _fit_propensity(train, cfg, derive_seed(seed, 2))
    except CDTEError as exc:
        raise NuisanceError(f"fold {fold}: propensity fit failed: {exc}", fold=fold, nuisance="propensity") from exc
    arms = []
    for arm in (0, 1):
        try:
            arms.append(_fit_arm(train, arm, spec, cfg, seed))
        except CDTEError as exc:
            raise NuisanceError(f"fold {fold}: arm {arm} nuisance fit failed: {exc}",
                                fold=fold, nuisance=f"arm{arm}") from exc
    return NuisanceSet(spec, e, tuple(arms), fold)


@dataclass
class FoldOutput:
    k: int
    eval_idx: np.ndarray
    psi: np.ndarray
    plugin: np.ndarray
    nuisances: NuisanceSet
    diagnostics: FoldDiagnostics
    plugin_new: np.ndarray | None = None


@dataclass
class CrossFit:
    """Cross-fitting output shared by the learner and plug-in estimators."""

    spec: StatisticSpec
    K: int
    pseudo: PseudoOutcomes
    plugin: np.ndarray
    nuisances: list
    diagnostics: list
    plugin_new: np.ndarray | None = None

    @property
    def report(self):
        return summarize(self.diagnostics)


def _fold_diagnostics(k, train, ev, nuis, spec, parts):
    spec_kind = spec.kind
    e_train = nuis.propensity(train.X)
    ll = logloss(train.a, e_train)
    clips = 0
    if hasattr(nuis.propensity, "clip_count"):
        clips = nuis.propensity.clip_count(train.X) + nuis.propensity.clip_count(ev.X)
    pin = None
    if spec_kind in (Kind.QUANTILE, Kind.SUPERQUANTILE):
        sub = train.take(np.arange(min(train.n, 200)))
        losses = []
        for a in (0, 1):
            rows = np.flatnonzero(sub.a == a)
            if rows.size:
                kappa, h, _ = nuis.arm(a, sub.X[rows])
                q = kappa if spec_kind is Kind.QUANTILE else h[:, 0]
                losses.append(pinball_loss(sub.y[rows], q, spec.tau) * rows.size)
        pin = float(sum(losses) / sub.n)
    floors = 0
    if spec_kind is Kind.QUANTILE:
        for a in (0, 1):
            f = nuis.arms[a].density
            if hasattr(f, "floor_count"):
                floors += f.floor_count(ev.X)
    clamps = 0
    if spec_kind is Kind.KLRISK:
        h_a = parts["h_a"]
        clamps = kl_clamp_count(ev.y, h_a[:, 0], h_a[:, 1])
    return FoldDiagnostics(k, train.n, ev.n, ll, pin, int(clips), int(floors), int(clamps))


def _run_fold(data, folds, k, spec, cfg, seed, fit_fn, X_new, min_arm):
    train, ev = split(data, folds, k, min_arm=min_arm)
    fseed = derive_seed(seed, k)
    try:
        if fit_fn is None:
            nuis = fit_nuisances(train, spec, cfg, fseed, fold=k)
        else:
            nuis = fit_fn(train, spec, cfg, fseed)
            nuis.fold = k
        e = nuis.e(ev.X)
        k0, h0, al0 = nuis.arm(0, ev.X)
        k1, h1, al1 = nuis.arm(1, ev.X)
        t = (ev.a == 1)[:, None]
        parts = {"h_a": np.where(t, h1, h0), "alpha_a": np.where(t, al1, al0)}
        psi = pseudo_outcome_arrays(spec, ev.a, ev.y, e, k0, k1, parts["h_a"], parts["alpha_a"])
        if not np.all(np.isfinite(psi)):
            raise NuisanceError(f"fold {k}: non-finite pseudo-outcome", fold=k, nuisance="pseudo-outcome")
        plugin_new = nuis.plugin(X_new) if X_new is not None else None
    except NuisanceError as exc:
        if exc.fold is None:
            exc.fold = k
        raise
    except CDTEError as exc:
        raise NuisanceError(f"fold {k}: {exc}", fold=k) from exc
    diag = _fold_diagnostics(k, train, ev, nuis, spec, parts)
    return FoldOutput(k, folds.indices(k), psi, k1 - k0, nuis, diag, plugin_new)


def crossfit(data: Dataset, K: int, spec: StatisticSpec, config: NuisanceConfig | None = None,
             seed: int = 0, fit_nuisances_fn: Callable | None = None, X_new=None,
             threads: int = 1, min_arm: int = 2) -> CrossFit:
    """Fit nuisances on each fold complement and evaluate pseudo-outcomes on the fold.

    ``fit_nuisances_fn(train, spec, config, seed)`` replaces
    :func:`fit_nuisances` (used to inject analytic nuisances).  When
    ``X_new`` is given, every fold's plug-in difference is also evaluated
    there (``plugin_new`` has shape ``(K, m)``).
    """
    cfg = config or NuisanceConfig()
    if data.n < 2 * K:
        raise ConfigurationError(f"need n >= 2K, got n={data.n}, K={K}")
    folds = assign_folds(data.n, K)
    if fit_nuisances_fn is None:
        cfg.check(spec)
    args = (data, folds)
    run = lambda k: _run_fold(*args, k, spec, cfg, seed, fit_nuisances_fn, X_new, min_arm)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(run, range(1, K + 1)))
    else:
        outs = [run(k) for k in range(1, K + 1)]
    psi = np.empty(data.n)
    plugin = np.empty(data.n)
    fold_of = np.empty(data.n, dtype=int)
    for o in outs:
        psi[o.eval_idx] = o.psi
        plugin[o.eval_idx] = o.plugin
        fold_of[o.eval_idx] = o.k
    pn = np.stack([o.plugin_new for o in outs]) if X_new is not None else None
    return CrossFit(spec, K, PseudoOutcomes(psi, fold_of), plugin,
                    [o.nuisances for o in outs], [o.diagnostics for o in outs], pn)


# --------------------------------------------------------------------------
# final stage
# --------------------------------------------------------------------------

FINAL_STAGES = ("ols", "forest")


@dataclass
class FittedCDTE:
    """Final-stage model of an effect learner.

    ``final_model`` is ``None`` for the raw plug-in, which averages the
    per-fold plug-in differences at new covariates.
    """

    final_model: object
    spec: StatisticSpec
    K: int
    final_stage: str | None
    targets: np.ndarray
    feature_map: FeatureMap | None = None
    nuisances: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    projection_result: ProjectionResult | None = None

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.final_model is None:
            return np.mean([n.plugin(X) for n in self.nuisances], axis=0)
        if self.final_stage == "ols":
            return self.feature_map(X) @ self.final_model
        return self.final_model.predict(X)

    __call__ = predict

    def projection(self) -> ProjectionResult:
        if self.projection_result is None:
            raise ConfigurationError("projection inference needs the OLS final stage")
        return self.projection_result

    @property
    def report(self):
        return summarize(self.diagnostics)


def fit_final(X, targets, final_stage: str, seed: int, feature_map: FeatureMap | None = None,
              forest: ForestParams | None = None, level: float = 0.95, names=None):
    """Regress ``targets`` on ``X``; returns ``(model, projection)``."""
    if final_stage == "ols":
        fmap = feature_map or FeatureMap()
        Phi = fmap(X)
        proj = ols_project(targets, Phi, level, fmap.labels(Phi.shape[1]) if names is None else names)
        return proj.gamma_hat, proj
    if final_stage == "forest":
        return fit_forest(X, targets, replace(forest or ForestParams(), seed=seed)), None
    raise ConfigurationError(f"final_stage must be one of {FINAL_STAGES}, got {final_stage!r}")


def _final_seed(seed: int) -> int:
    return derive_seed(seed, 0)


def cdte_learn(data: Dataset, K: int, spec: StatisticSpec, config: NuisanceConfig | None = None,
               final_stage: str = "ols", seed: int = 0, feature_map: FeatureMap | None = None,
               fit_nuisances_fn: Callable | None = None, crossfit_result: CrossFit | None = None,
               threads: int = 1, level: float = 0.95) -> FittedCDTE:
    """Cross-fitted effect learner: regress out-of-fold pseudo-outcomes on ``X``.

    Parameters
    ----------
    final_stage : {"ols", "forest"}
        OLS on ``feature_map(X)`` (with HC1 projection inference) or a forest on ``X``.
    crossfit_result : CrossFit, optional
        Reuse precomputed nuisances (e.g. shared with :func:`plugin_learn`).
    """
    cfg = config or NuisanceConfig()
    cf = crossfit_result or crossfit(data, K, spec, cfg, seed, fit_nuisances_fn, threads=threads)
    fmap = feature_map or FeatureMap()
    model, proj = fit_final(data.X, cf.pseudo.values, final_stage, _final_seed(seed), fmap, cfg.forest, level)
    return FittedCDTE(model, spec, cf.K, final_stage, cf.pseudo.values, fmap, cf.nuisances, cf.diagnostics, proj)


def plugin_learn(data: Dataset, K: int, spec: StatisticSpec, config: NuisanceConfig | None = None,
                 final_stage: str | None = None, seed: int = 0, feature_map: FeatureMap | None = None,
                 crossfit_result: CrossFit | None = None, fit_nuisances_fn: Callable | None = None,
                 threads: int = 1, level: float = 0.95) -> FittedCDTE:
    """Plug-in difference ``kappa_1 - kappa_0``, raw or smoothed by a final stage.

    Raw (``final_stage=None``) predictions at new covariates average the K
    fold models; smoothed variants regress the cross-fitted differences on ``X``.
    """
    cfg = config or NuisanceConfig()
    cf = crossfit_result or crossfit(data, K, spec, cfg, seed, fit_nuisances_fn, threads=threads)
    if final_stage is None:
        return FittedCDTE(None, spec, cf.K, None, cf.plugin, None, cf.nuisances, cf.diagnostics)
    fmap = feature_map or FeatureMap()
    model, proj = fit_final(data.X, cf.plugin, final_stage, _final_seed(seed), fmap, cfg.forest, level)
    return FittedCDTE(model, spec, cf.K, final_stage, cf.plugin, fmap, cf.nuisances, cf.diagnostics, proj)
