"""Statistic-specific conditional estimators for one treatment arm.

Locality-weight learners (forest or kernel) turn a query ``x`` into a
distribution over the arm's training outcomes, on which the weighted
estimators of :mod:`cdte.statistics` are evaluated.  Two-stage learners
split the arm's rows into halves: a quantile is fit on one half and a
pseudo-target regression on the other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..dataset import Dataset
from ..errors import ConfigurationError, DegenerateSplitError
from ..statistics import (
    weighted_evar_rows,
    weighted_mean_rows,
    weighted_quantile_rows,
    weighted_superquantile_rows,
)
from .forest import ForestParams, fit_forest
from .kernel import KernelWeighter
from .linear import fit_linear_quantile, fit_ols

DENSITY_FLOOR = 1e-3


def _weight_matrix(source, x):
    """Weights from a Forest/KernelWeighter at ``x``, or a literal weight vector/matrix.

    Returns ``(W, single)`` where ``single`` marks a one-query call.
    """
    if hasattr(source, "weights"):
        x = np.asarray(x, dtype=float)
        return source.weights(np.atleast_2d(x)), x.ndim == 1
    W = np.asarray(source, dtype=float)
    return np.atleast_2d(W), W.ndim == 1


def qrf_quantile(weights_source, x, values, tau: float):
    """Weighted tau-quantile of ``values`` under the locality weights at ``x``.

    A float for a single query (or a literal weight vector), else one value
    per query row.
    """
    W, single = _weight_matrix(weights_source, x)
    out = weighted_quantile_rows(values, W, tau)
    return float(out[0]) if single else out


def sqrf_superquantile(weights_source, x, values, tau: float):
    W, single = _weight_matrix(weights_source, x)
    mu, _ = weighted_superquantile_rows(values, W, tau)
    return float(mu[0]) if single else mu


# --------------------------------------------------------------------------
# regressors used as building blocks
# --------------------------------------------------------------------------

RegressorFactory = Callable[[np.ndarray, np.ndarray], Callable]


def ols_factory(X, y):
    return fit_ols(X, y)


def forest_factory(seed: int = 0, params: ForestParams | None = None) -> RegressorFactory:
    base = params or ForestParams()

    def fit(X, y):
        return fit_forest(X, y, ForestParams(base.n_trees, base.min_leaf, base.mtry,
                                             base.bootstrap, seed, base.n_jobs))
    return fit


@dataclass(frozen=True)
class ConstantRegressor:
    value: float

    def predict(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.value)

    __call__ = predict


def half_split(n: int, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Even/odd positions, or a seeded random halving when ``seed`` is given."""
    idx = np.arange(n)
    if seed is not None:
        idx = np.random.default_rng(seed).permutation(n)
    return idx[0::2], idx[1::2]


def _arm_rows(train: Dataset, arm: int, min_rows: int):
    sub = np.flatnonzero(train.a == arm)
    if sub.size < min_rows:
        raise DegenerateSplitError(f"arm a={arm} has {sub.size} rows, need >= {min_rows}")
    return train.X[sub], train.y[sub]


def two_stage_superquantile(train: Dataset, arm: int, tau: float,
                            quantile_learner: Callable, final_regressor: RegressorFactory = ols_factory,
                            shuffle_seed: int | None = None):
    """Superquantile by regressing ``Y I[Y >= q(X)] / (1 - tau)`` on ``X``.

    ``quantile_learner(X, y, tau)`` returns a fitted quantile predictor; it
    is fit on the first half of the arm's rows and the final regression on
    the second half.
    """
    X, y = _arm_rows(train, arm, 4)
    h1, h2 = half_split(y.size, shuffle_seed)
    qhat = quantile_learner(X[h1], y[h1], tau)
    q2 = np.asarray(qhat(X[h2]), dtype=float)
    omega = y[h2] * (y[h2] >= q2) / (1.0 - tau)
    return final_regressor(X[h2], omega)


@dataclass(frozen=True)
class FlooredRegressor:
    base: Callable
    floor: float = DENSITY_FLOOR

    def predict(self, X):
        return np.maximum(np.asarray(self.base(X), dtype=float), self.floor)

    __call__ = predict

    def floor_count(self, X) -> int:
        return int(np.sum(np.asarray(self.base(X), dtype=float) < self.floor))


def gaussian_kernel(u):
    return np.exp(-0.5 * np.asarray(u, dtype=float) ** 2) / np.sqrt(2.0 * np.pi)


def density_at_quantile(train: Dataset, arm: int, qhat: Callable, b: float = 1.0,
                        final_regressor: RegressorFactory | None = None,
                        shuffle_seed: int | None = None, floor: float = DENSITY_FLOOR):
    """Conditional density of ``Y`` at ``qhat(X)`` by kernel pseudo-targets.

    Targets ``K((Y - qhat(X))/b)/b`` with a Gaussian ``K`` are formed on the
    second half of the arm's rows and regressed on ``X``; predictions are
    floored at ``floor`` so that ``1/f`` stays bounded.  ``qhat`` should be
    fit on the first half (see :func:`half_split`).
    """
    if not b > 0:
        raise ConfigurationError(f"density bandwidth b must be > 0, got {b!r}")
    X, y = _arm_rows(train, arm, 4)
    _, h2 = half_split(y.size, shuffle_seed)
    q2 = np.asarray(qhat(X[h2]), dtype=float)
    omega = gaussian_kernel((y[h2] - q2) / b) / b
    final = final_regressor or forest_factory()
    return FlooredRegressor(final(X[h2], omega), floor)


def kernel_evar(train: Dataset, arm: int, delta: float, x, weights: str = "kernel",
                forest_params: ForestParams | None = None):
    """Locally weighted EVaR of the arm's outcomes at ``x``.

    ``weights="kernel"`` uses Silverman-bandwidth Gaussian weights,
    ``weights="forest"`` forest leaf co-membership.  Returns arrays
    ``(R, beta, lam)`` for a query matrix, floats for a single point.
    """
    X, y = _arm_rows(train, arm, 1)
    src = make_weighter(weights, X, y, forest_params) if y.size > 1 else None
    xq = np.atleast_2d(np.asarray(x, dtype=float))
    W = src.weights(xq) if src is not None else np.ones((xq.shape[0], 1))
    R, beta, lam = weighted_evar_rows(y, W, delta)
    if np.asarray(x).ndim <= 1:
        return float(R[0]), float(beta[0]), float(lam[0])
    return R, beta, lam


def make_weighter(kind: str, X, y, forest_params: ForestParams | None = None):
    if kind == "kernel":
        return KernelWeighter(X)
    if kind == "forest":
        return fit_forest(X, y, forest_params)
    raise ConfigurationError(f"unknown weight source {kind!r}")


# --------------------------------------------------------------------------
# arm-level statistic models: evaluate(X) -> (kappa, h)
# --------------------------------------------------------------------------

@dataclass
class WeightedStatisticModel:
    """Statistic of the locally weighted arm outcome distribution.

    ``kind`` is one of ``mean``, ``quantile``, ``superquantile``, ``klrisk``.
    """

    source: object
    values: np.ndarray
    kind: str
    tau: float | None = None
    delta: float | None = None

    def evaluate(self, X):
        W = self.source.weights(np.atleast_2d(X))
        if self.kind == "mean":
            return weighted_mean_rows(self.values, W), np.empty((W.shape[0], 0))
        if self.kind == "quantile":
            return weighted_quantile_rows(self.values, W, self.tau), np.empty((W.shape[0], 0))
        if self.kind == "superquantile":
            mu, q = weighted_superquantile_rows(self.values, W, self.tau)
            return mu, q[:, None]
        R, beta, lam = weighted_evar_rows(self.values, W, self.delta)
        return R, np.column_stack([beta, lam])

    def predict(self, X):
        return self.evaluate(X)[0]

    __call__ = predict


def fit_weighted_quantile(kind: str, forest_params: ForestParams | None = None):
    """Quantile learner ``(X, y, tau) -> predictor`` from locality weights."""
    def fit(X, y, tau):
        return WeightedStatisticModel(make_weighter(kind, X, y, forest_params), np.asarray(y, float),
                                      "quantile", tau=tau)
    return fit


def linear_quantile_learner(X, y, tau):
    return fit_linear_quantile(X, y, tau)
