"""Debiased pseudo-outcomes.

The generic construction

    psi = kappa_1(x) - kappa_0(x)
          - (A - e(x)) / (e(x) (1 - e(x))) * alpha_A(x)' rho(Y, nu_A(x))

is the single source of truth; the closed forms for quantile, superquantile
and KL-risk effects are kept as independent cross-checks and fast paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .dataset import Dataset, Observation
from .errors import DomainError, NuisanceError
from .statistics import (
    Kind,
    NuisanceValues,
    StatisticSpec,
    alpha_array,
    dual_objective_kl,
    rho_array,
)


class ArmNuisance(Protocol):
    """Evaluates ``(kappa, h, alpha)`` for one arm at a batch of covariates."""

    def evaluate(self, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]: ...


@dataclass
class ArmEvaluator:
    """Arm nuisances assembled from a statistic model and optional density.

    ``model.evaluate(X)`` must return ``(kappa, h)`` with ``h`` of shape
    ``(m, spec.m)``; ``density`` is required for quantile statistics.
    """

    spec: StatisticSpec
    model: object
    density: Callable | None = None

    def evaluate(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        kappa, h = self.model.evaluate(X)
        kappa = np.asarray(kappa, dtype=float).reshape(-1)
        h = np.asarray(h, dtype=float).reshape(kappa.size, self.spec.m)
        f = None
        if self.spec.kind is Kind.QUANTILE:
            if self.density is None:
                raise NuisanceError("quantile statistic needs a density nuisance", nuisance="density")
            f = np.asarray(self.density(X), dtype=float)
            _check_finite(f, "density")
        return kappa, h, alpha_array(self.spec, kappa.size, h if self.spec.m else None, f)


@dataclass
class RegressionStatisticModel:
    """``kappa`` from a regressor, with optional auxiliary regressors for ``h``."""

    kappa: Callable
    aux: tuple = ()

    def evaluate(self, X):
        k = np.asarray(self.kappa(X), dtype=float)
        h = np.column_stack([np.asarray(g(X), dtype=float) for g in self.aux]) if self.aux else np.empty((k.size, 0))
        return k, h


@dataclass
class NuisanceSet:
    """Propensity plus per-arm nuisance evaluators for one fold."""

    spec: StatisticSpec
    propensity: Callable
    arms: tuple
    fold: int | None = None
    info: dict = field(default_factory=dict)

    def e(self, X) -> np.ndarray:
        e = np.asarray(self.propensity(np.atleast_2d(X)), dtype=float)
        _check_finite(e, "propensity", self.fold)
        if np.any((e <= 0) | (e >= 1)):
            raise NuisanceError("propensity outside (0, 1)", fold=self.fold, nuisance="propensity")
        return e

    def arm(self, a: int, X):
        kappa, h, alpha = self.arms[a].evaluate(np.atleast_2d(X))
        _check_finite(kappa, f"kappa_{a}", self.fold)
        _check_finite(h, f"h_{a}", self.fold)
        _check_finite(alpha, f"alpha_{a}", self.fold)
        return kappa, h, alpha

    def nu(self, a: int, x) -> NuisanceValues:
        kappa, h, _ = self.arm(a, np.atleast_2d(x))
        return NuisanceValues(float(kappa[0]), tuple(float(v) for v in h[0]))

    def alpha(self, a: int, x) -> np.ndarray:
        return self.arm(a, np.atleast_2d(x))[2][0]

    def plugin(self, X) -> np.ndarray:
        return self.arm(1, X)[0] - self.arm(0, X)[0]


def _check_finite(v, name, fold=None):
    if not np.all(np.isfinite(v)):
        where = f" (fold {fold})" if fold is not None else ""
        raise NuisanceError(f"nuisance {name} produced non-finite values{where}", fold=fold, nuisance=name)


@dataclass(frozen=True)
class PseudoOutcomes:
    """Pseudo-outcomes aligned with dataset rows; ``fold_of[i]`` is the fold
    whose complement fitted the nuisances used for row ``i``."""

    values: np.ndarray
    fold_of: np.ndarray

    def __len__(self):
        return self.values.size


def pseudo_outcome_arrays(spec: StatisticSpec, a, y, e, kappa0, kappa1, h_a, alpha_a):
    """Vectorized generic pseudo-outcome from evaluated nuisances.

    ``h_a`` and ``alpha_a`` are the treated-arm values already selected by
    ``a`` row-wise.
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    kappa_a = np.where(a == 1, kappa1, kappa0)
    r = rho_array(spec, y, kappa_a, h_a if spec.m else None)
    weight = (a - e) / (e * (1.0 - e))
    return kappa1 - kappa0 - weight * np.sum(alpha_a * r, axis=1)


def pseudo_outcomes(data: Dataset, nuis: NuisanceSet) -> np.ndarray:
    """Generic pseudo-outcome for every row of ``data``."""
    X = data.X
    e = nuis.e(X)
    k0, h0, al0 = nuis.arm(0, X)
    k1, h1, al1 = nuis.arm(1, X)
    t = (data.a == 1)[:, None]
    h_a = np.where(t, h1, h0)
    alpha_a = np.where(t, al1, al0)
    psi = pseudo_outcome_arrays(nuis.spec, data.a, data.y, e, k0, k1, h_a, alpha_a)
    _check_finite(psi, "pseudo-outcome", nuis.fold)
    return psi


def pseudo_outcome(z: Observation, nuis: NuisanceSet, spec: StatisticSpec | None = None) -> float:
    """Generic pseudo-outcome at a single observation."""
    spec = spec or nuis.spec
    x = np.asarray(z.x, dtype=float)[None, :]
    e = nuis.e(x)
    k0, h0, al0 = nuis.arm(0, x)
    k1, h1, al1 = nuis.arm(1, x)
    h_a, al_a = (h1, al1) if z.a == 1 else (h0, al0)
    return float(pseudo_outcome_arrays(spec, [z.a], [z.y], e, k0, k1, h_a, al_a)[0])


def generic_from_values(spec: StatisticSpec, a, y, e, nu0: NuisanceValues, nu1: NuisanceValues,
                        alpha0, alpha1) -> float:
    """Generic pseudo-outcome from explicit nuisance values at one point."""
    nu_a, al = (nu1, alpha1) if a == 1 else (nu0, alpha0)
    h = np.asarray(nu_a.h, dtype=float)[None, :] if spec.m else None
    return float(pseudo_outcome_arrays(spec, [a], [y], np.array([e]), np.array([nu0.kappa]),
                                       np.array([nu1.kappa]), h, np.asarray(al, float)[None, :])[0])


# --------------------------------------------------------------------------
# closed forms
# --------------------------------------------------------------------------

def _ipw(a, e):
    return (a - e) / (e * (1.0 - e))


def pseudo_aipw(a, y, e, m0, m1):
    """Doubly robust mean pseudo-outcome ``m1 - m0 + (A-e)/(e(1-e)) (Y - m_A)``."""
    a = np.asarray(a, dtype=float)
    return m1 - m0 + _ipw(a, e) * (y - np.where(a == 1, m1, m0))


def pseudo_cqte(a, y, e, q0, q1, f0, f1, tau):
    """``q1 - q0 + (A-e)/(e(1-e)) (tau - I[Y <= q_A]) / f_A``."""
    a = np.asarray(a, dtype=float)
    f_a = np.where(a == 1, f1, f0)
    if np.any(~(np.asarray(f_a) > 0)):
        raise DomainError("density must be > 0")
    q_a = np.where(a == 1, q1, q0)
    return q1 - q0 + _ipw(a, e) * (tau - (y <= q_a)) / f_a


def pseudo_csqte(a, y, e, mu0, mu1, q0, q1, tau):
    """``mu1 - mu0 + (A-e)/(e(1-e)) (q_A + (Y - q_A) I[Y >= q_A]/(1-tau) - mu_A)``."""
    a = np.asarray(a, dtype=float)
    q_a = np.where(a == 1, q1, q0)
    mu_a = np.where(a == 1, mu1, mu0)
    return mu1 - mu0 + _ipw(a, e) * (q_a + (y - q_a) * (y >= q_a) / (1.0 - tau) - mu_a)


def pseudo_cklrte(a, y, e, R0, R1, beta0, beta1, lambda0, lambda1, delta):
    """``R1 - R0 + (A-e)/(e(1-e)) (m(Y, beta_A, lambda_A; delta) - R_A)``."""
    a = np.asarray(a, dtype=float)
    beta_a = np.where(a == 1, beta1, beta0)
    if np.any(~(beta_a > 0)):
        raise DomainError("beta must be > 0")
    lam_a = np.where(a == 1, lambda1, lambda0)
    R_a = np.where(a == 1, R1, R0)
    return R1 - R0 + _ipw(a, e) * (dual_objective_kl(y, beta_a, lam_a, delta) - R_a)
