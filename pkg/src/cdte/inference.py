"""Best-linear-projection inference with HC1 sandwich standard errors."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .errors import SingularDesignError
from .learners.linear import lstsq_qr


@dataclass(frozen=True)
class FeatureMap:
    """``phi(x) = [1, x[columns]]``, or a custom map whose first output is the intercept.

    Parameters
    ----------
    columns : sequence of int, optional
        Covariate indices kept after the intercept; ``None`` keeps all.
    names : sequence of str, optional
        Labels of the output coordinates (intercept included).
    fn : callable, optional
        Custom ``(m, d) -> (m, p)`` map, overriding ``columns``.
    """

    columns: tuple | None = None
    names: tuple | None = None
    fn: Callable | None = None

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.fn is not None:
            return np.asarray(self.fn(X), dtype=float)
        cols = X if self.columns is None else X[:, list(self.columns)]
        return np.column_stack([np.ones(X.shape[0]), cols])

    def labels(self, p: int) -> list[str]:
        if self.names is not None:
            return list(self.names)
        if self.columns is not None:
            return ["intercept"] + [f"x{j}" for j in self.columns]
        return ["intercept"] + [f"x{j}" for j in range(p - 1)]

    @classmethod
    def select(cls, all_names: Sequence[str], chosen: Sequence[str]) -> "FeatureMap":
        idx = []
        for c in chosen:
            if c not in all_names:
                raise SingularDesignError(f"unknown projection feature {c!r}")
            idx.append(list(all_names).index(c))
        return cls(tuple(idx), ("intercept", *chosen))


@dataclass(frozen=True)
class ProjectionResult:
    """OLS projection of pseudo-outcomes.

    ``cov`` is the estimated covariance of ``gamma_hat`` itself (the
    ``1/n`` scaling of the asymptotic covariance is already applied), so
    ``stderr = sqrt(diag(cov))``.
    """

    gamma_hat: np.ndarray
    cov: np.ndarray
    level: float
    n_used: int
    names: tuple = ()

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))

    @property
    def ci(self) -> np.ndarray:
        """``(p, 2)`` array of lower/upper bounds (normal critical values)."""
        z = norm.ppf(0.5 + self.level / 2.0)
        hw = z * self.stderr
        return np.column_stack([self.gamma_hat - hw, self.gamma_hat + hw])

    def covers(self, j: int, value: float) -> bool:
        lo, hi = self.ci[j]
        return bool(lo <= value <= hi)

    def to_dict(self) -> dict:
        ci = self.ci
        return {
            "coef": self.gamma_hat.tolist(),
            "stderr": self.stderr.tolist(),
            "ci_lower": ci[:, 0].tolist(),
            "ci_upper": ci[:, 1].tolist(),
            "level": self.level,
            "n": self.n_used,
            "names": list(self.names),
            "cov_scale": "covariance of the coefficient estimate (HC1)",
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def hc1_covariance(Phi, resid) -> np.ndarray:
    """``(P'P)^-1 (sum e_i^2 p_i p_i') (P'P)^-1 * n/(n-p)``, symmetrized."""
    n, p = Phi.shape
    bread = np.linalg.inv(Phi.T @ Phi)
    meat = (Phi * resid[:, None] ** 2).T @ Phi
    cov = bread @ meat @ bread * (n / (n - p))
    return 0.5 * (cov + cov.T)


def ols_project(psi, features, level: float = 0.95, names: Sequence[str] = ()) -> ProjectionResult:
    """Regress pseudo-outcomes on a feature matrix whose first column is the intercept."""
    values = getattr(psi, "values", psi)
    y = np.asarray(values, dtype=float)
    Phi = np.asarray(features, dtype=float)
    if Phi.ndim != 2 or Phi.shape[0] != y.size:
        raise SingularDesignError("features must be an (n, p) matrix aligned with the pseudo-outcomes")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    labels = list(names) if names else [f"phi{j}" for j in range(Phi.shape[1])]
    gamma = lstsq_qr(Phi, y, labels)
    cov = hc1_covariance(Phi, y - Phi @ gamma)
    return ProjectionResult(gamma, cov, level, y.size, tuple(labels))


def projection_coef(cdte_fn: Callable, feature_map: FeatureMap, sampler: Callable,
                    n: int = 1_000_000, seed: int = 0, chunk: int = 200_000) -> np.ndarray:
    """Population OLS coefficients of ``cdte_fn(X)`` on ``feature_map(X)``.

    Accumulates the normal equations over ``n`` draws of ``sampler(m, rng)``
    in chunks.
    """
    rng = np.random.default_rng(seed)
    G = None
    b = None
    done = 0
    while done < n:
        m = min(chunk, n - done)
        X = sampler(m, rng)
        P = feature_map(X)
        t = np.asarray(cdte_fn(X), dtype=float)
        G = P.T @ P if G is None else G + P.T @ P
        b = P.T @ t if b is None else b + P.T @ t
        done += m
    return np.linalg.solve(G, b)


def true_projection_coef(spec, feature_map: FeatureMap, dgp, n: int = 1_000_000,
                         seed: int = 0) -> np.ndarray:
    """Oracle projection coefficients of the true effect under ``dgp``."""
    from .sim import sample_covariates, true_cdte

    return projection_coef(lambda X: true_cdte(dgp, spec, X), feature_map,
                           lambda m, rng: sample_covariates(dgp, m, rng), n=n, seed=seed)
