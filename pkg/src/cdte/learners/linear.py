"""Linear first/second-stage learners: OLS, logistic (IRLS) and linear quantile."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

from ..errors import PreconditionError, SingularDesignError

PROPENSITY_CLIP = 0.01


def _augment(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(X.shape[0]), X])


@dataclass(frozen=True)
class LinearModel:
    """``predict(x) = [1, x] @ coef``."""

    coef: np.ndarray
    n_train: int

    @property
    def d(self) -> int:
        return self.coef.size - 1

    def predict(self, X) -> np.ndarray:
        return _augment(X) @ self.coef

    __call__ = predict


def lstsq_qr(Phi, y, names=None) -> np.ndarray:
    """Least squares through a column-pivoted QR; raises on rank deficiency.

    The column reported is the first pivot whose diagonal of ``R`` falls
    below ``max(n, p) * eps * |R_00|``, i.e. the column the factorization
    found to be (numerically) spanned by the others.
    """
    Phi = np.asarray(Phi, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = Phi.shape
    if n <= p:
        raise SingularDesignError(f"need n > p for least squares, got n={n}, p={p}")
    Q, R, piv = scipy.linalg.qr(Phi, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    bad = np.flatnonzero(diag <= max(tol, 1e-300))
    if bad.size:
        col = int(piv[bad[0]])
        label = names[col] if names is not None else f"column {col}"
        raise SingularDesignError(f"design matrix is rank deficient; offending column: {label}")
    z = scipy.linalg.solve_triangular(R, Q.T @ y)
    coef = np.empty(p)
    coef[piv] = z
    return coef


def fit_ols(X, y, names=None) -> LinearModel:
    """Ordinary least squares with an intercept.

    ``names`` (length ``d``) label the covariates in singular-design errors;
    the intercept is reported as ``"intercept"``.
    """
    Phi = _augment(X)
    labels = None if names is None else ["intercept", *names]
    if labels is None:
        labels = ["intercept"] + [f"x{j}" for j in range(Phi.shape[1] - 1)]
    coef = lstsq_qr(Phi, y, labels)
    return LinearModel(coef, Phi.shape[0])


@dataclass(frozen=True)
class LogisticModel:
    coef: np.ndarray
    n_train: int
    n_iter: int
    converged: bool
    clip: float = PROPENSITY_CLIP

    def predict_proba_raw(self, X) -> np.ndarray:
        return expit(_augment(X) @ self.coef)

    def predict_proba(self, X) -> np.ndarray:
        return np.clip(self.predict_proba_raw(X), self.clip, 1.0 - self.clip)

    __call__ = predict_proba

    def clip_count(self, X) -> int:
        p = self.predict_proba_raw(X)
        return int(np.sum((p < self.clip) | (p > 1.0 - self.clip)))


def _loglik(eta, a):
    # sum a*eta - log(1 + e^eta), overflow safe
    return float(np.sum(a * eta - np.logaddexp(0.0, eta)))


def fit_logistic(X, a, max_iter: int = 100, tol: float = 1e-8) -> LogisticModel:
    """Unpenalized logistic regression by iteratively reweighted least squares.

    Stops when the relative change of the log-likelihood drops below ``tol``
    or after ``max_iter`` Newton steps.  A coefficient norm above 1e3 signals
    (quasi-)complete separation: a warning is issued and the fit is returned
    as is, with probabilities clipped to ``[0.01, 0.99]`` at prediction.
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0 or np.all(a == a[0]):
        raise PreconditionError("logistic regression needs both classes present")
    Phi = _augment(X)
    coef = np.zeros(Phi.shape[1])
    eta = Phi @ coef
    ll = _loglik(eta, a)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        w = np.maximum(p * (1.0 - p), 1e-12)
        # Newton step solves (Phi' W Phi) step = Phi' (a - p)
        H = Phi.T @ (Phi * w[:, None])
        g = Phi.T @ (a - p)
        try:
            step = scipy.linalg.solve(H, g, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        coef = coef + step
        eta = Phi @ coef
        new_ll = _loglik(eta, a)
        if abs(new_ll - ll) <= tol * max(abs(ll), 1e-12):
            ll = new_ll
            converged = True
            break
        ll = new_ll
        if np.linalg.norm(coef) > 1e3:
            break
    if np.linalg.norm(coef) > 1e3:
        warnings.warn("logistic regression: coefficient norm exceeds 1e3, classes look separated",
                      RuntimeWarning, stacklevel=2)
    return LogisticModel(coef, Phi.shape[0], it, converged)


@dataclass(frozen=True)
class ConstantPropensity:
    p: float

    def predict_proba(self, X) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], float(self.p))

    __call__ = predict_proba

    def clip_count(self, X) -> int:
        return 0


def fit_linear_quantile(X, y, tau: float) -> LinearModel:
    """Unpenalized linear quantile regression (check-loss minimization, HiGHS)."""
    from sklearn.linear_model import QuantileRegressor

    X = np.asarray(X, dtype=float)
    model = QuantileRegressor(quantile=tau, alpha=0.0, solver="highs").fit(X, np.asarray(y, dtype=float))
    return LinearModel(np.concatenate([[model.intercept_], model.coef_]), X.shape[0])
