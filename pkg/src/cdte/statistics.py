"""Moment-defined distributional statistics.

Each statistic ``kappa`` is (part of) the root of a moment equation
``E[rho(Y, kappa, h)] = 0`` with ``m`` auxiliary parameters ``h``.  This module
holds the moment functions, the debiasing vector ``alpha`` (first row of the
inverse Jacobian of the conditional moment), and weighted empirical
estimators for every statistic.

Every weighted estimator comes in a single-distribution form and a ``*_rows``
form taking a ``(m, n)`` weight matrix, one locality distribution per row.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError
from .optimize import golden_section_log

EXP_CLAMP = 700.0
# relative slack for the CDF >= tau comparison; absorbs cumulative-sum rounding
_CDF_SLACK = 1e-12


class Kind(str, enum.Enum):
    MEAN = "mean"
    QUANTILE = "quantile"
    SUPERQUANTILE = "superquantile"
    KLRISK = "klrisk"


@dataclass(frozen=True)
class StatisticSpec:
    kind: Kind
    tau: float | None = None
    delta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind in (Kind.QUANTILE, Kind.SUPERQUANTILE):
            if self.tau is None or not (0.0 < self.tau < 1.0):
                raise DomainError(f"tau must lie in (0, 1), got {self.tau!r}")
        elif self.tau is not None:
            raise DomainError(f"tau is not a parameter of {self.kind.value}")
        if self.kind is Kind.KLRISK:
            if self.delta is None or not (self.delta >= 0.0) or math.isinf(self.delta):
                raise DomainError(f"delta must be a finite value >= 0, got {self.delta!r}")
        elif self.delta is not None:
            raise DomainError(f"delta is not a parameter of {self.kind.value}")

    @classmethod
    def mean(cls):
        return cls(Kind.MEAN)

    @classmethod
    def quantile(cls, tau):
        return cls(Kind.QUANTILE, tau=tau)

    @classmethod
    def superquantile(cls, tau):
        return cls(Kind.SUPERQUANTILE, tau=tau)

    @classmethod
    def klrisk(cls, delta):
        return cls(Kind.KLRISK, delta=delta)

    @property
    def m(self) -> int:
        """Number of auxiliary parameters ``h``."""
        return {Kind.MEAN: 0, Kind.QUANTILE: 0, Kind.SUPERQUANTILE: 1, Kind.KLRISK: 2}[self.kind]

    @property
    def name(self) -> str:
        return {Kind.MEAN: "CATE", Kind.QUANTILE: "CQTE",
                Kind.SUPERQUANTILE: "CSQTE", Kind.KLRISK: "CKLRTE"}[self.kind]


@dataclass(frozen=True)
class NuisanceValues:
    """Point value of ``(kappa, h)``.

    ``h`` is ``()`` for Mean/Quantile, ``(q,)`` for SuperQuantile and
    ``(beta, lambda)`` for KLRisk.
    """

    kappa: float
    h: tuple = ()


# --------------------------------------------------------------------------
# f-divergence conjugates
# --------------------------------------------------------------------------

class KLDivergence:
    """``f(x) = x log x``; convex conjugate ``f*(t) = exp(t - 1)``.

    Other f-divergences can be plugged into :func:`dual_objective` by
    providing the same three methods.
    """

    name = "kl"

    @staticmethod
    def conjugate(t):
        return np.exp(np.clip(t - 1.0, -EXP_CLAMP, EXP_CLAMP))

    conjugate_prime = conjugate

    @staticmethod
    def clamped(t):
        return np.abs(np.asarray(t, dtype=float) - 1.0) > EXP_CLAMP


KL = KLDivergence()


def _check_beta(beta):
    beta = np.asarray(beta, dtype=float)
    if np.any(~(beta > 0)):
        raise DomainError("beta must be > 0")
    return beta


def dual_objective(y, beta, lam, delta, div=KL):
    """``delta*beta + lam + beta * f*((y - lam) / beta)``."""
    beta = _check_beta(beta)
    t = (np.asarray(y, dtype=float) - lam) / beta
    return delta * beta + lam + beta * div.conjugate(t)


def dual_objective_kl(y, beta, lam, delta):
    """KL dual objective ``delta*beta + lam + beta*exp((y - lam)/beta - 1)``.

    The exponent is clamped to +-700; use :func:`kl_clamp_count` to count
    clamped evaluations.
    """
    out = dual_objective(y, beta, lam, delta, KL)
    return float(out) if np.ndim(out) == 0 else out


def kl_clamp_count(y, beta, lam) -> int:
    beta = _check_beta(beta)
    t = (np.asarray(y, dtype=float) - lam) / beta
    return int(np.sum(KL.clamped(t)))


def _dual_grad(y, beta, lam, delta, div=KL):
    t = (y - lam) / beta
    fp = div.conjugate_prime(t)
    d_beta = delta + div.conjugate(t) - t * fp
    d_lam = 1.0 - fp
    return d_beta, d_lam


# --------------------------------------------------------------------------
# moment function and debiasing vector
# --------------------------------------------------------------------------

def rho_array(spec: StatisticSpec, y, kappa, h=None):
    """Vectorized moment function; returns shape ``(n, m+1)``.

    ``h`` has shape ``(n, m)`` (ignored when ``m == 0``).
    """
    y = np.asarray(y, dtype=float)
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), y.shape)
    kind = spec.kind
    if kind is Kind.MEAN:
        return (y - kappa)[:, None] if y.ndim else np.array([y - kappa])
    if kind is Kind.QUANTILE:
        r = spec.tau - (y <= kappa)
        return r[:, None] if y.ndim else np.array([r])
    h = np.asarray(h, dtype=float)
    if h.ndim == 1 and y.ndim == 0:
        h = h[None, :]
    if kind is Kind.SUPERQUANTILE:
        q = np.reshape(h[..., 0], y.shape)
        r0 = y * (y >= q) / (1.0 - spec.tau) - kappa
        r1 = spec.tau - (y <= q)
        return np.stack([r0, r1], axis=-1) if y.ndim else np.array([r0, r1], dtype=float)
    beta = np.reshape(h[..., 0], y.shape)
    lam = np.reshape(h[..., 1], y.shape)
    beta = _check_beta(beta)
    mval = dual_objective(y, beta, lam, spec.delta)
    d_beta, d_lam = _dual_grad(y, beta, lam, spec.delta)
    out = [mval - kappa, d_beta, d_lam]
    return np.stack(out, axis=-1) if y.ndim else np.array(out, dtype=float)


def rho(spec: StatisticSpec, y: float, nu: NuisanceValues) -> np.ndarray:
    """Moment function at a single observation; length ``m + 1``."""
    if len(nu.h) != spec.m:
        raise DomainError(f"{spec.kind.value} expects {spec.m} auxiliary values, got {len(nu.h)}")
    return rho_array(spec, float(y), nu.kappa, np.asarray(nu.h, dtype=float))


def alpha_array(spec: StatisticSpec, n, h=None, density=None):
    """Debiasing vectors for ``n`` rows; shape ``(n, m+1)``.

    SuperQuantile uses ``(-1, q/(1-tau))``: the first row of the inverse of
    ``[[-1, -q f/(1-tau)], [0, -f]]``.  It is the sign under which the generic
    pseudo-outcome reduces to the closed-form superquantile pseudo-outcome.
    """
    kind = spec.kind
    if kind is Kind.MEAN:
        return -np.ones((n, 1))
    if kind is Kind.QUANTILE:
        if density is None:
            raise DomainError("quantile alpha needs the density at the quantile")
        f = np.broadcast_to(np.asarray(density, dtype=float), (n,))
        if np.any(~(f > 0)):
            raise DomainError("density at the quantile must be > 0")
        return (-1.0 / f)[:, None]
    if kind is Kind.SUPERQUANTILE:
        q = np.reshape(np.asarray(h, dtype=float)[..., 0], (n,))
        return np.column_stack([-np.ones(n), q / (1.0 - spec.tau)])
    out = np.zeros((n, 3))
    out[:, 0] = -1.0
    return out


def alpha_vector(spec: StatisticSpec, nu: NuisanceValues, density_at_q: float | None = None) -> np.ndarray:
    h = np.asarray(nu.h, dtype=float).reshape(1, -1) if spec.m else None
    return alpha_array(spec, 1, h, density_at_q)[0]


# --------------------------------------------------------------------------
# weighted empirical estimators
# --------------------------------------------------------------------------

def _normalize(values, weights):
    values = np.asarray(values, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if values.shape != weights.shape or values.size == 0:
        raise DomainError("values and weights must be non-empty and equal length")
    if not np.all(np.isfinite(values)):
        raise DomainError("values must be finite")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise DomainError("weights must be finite and nonnegative")
    total = weights.sum()
    if not total > 0:
        raise DomainError("weights must have a positive sum")
    return values, weights / total


def weighted_quantile(values, weights, tau: float) -> float:
    """Smallest ``v`` whose weighted CDF ``F(v) = sum_{values <= v} w`` reaches ``tau``."""
    return float(weighted_quantile_rows(values, np.asarray(weights, dtype=float)[None, :], tau)[0])


def _check_rows(values, W):
    values = np.asarray(values, dtype=float).ravel()
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[1] != values.size or values.size == 0:
        raise DomainError("weight matrix must have shape (m, len(values))")
    if not np.all(np.isfinite(values)):
        raise DomainError("values must be finite")
    if np.any(W < 0):
        raise DomainError("weights must be nonnegative")
    tot = W.sum(axis=1)
    if np.any(~(tot > 0)):
        raise DomainError("every weight row must have a positive sum")
    return values, W / tot[:, None]


def weighted_quantile_rows(values, W, tau: float) -> np.ndarray:
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau!r}")
    values, W = _check_rows(values, W)
    order = np.argsort(values, kind="stable")
    cdf = np.cumsum(W[:, order], axis=1)
    hit = cdf >= tau * (1.0 - _CDF_SLACK)
    idx = np.argmax(hit, axis=1)
    return values[order][idx]


def weighted_superquantile(values, weights, tau: float) -> tuple[float, float]:
    """Return ``(mu, q)``: ``q`` the weighted tau-quantile and
    ``mu = q + sum_i w_i max(v_i - q, 0) / (1 - tau)``, the minimum of the
    Rockafellar-Uryasev objective.
    """
    mu, q = weighted_superquantile_rows(values, np.asarray(weights, dtype=float)[None, :], tau)
    return float(mu[0]), float(q[0])


def weighted_superquantile_rows(values, W, tau: float):
    values, Wn = _check_rows(values, W)
    q = weighted_quantile_rows(values, Wn, tau)
    excess = np.maximum(values[None, :] - q[:, None], 0.0)
    mu = q + np.sum(Wn * excess, axis=1) / (1.0 - tau)
    return np.maximum(mu, q), q


@dataclass(frozen=True)
class EVaRResult:
    R: float
    beta: float
    lam: float


_EVAR_EXTENSIONS = 3


def _evar_objective(values, Wn, vmax, delta):
    # zero-weight entries may exceed vmax; sending them to -inf keeps every term finite
    D = np.where(Wn > 0, values[None, :] - vmax[:, None], -np.inf)

    def g(beta):
        E = D / beta[:, None]
        np.exp(E, out=E)
        s = np.einsum("ij,ij->i", Wn, E)
        return beta * (np.log(s) + delta) + vmax
    return g


def weighted_evar_rows(values, W, delta: float, tol: float = 1e-10, max_iter: int = 200):
    """Batched weighted EVaR.

    Minimizes ``g(beta) = beta * (log sum_i w_i exp(v_i / beta) + delta)`` per
    row by golden-section search in ``log beta`` on ``[range/1e3, range*1e3]``,
    ``range`` being the spread of the positively weighted values (floored at
    1e-9).  A minimum on the lower end is searched again up to three times on
    a bracket six decades lower; one still on an end is returned as is (see
    :func:`boundary_rows`).  ``R`` is clipped to ``[weighted mean, max]``, the
    range of the exact EVaR.

    Returns
    -------
    R, beta, lam : ndarray
        ``lam = R - beta * (delta + 1)``.
    """
    return _evar_rows(values, W, delta, tol, max_iter)[:3]


def _evar_rows(values, W, delta, tol, max_iter):
    if not (delta >= 0) or math.isinf(delta):
        raise DomainError(f"delta must be a finite value >= 0, got {delta!r}")
    values, Wn = _check_rows(values, W)
    m = Wn.shape[0]
    pos = Wn > 0
    vmax = np.where(pos, values[None, :], -np.inf).max(axis=1)
    vmin = np.where(pos, values[None, :], np.inf).min(axis=1)
    mean = Wn @ values
    rng = np.maximum(vmax - vmin, 1e-9)
    degenerate = (vmax - vmin) <= 0
    lo, hi = rng / 1e3, rng * 1e3

    R = np.empty(m)
    beta = np.empty(m)
    boundary = np.zeros(m, dtype=bool)
    if delta == 0.0:
        # KL ball of radius 0: the infimum is the beta -> inf limit, the mean
        R[:] = mean
        beta[:] = hi
    else:
        R[degenerate] = vmax[degenerate]
        beta[degenerate] = lo[degenerate]
        todo = np.flatnonzero(~degenerate)
        if todo.size:
            g = _evar_objective(values, Wn[todo], vmax[todo], delta)
            b, val, _, conv, at_lo, at_hi = golden_section_log(g, lo[todo], hi[todo], tol, max_iter)
            if not conv:
                raise NumericalError("EVaR golden-section search hit the iteration cap", last=b)
            # large delta pushes the minimizer toward 0; follow it down a few decades
            for _ in range(_EVAR_EXTENSIONS):
                redo = np.flatnonzero(at_lo)
                if not redo.size:
                    break
                sub = todo[redo]
                g2 = _evar_objective(values, Wn[sub], vmax[sub], delta)
                b2, v2, _, conv, lo2, _ = golden_section_log(g2, lo[sub] / 1e6, lo[sub], tol, max_iter)
                if not conv:
                    raise NumericalError("EVaR golden-section search hit the iteration cap", last=b2)
                better = v2 < val[redo]
                b[redo] = np.where(better, b2, b[redo])
                val[redo] = np.where(better, v2, val[redo])
                at_lo[redo] = better & lo2
                lo[sub] = lo[sub] / 1e6
            R[todo], beta[todo] = val, b
            boundary[todo] = at_lo | at_hi
        R = np.clip(R, mean, vmax)
    lam = R - beta * (delta + 1.0)
    return R, beta, lam, boundary


def boundary_rows(values, W, delta: float) -> np.ndarray:
    """Flags rows whose EVaR minimizer sits on an end of the search bracket."""
    return _evar_rows(values, W, delta, 1e-10, 200)[3]


def weighted_evar(values, weights, delta: float, tol: float = 1e-10,
                  max_iter: int = 200) -> EVaRResult:
    """Entropic value-at-risk of a weighted empirical distribution.

    A point mass returns its value exactly, and ``delta == 0`` returns the
    weighted mean exactly.
    """
    R, b, lam = weighted_evar_rows(values, np.asarray(weights, dtype=float)[None, :], delta, tol, max_iter)
    return EVaRResult(float(R[0]), float(b[0]), float(lam[0]))


def weighted_mean_rows(values, W):
    values, Wn = _check_rows(values, W)
    return Wn @ values


def pinball_loss(y, q, tau: float) -> float:
    u = np.asarray(y, dtype=float) - np.asarray(q, dtype=float)
    return float(np.mean(np.maximum(tau * u, (tau - 1.0) * u)))
