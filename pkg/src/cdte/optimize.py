"""Golden-section minimization of convex scalar objectives on a log scale.

The same routine backs the single-problem API (:func:`minimize_scalar`) and
the batched EVaR solver, which minimizes one objective per row of a weight
matrix simultaneously.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalError

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ScalarConvexProblem:
    objective: Callable[[float], float]
    bracket: tuple[float, float]
    tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        lo, hi = self.bracket
        if not (0 < lo < hi):
            raise ValueError(f"bracket must satisfy 0 < lo < hi, got {self.bracket}")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("max_iter must be >= 1 and tol > 0")


@dataclass(frozen=True)
class ScalarResult:
    argmin: float
    min_value: float
    iters: int
    converged: bool
    at_boundary: bool


def golden_section_log(fun, lo, hi, tol=1e-10, max_iter=200):
    """Batched golden-section search over ``beta`` in ``[lo, hi]`` (log scale).

    Parameters
    ----------
    fun : callable
        Maps an array of ``beta`` values (shape of ``lo``) to objective values.
        Each entry is an independent problem.
    lo, hi : array_like
        Positive bracket endpoints, broadcast to a common shape.
    tol : float
        Stop once every log-bracket is narrower than ``tol`` (a relative width
        in ``beta``).
    max_iter : int
        Hard cap on shrink steps.

    Returns
    -------
    beta, value, iters, converged, at_lo, at_hi : arrays / int
        ``at_lo``/``at_hi`` flag problems whose minimum sits on a bracket end.
    """
    a = np.log(np.asarray(lo, dtype=float))
    b = np.log(np.asarray(hi, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    a, b = a.astype(float).copy(), b.astype(float).copy()
    a0, b0 = a.copy(), b.copy()

    def f(t):
        v = np.asarray(fun(np.exp(t)), dtype=float)
        if not np.all(np.isfinite(v)):
            bad = np.flatnonzero(~np.isfinite(v).ravel())[0]
            raise NumericalError(
                f"non-finite objective at beta={float(np.exp(t).ravel()[bad])!r}",
                last=float(np.exp(t).ravel()[bad]),
            )
        return v

    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    best_t = np.where(fc <= fd, c, d)
    best_f = np.minimum(fc, fd)
    iters = 0
    while iters < max_iter:
        active = (b - a) > tol
        if not active.any():
            break
        iters += 1
        left = fc <= fd
        # left: minimum lies in [a, d]; right: in [c, b]
        nb = np.where(left, d, b)
        na = np.where(left, a, c)
        nc = np.where(left, nb - INV_PHI * (nb - na), d)
        nd = np.where(left, c, na + INV_PHI * (nb - na))
        t_new = np.where(left, nc, nd)
        f_new = f(t_new)
        nfc = np.where(left, f_new, fd)
        nfd = np.where(left, fc, f_new)
        a, b = np.where(active, na, a), np.where(active, nb, b)
        c, d = np.where(active, nc, c), np.where(active, nd, d)
        fc, fd = np.where(active, nfc, fc), np.where(active, nfd, fd)
        improve = active & (f_new < best_f)
        best_t = np.where(improve, t_new, best_t)
        best_f = np.where(improve, f_new, best_f)

    converged = bool(np.all((b - a) <= tol))
    # endpoints are never probed by the interior search; compare explicitly
    f_lo, f_hi = f(a0), f(b0)
    at_lo = f_lo <= best_f
    best_t = np.where(at_lo, a0, best_t)
    best_f = np.where(at_lo, f_lo, best_f)
    at_hi = ~at_lo & (f_hi <= best_f)
    best_t = np.where(at_hi, b0, best_t)
    best_f = np.where(at_hi, f_hi, best_f)
    edge = 2.0 * max(tol, 1e-15)
    at_lo = at_lo | (best_t - a0 <= edge)
    at_hi = at_hi | (b0 - best_t <= edge)
    return np.exp(best_t), best_f, iters, converged, at_lo, at_hi


def minimize_scalar(problem: ScalarConvexProblem) -> ScalarResult:
    """Minimize a convex objective of ``beta > 0`` over ``problem.bracket``.

    A minimum on either end of the bracket is returned with
    ``at_boundary=True`` rather than raising.
    """
    def vec(beta):
        return np.array([problem.objective(float(b)) for b in np.ravel(beta)]).reshape(np.shape(beta))

    lo, hi = problem.bracket
    beta, val, iters, conv, at_lo, at_hi = golden_section_log(
        vec, np.array([lo]), np.array([hi]), problem.tol, problem.max_iter
    )
    return ScalarResult(float(beta[0]), float(val[0]), iters, conv, bool(at_lo[0] or at_hi[0]))
