"""Gaussian product-kernel locality weights with Silverman bandwidths."""

from __future__ import annotations

import warnings

import numpy as np

from ..errors import ConfigurationError


def silverman_bandwidth(X) -> np.ndarray:
    """Per-dimension rule of thumb ``(4/(d+2))^(1/(d+4)) n^(-1/(d+4)) sd_j``.

    Zero-variance dimensions get bandwidth 0 (callers skip them).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n < 2:
        raise ConfigurationError("kernel bandwidth needs n >= 2")
    sd = X.std(axis=0, ddof=1)
    return (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4)) * sd


def kernel_weights(X_train, x, bandwidth=None) -> np.ndarray:
    """Normalized Gaussian weights of the training rows around each query.

    Parameters
    ----------
    X_train : (n, d) array
    x : (d,) or (m, d) array
        Query point(s).
    bandwidth : None, "silverman" or array of length d
        ``None`` and ``"silverman"`` both use :func:`silverman_bandwidth`.

    Returns
    -------
    ndarray
        ``(n,)`` for a single query, else ``(m, n)``; rows sum to one.
    """
    return KernelWeighter(X_train, bandwidth).weights(x)


class KernelWeighter:
    """Kernel weights against a fixed training design."""

    def __init__(self, X_train, bandwidth=None):
        X = np.asarray(X_train, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] < 2:
            raise ConfigurationError("kernel weights need n >= 2 training rows")
        if bandwidth is None or (isinstance(bandwidth, str) and bandwidth == "silverman"):
            h = silverman_bandwidth(X)
        else:
            h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (X.shape[1],)).copy()
        keep = h > 0
        if not keep.all():
            warnings.warn(
                f"kernel weights: skipping zero-variance dimension(s) {np.flatnonzero(~keep).tolist()}",
                RuntimeWarning, stacklevel=2,
            )
        self.X = X
        self.h = h
        self._keep = keep
        # centering keeps the distance expansion accurate under translation
        self._center = X[:, keep].mean(axis=0)
        self._Z = (X[:, keep] - self._center) / h[keep]
        self._sq = np.sum(self._Z ** 2, axis=1)
        self.n_train = X.shape[0]

    def weights(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        zq = (x[:, self._keep] - self._center) / self.h[self._keep]
        # squared distance via the expansion; clipped for rounding
        d2 = np.sum(zq ** 2, axis=1)[:, None] + self._sq[None, :] - 2.0 * zq @ self._Z.T
        logw = -0.5 * np.maximum(d2, 0.0)
        logw -= logw.max(axis=1, keepdims=True)
        W = np.exp(logw)
        W /= W.sum(axis=1, keepdims=True)
        return W[0] if single else W
