"""Finite-difference derivatives of the full retrain pipeline.

Every function here perturbs one (or two) training-input coordinates,
retrains from scratch and differences the posterior. That is slow but
trusts nothing except train/predict, which makes it the reference the
closed-form tensor assembly is audited against.

Central differences: first order O(h^2), second order O(h^2) via the
3-point (diagonal) and 4-point (mixed) stencils.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .gp import GPRegressor, train
from .kernel import KernelParams

__all__ = [
    "fd_mean_jacobian",
    "fd_mean_hessian_diag",
    "fd_mean_hessian_full",
    "fd_cov_jacobian",
    "fd_cov_hessian_diag",
    "relative_error",
]


def _pipeline(params: KernelParams, X: np.ndarray, y: np.ndarray,
              queries: np.ndarray, want: str) -> Callable[[np.ndarray], np.ndarray]:
    def run(Xmod: np.ndarray) -> np.ndarray:
        pred = train(params, Xmod, y).predict_full(queries)
        return pred.mean if want == "mean" else pred.covariance
    return run


def _fd_jacobian(f, X: np.ndarray, step: float, out_shape) -> np.ndarray:
    n, p = X.shape
    out = np.zeros(out_shape)
    for i in range(n):
        for j in range(p):
            Xp = X.copy(); Xp[i, j] += step
            Xm = X.copy(); Xm[i, j] -= step
            out[..., i, j] = (f(Xp) - f(Xm)) / (2.0 * step)
    return out


def _fd_hessian_diag(f, X: np.ndarray, step: float, lead_shape) -> np.ndarray:
    n, p = X.shape
    f0 = f(X)
    out = np.zeros(lead_shape + (n, p, p))
    for i in range(n):
        for j in range(p):
            Xp = X.copy(); Xp[i, j] += step
            Xm = X.copy(); Xm[i, j] -= step
            out[..., i, j, j] = (f(Xp) - 2.0 * f0 + f(Xm)) / step**2
            for l in range(j + 1, p):
                Xpp = X.copy(); Xpp[i, j] += step; Xpp[i, l] += step
                Xpm = X.copy(); Xpm[i, j] += step; Xpm[i, l] -= step
                Xmp = X.copy(); Xmp[i, j] -= step; Xmp[i, l] += step
                Xmm = X.copy(); Xmm[i, j] -= step; Xmm[i, l] -= step
                mixed = (f(Xpp) - f(Xpm) - f(Xmp) + f(Xmm)) / (4.0 * step**2)
                out[..., i, j, l] = mixed
                out[..., i, l, j] = mixed
    return out


def fd_mean_jacobian(params: KernelParams, X, y, queries, step: float = 1e-5) -> np.ndarray:
    """d(mean)/d(training inputs), shape (t, n, p)."""
    X = np.asarray(X, dtype=float)
    t = np.atleast_2d(queries).shape[0]
    f = _pipeline(params, X, y, queries, "mean")
    return _fd_jacobian(f, X, step, (t,) + X.shape)


def fd_cov_jacobian(params: KernelParams, X, y, queries, step: float = 1e-5) -> np.ndarray:
    """d(covariance)/d(training inputs), shape (t, t, n, p)."""
    X = np.asarray(X, dtype=float)
    t = np.atleast_2d(queries).shape[0]
    f = _pipeline(params, X, y, queries, "cov")
    return _fd_jacobian(f, X, step, (t, t) + X.shape)


def fd_mean_hessian_diag(params: KernelParams, X, y, queries, step: float = 1e-4) -> np.ndarray:
    """Per-point Hessian blocks of the mean, shape (t, n, p, p)."""
    X = np.asarray(X, dtype=float)
    t = np.atleast_2d(queries).shape[0]
    f = _pipeline(params, X, y, queries, "mean")
    return _fd_hessian_diag(f, X, step, (t,))


def fd_cov_hessian_diag(params: KernelParams, X, y, queries, step: float = 1e-4) -> np.ndarray:
    """Per-point Hessian blocks of the covariance, shape (t, t, n, p, p)."""
    X = np.asarray(X, dtype=float)
    t = np.atleast_2d(queries).shape[0]
    f = _pipeline(params, X, y, queries, "cov")
    return _fd_hessian_diag(f, X, step, (t, t))


def fd_mean_hessian_full(params: KernelParams, X, y, queries, step: float = 1e-4) -> np.ndarray:
    """Full Hessian of the mean over all n*p coordinates, shape (t, n*p, n*p)."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    t = np.atleast_2d(queries).shape[0]
    f = _pipeline(params, X, y, queries, "mean")
    f0 = f(X)
    m = n * p
    out = np.zeros((t, m, m))
    flat = [(i, j) for i in range(n) for j in range(p)]
    for a, (i, j) in enumerate(flat):
        Xp = X.copy(); Xp[i, j] += step
        Xm = X.copy(); Xm[i, j] -= step
        out[:, a, a] = (f(Xp) - 2.0 * f0 + f(Xm)) / step**2
        for b in range(a + 1, m):
            i2, j2 = flat[b]
            Xpp = X.copy(); Xpp[i, j] += step; Xpp[i2, j2] += step
            Xpm = X.copy(); Xpm[i, j] += step; Xpm[i2, j2] -= step
            Xmp = X.copy(); Xmp[i, j] -= step; Xmp[i2, j2] += step
            Xmm = X.copy(); Xmm[i, j] -= step; Xmm[i2, j2] -= step
            mixed = (f(Xpp) - f(Xpm) - f(Xmp) + f(Xmm)) / (4.0 * step**2)
            out[:, a, b] = mixed
            out[:, b, a] = mixed
    return out


def relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    """Max absolute deviation normalized by the reference's max magnitude.

    Entrywise relative error is meaningless for entries near zero, so the
    whole tensor is normalized by a single scale (standard gradcheck
    practice).
    """
    scale = max(float(np.abs(reference).max()), 1e-12)
    return float(np.abs(analytic - reference).max()) / scale
