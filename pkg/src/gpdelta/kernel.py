"""Squared-exponential kernel and its closed-form input derivatives.

The kernel is

    k(a, b) = amplitude^2 * exp(-||a - b||^2 / (2 * length_scale^2))

and the derivative helpers differentiate with respect to the *second*
argument ``b`` (the training-input slot), which is the direction needed
when correcting for errors in the training inputs:

    dk/db      = k(a, b) * (a - b) / ls^2
    d2k/db2    = k(a, b) * ((a - b)(a - b)^T / ls^4 - I / ls^2)
    d2k/da db  = -d2k/db2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionError

__all__ = [
    "KernelParams",
    "kernel_eval",
    "kernel_grad_b",
    "kernel_hess_bb",
    "kernel_grad_cross",
    "kernel_matrix",
]


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the squared-exponential kernel.

    amplitude and length_scale must be strictly positive; noise_std and
    jitter non-negative. noise_std**2 + jitter is added to the training
    diagonal when fitting.
    """

    amplitude: float
    length_scale: float
    noise_std: float = 0.0
    jitter: float = 1e-10

    def __post_init__(self):
        if not (self.amplitude > 0.0 and np.isfinite(self.amplitude)):
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")
        if not (self.length_scale > 0.0 and np.isfinite(self.length_scale)):
            raise ValueError(f"length_scale must be positive, got {self.length_scale}")
        if self.noise_std < 0.0 or not np.isfinite(self.noise_std):
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.jitter < 0.0 or not np.isfinite(self.jitter):
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")

    @property
    def diag_reg(self) -> float:
        """Total additive regularization on the training diagonal."""
        return self.noise_std**2 + self.jitter


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"point dimensions differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise DimensionError("points must have at least one coordinate")
    return a, b


def kernel_eval(params: KernelParams, a, b) -> float:
    """Evaluate k(a, b) for a single pair of points."""
    a, b = _pair(a, b)
    d = a - b
    return params.amplitude**2 * float(np.exp(-d @ d / (2.0 * params.length_scale**2)))


def kernel_grad_b(params: KernelParams, a, b) -> np.ndarray:
    """Gradient of k(a, b) with respect to b; shape (p,).

    dk/db = k(a, b) * (a - b) / ls^2. At a == b the gradient is zero.
    """
    a, b = _pair(a, b)
    return kernel_eval(params, a, b) * (a - b) / params.length_scale**2


def kernel_hess_bb(params: KernelParams, a, b) -> np.ndarray:
    """Hessian of k(a, b) with respect to b; shape (p, p), symmetric.

    d2k/db2 = k(a, b) * ((a - b)(a - b)^T / ls^4 - I / ls^2).
    At a == b this is -k/ls^2 * I (negative definite: k is maximal there).
    """
    a, b = _pair(a, b)
    ls2 = params.length_scale**2
    d = a - b
    k = kernel_eval(params, a, b)
    return k * (np.outer(d, d) / ls2**2 - np.eye(d.size) / ls2)


def kernel_grad_cross(params: KernelParams, a, b) -> np.ndarray:
    """Mixed second derivative d2k/(da db); shape (p, p).

    Equal to -kernel_hess_bb(params, a, b) because k depends on a and b
    only through a - b.
    """
    return -kernel_hess_bb(params, a, b)


def kernel_matrix(params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Dense kernel matrix k(A[i], B[j]); shape (len(A), len(B)).

    No diagonal regularization is added here.
    """
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionError(
            f"expected 2-d point arrays with equal width, got {A.shape} and {B.shape}"
        )
    d2 = cdist(A, B, "sqeuclidean")
    out = d2
    out *= -1.0 / (2.0 * params.length_scale**2)
    np.exp(out, out=out)
    out *= params.amplitude**2
    return out
