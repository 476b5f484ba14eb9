"""Gaussian process regression with a squared-exponential kernel.

The estimator follows the sklearn fit/predict conventions. Training
factorizes the regularized kernel matrix once (lower Cholesky) and all
predictions run through triangular solves; no matrix inverse is formed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import DimensionError, NotPositiveDefinite
from .kernel import KernelParams, kernel_matrix

__all__ = ["GPRegressor", "Prediction", "train", "predict", "as_points", "inputs_digest"]

# Round-off floor for posterior variances: values below -VAR_TOL are treated
# as a numerical failure rather than silently clamped.
VAR_TOL = 1e-10


def as_points(X, name: str = "X") -> np.ndarray:
    """Validate and return a C-contiguous (n, p) float array of points.

    A 1-d array is interpreted as n scalar points, shape (n, 1).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise DimensionError(f"{name} must be a non-empty (n, p) array, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return np.ascontiguousarray(X)


def inputs_digest(X: np.ndarray) -> str:
    """sha256 hex digest of a planned-inputs array (p, n, then raw float64-LE)."""
    X = np.ascontiguousarray(X, dtype="<f8")
    h = hashlib.sha256()
    h.update(np.uint32(X.shape[1]).tobytes())
    h.update(np.uint64(X.shape[0]).tobytes())
    h.update(X.tobytes())
    return h.hexdigest()


@dataclass
class Prediction:
    """Posterior mean and covariance at a set of query points.

    mean has shape (t,), covariance (t, t) symmetric with non-negative
    diagonal (negative round-off clamped at zero on output). digest ties
    the prediction back to the training inputs that produced it so a
    mismatched derivative bundle can be rejected later.
    """

    mean: np.ndarray
    covariance: np.ndarray
    digest: str | None = None

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance).copy()


class GPRegressor(RegressorMixin, BaseEstimator):
    """Squared-exponential GP regressor.

    Parameters
    ----------
    amplitude, length_scale : float
        Kernel hyperparameters (no hyperparameter optimization is done;
        values are taken as given).
    noise_std : float
        Observation noise standard deviation; noise_std**2 goes on the
        training diagonal.
    jitter : float
        Extra diagonal regularization for numerical stability.
    """

    def __init__(self, amplitude: float = 1.0, length_scale: float = 1.0,
                 noise_std: float = 0.0, jitter: float = 1e-10):
        self.amplitude = amplitude
        self.length_scale = length_scale
        self.noise_std = noise_std
        self.jitter = jitter

    def _params(self) -> KernelParams:
        return KernelParams(self.amplitude, self.length_scale, self.noise_std, self.jitter)

    def fit(self, X, y) -> "GPRegressor":
        params = self._params()
        X = as_points(X, "X")
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != X.shape[0]:
            raise DimensionError(
                f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not np.isfinite(y).all():
            raise ValueError("y contains non-finite values")

        K = kernel_matrix(params, X, X)
        reg = params.diag_reg
        if reg == 0.0:
            # Exactly duplicated inputs make K singular by construction and
            # the sign of the zero pivot under round-off is luck; fail early.
            _, counts = np.unique(X, axis=0, return_counts=True)
            if (counts > 1).any():
                raise NotPositiveDefinite(
                    "duplicated training inputs with zero noise/jitter; "
                    "set a positive jitter")
        K[np.diag_indices_from(K)] += reg
        try:
            L = cholesky(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(
                f"kernel matrix factorization failed ({exc}); increase jitter") from exc

        self.X_train_ = X
        self.y_train_ = y
        self.n_, self.p_ = X.shape
        self.chol_lower_ = L
        self.weights_ = cho_solve((L, True), y, check_finite=False)
        self.digest_ = inputs_digest(X)
        return self

    def _check_fitted(self):
        if not hasattr(self, "chol_lower_"):
            raise AttributeError("GPRegressor is not fitted; call fit(X, y) first")

    def predict(self, X, return_cov: bool = False):
        """Posterior mean at X; with return_cov=True also the (t, t) covariance."""
        pred = self.predict_full(X)
        if return_cov:
            return pred.mean, pred.covariance
        return pred.mean

    def predict_full(self, X) -> Prediction:
        """Posterior mean and full covariance packaged as a Prediction."""
        self._check_fitted()
        Xq = as_points(X, "queries")
        if Xq.shape[1] != self.p_:
            raise DimensionError(
                f"queries have dimension {Xq.shape[1]}, model has {self.p_}")
        params = self._params()
        Kq = kernel_matrix(params, Xq, self.X_train_)
        mean = Kq @ self.weights_
        V = solve_triangular(self.chol_lower_, Kq.T, lower=True, check_finite=False)
        cov = kernel_matrix(params, Xq, Xq)
        cov -= V.T @ V
        cov = 0.5 * (cov + cov.T)
        diag = np.diag(cov)
        low = float(diag.min())
        if low < -VAR_TOL:
            raise FloatingPointError(
                f"posterior variance {low:.3e} below round-off tolerance; "
                "the system is too ill-conditioned, increase jitter")
        if low < 0.0:
            np.fill_diagonal(cov, np.maximum(diag, 0.0))
        return Prediction(mean=mean, covariance=cov, digest=self.digest_)


def train(params: KernelParams, X, y) -> GPRegressor:
    """Functional wrapper: fit a GPRegressor from explicit KernelParams."""
    gp = GPRegressor(params.amplitude, params.length_scale, params.noise_std, params.jitter)
    return gp.fit(X, y)


def predict(gp: GPRegressor, X) -> Prediction:
    """Functional wrapper for GPRegressor.predict_full."""
    return gp.predict_full(X)
