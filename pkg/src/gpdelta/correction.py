"""Apply input-error corrections to GP predictions.

The correction is a second-order Taylor update in the training inputs:
given tensors from a bundle built at the planned inputs and a per-point
step ``deltas`` (the displacement to *add* to the planned inputs), the
corrected prediction approximates what retraining at planned + deltas
would produce:

    mean_e  += sum_i J[e,i,:] . d_i  +  1/2 sum_i d_i^T H[e,i,:,:] d_i
    cov_ef  += analogous contractions of the covariance tensors

"paper_diag" keeps per-point Hessian blocks only; "full_hessian" adds
the cross-point mean terms (needs a bundle built with the full Hessian).
The covariance update uses the per-point blocks in both modes.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import dgemv as _dgemv

from .derivatives import DerivativeBundle
from .errors import (DeltaBoundWarning, DimensionError, DoubleApply, StaleBundle,
                     UnsupportedIncrementalMode)
from .gp import GPRegressor, Prediction, train
from .kernel import KernelParams

__all__ = [
    "PerturbationSet",
    "CorrectedPrediction",
    "correct",
    "begin_incremental",
    "apply_increment",
    "retrain_oracle",
    "OnlineCorrector",
    "MODES",
]

MODES = ("paper_diag", "full_hessian")

logger = logging.getLogger("gpdelta")


@dataclass
class PerturbationSet:
    """Input-error steps for every training point.

    deltas has shape (n, p); row i is the step to add to planned input i
    (so a model retrained at planned + deltas is the comparison target).
    delta_max optionally documents the magnitude the second-order
    correction is trusted for; larger rows trigger DeltaBoundWarning.
    """

    deltas: np.ndarray
    delta_max: float | None = None

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=float)
        if d.ndim == 1:
            d = d[:, None]
        if d.ndim != 2:
            raise DimensionError(f"deltas must be (n, p), got shape {d.shape}")
        if not np.isfinite(d).all():
            raise ValueError("deltas contain non-finite values")
        self.deltas = d

    def oversized_rows(self) -> np.ndarray:
        """Indices whose Euclidean step length exceeds delta_max."""
        if self.delta_max is None:
            return np.empty(0, dtype=int)
        norms = np.linalg.norm(self.deltas, axis=1)
        return np.flatnonzero(norms > self.delta_max)


@dataclass
class CorrectedPrediction:
    """Corrected mean/covariance plus bookkeeping.

    covariance carries the symmetrized update with negative round-off
    variances clamped at zero; covariance_raw keeps the unclamped values.
    applied_mask marks which training points' contributions are included
    (all True for a batch correction).
    """

    mean: np.ndarray
    covariance: np.ndarray
    covariance_raw: np.ndarray
    mode: str
    applied_mask: np.ndarray
    delta_violations: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    digest: str | None = None

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance).copy()


def _as_deltas(perturbations, n: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(perturbations, PerturbationSet):
        pset = perturbations
    else:
        pset = PerturbationSet(perturbations)
    d = pset.deltas
    if d.shape != (n, p):
        raise DimensionError(f"deltas have shape {d.shape}, bundle expects ({n}, {p})")
    bad = pset.oversized_rows()
    if bad.size:
        warnings.warn(
            f"{bad.size} perturbation(s) exceed delta_max={pset.delta_max}; "
            "second-order correction may be inaccurate", DeltaBoundWarning)
    return d, bad


def _check_bundle(prediction: Prediction, bundle: DerivativeBundle) -> None:
    meta = bundle.meta
    if prediction.mean.shape[0] != meta.t:
        raise DimensionError(
            f"prediction has {prediction.mean.shape[0]} queries, bundle has {meta.t}")
    if prediction.digest is not None and prediction.digest != meta.planned_inputs_hash:
        raise StaleBundle(
            "bundle was built for different planned inputs than this prediction")


def _finish(mean, cov_raw, mode, mask, violations, digest) -> CorrectedPrediction:
    cov_raw = 0.5 * (cov_raw + cov_raw.T)
    diag = np.diag(cov_raw)
    clamped = int((diag < 0.0).sum())
    cov = cov_raw
    if clamped:
        cov = cov_raw.copy()
        np.fill_diagonal(cov, np.maximum(diag, 0.0))
        logger.info("clamped %d/%d corrected variances at zero", clamped, diag.size)
    return CorrectedPrediction(
        mean=mean, covariance=cov, covariance_raw=cov_raw, mode=mode,
        applied_mask=mask, delta_violations=violations, digest=digest)


def correct(prediction: Prediction, bundle: DerivativeBundle, perturbations,
            mode: str = "paper_diag") -> CorrectedPrediction:
    """Correct a prediction for input errors in one batch.

    With all-zero deltas the output equals the input prediction exactly.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    _check_bundle(prediction, bundle)
    meta = bundle.meta
    d, violations = _as_deltas(perturbations, meta.n, meta.p)

    mean = prediction.mean + np.einsum("eij,ij->e", bundle.mean.jacobian, d)
    if mode == "paper_diag":
        mean += 0.5 * np.einsum("eijl,ij,il->e", bundle.mean.hessian_diag, d, d)
    else:
        if not bundle.has_full_hessian:
            raise ValueError(
                "full_hessian mode needs a bundle built with include_full_mean_hessian")
        flat = d.ravel()
        mean += 0.5 * np.einsum("eab,a,b->e", bundle.mean.hessian_full, flat, flat)

    cov = prediction.covariance + np.einsum("efij,ij->ef", bundle.cov.jacobian, d)
    cov += 0.5 * np.einsum("efijl,ij,il->ef", bundle.cov.hessian_diag, d, d)

    mask = np.ones(meta.n, dtype=bool)
    return _finish(mean, cov, mode, mask, violations, prediction.digest)


def begin_incremental(prediction: Prediction, bundle: DerivativeBundle,
                      mode: str = "paper_diag") -> CorrectedPrediction:
    """Start an incremental correction with no points applied yet.

    Only paper_diag supports per-point increments; the full Hessian
    couples points, so its cross terms cannot be attributed to single
    arrivals.
    """
    if mode != "paper_diag":
        raise UnsupportedIncrementalMode(
            f"incremental application supports only paper_diag, got {mode!r}")
    _check_bundle(prediction, bundle)
    return CorrectedPrediction(
        mean=prediction.mean.copy(),
        covariance=prediction.covariance.copy(),
        covariance_raw=prediction.covariance.copy(),
        mode=mode,
        applied_mask=np.zeros(bundle.meta.n, dtype=bool),
        digest=prediction.digest)


def apply_increment(state: CorrectedPrediction, bundle: DerivativeBundle,
                    index: int, delta, delta_max: float | None = None) -> CorrectedPrediction:
    """Fold one training point's correction into an incremental state.

    Raises DoubleApply if the point was already applied. After applying
    every point once, the state matches the batch correction.
    """
    if state.mode != "paper_diag":
        raise UnsupportedIncrementalMode(
            f"incremental application supports only paper_diag, got {state.mode!r}")
    meta = bundle.meta
    if not 0 <= index < meta.n:
        raise DimensionError(f"point index {index} out of range [0, {meta.n})")
    if state.applied_mask[index]:
        raise DoubleApply(f"correction for training point {index} already applied")
    d = np.asarray(delta, dtype=float).ravel()
    if d.shape[0] != meta.p:
        raise DimensionError(f"delta has {d.shape[0]} coordinates, expected {meta.p}")

    violations = state.delta_violations
    if delta_max is not None and np.linalg.norm(d) > delta_max:
        warnings.warn(
            f"perturbation for point {index} exceeds delta_max={delta_max}",
            DeltaBoundWarning)
        violations = np.union1d(violations, [index])

    mean = state.mean + bundle.mean.jacobian[:, index, :] @ d
    mean += 0.5 * (bundle.mean.hessian_diag[:, index] @ d) @ d
    cov = state.covariance_raw + bundle.cov.jacobian[:, :, index, :] @ d
    cov += 0.5 * np.einsum("efjl,j,l->ef", bundle.cov.hessian_diag[:, :, index], d, d)

    mask = state.applied_mask.copy()
    mask[index] = True
    return _finish(mean, cov, state.mode, mask, violations, state.digest)


def retrain_oracle(params: KernelParams, actual_inputs, measurements, queries) -> Prediction:
    """Ground truth for the correction: retrain at the actual inputs.

    Runs the ordinary train/predict pipeline; the correction is judged by
    how closely it reproduces this.
    """
    return train(params, actual_inputs, measurements).predict_full(queries)


class OnlineCorrector:
    """Low-latency corrected mean and per-query variance.

    The bundle's mean and variance (covariance diagonal) operators are
    reshaped offline into one stacked matrix so an online update is a
    single matrix-vector product over [deltas, vec(outer products)] --
    cost O(t * n * p^2), independent of the covariance matrix size.

    Instances reuse an internal input buffer and are not thread-safe.
    The full covariance matrix is not updated here; use correct() when
    the cross-query terms matter.
    """

    def __init__(self, prediction: Prediction, bundle: DerivativeBundle):
        _check_bundle(prediction, bundle)
        meta = bundle.meta
        t, n, p = meta.t, meta.n, meta.p
        self.n, self.p, self.t = n, p, t
        m, q = n * p, n * p * p

        idx = np.arange(t)
        var_jac = bundle.cov.jacobian[idx, idx]          # (t, n, p)
        var_hess = bundle.cov.hessian_diag[idx, idx]     # (t, n, p, p)

        # One stacked operator; a trailing constant-1 input column carries
        # the uncorrected baseline so apply() is a single matrix-vector
        # product over [deltas, vec(outer products), 1]. Column-major
        # storage keeps the BLAS gemv on its fast path.
        W = np.empty((2 * t, m + q + 1), order="F")
        W[:t, :m] = bundle.mean.jacobian.reshape(t, m)
        W[t:, :m] = var_jac.reshape(t, m)
        W[:t, m:-1] = 0.5 * bundle.mean.hessian_diag.reshape(t, q)
        W[t:, m:-1] = 0.5 * var_hess.reshape(t, q)
        W[:t, -1] = prediction.mean
        W[t:, -1] = np.diag(prediction.covariance)
        self._W = W
        buf = np.empty(m + q + 1)
        buf[-1] = 1.0
        self._buf = buf
        self._lin = buf[:m]
        self._quad = buf[m:-1]
        self._quad_blocks = self._quad.reshape(n, p, p)
        self._m = m

    def apply(self, deltas) -> tuple[np.ndarray, np.ndarray]:
        """Corrected (mean, variance) for one error vector; variances clamped at 0."""
        D = np.asarray(deltas, dtype=float)
        if D.ndim == 1:
            D = D[:, None]
        if D.shape != (self.n, self.p):
            raise DimensionError(f"deltas have shape {D.shape}, expected ({self.n}, {self.p})")
        lin = self._lin
        lin[...] = D.ravel()
        if self.p == 1:
            np.multiply(lin, lin, out=self._quad)
        else:
            np.einsum("ij,il->ijl", D, D, out=self._quad_blocks)
        t = self.t
        out = np.empty(2 * t)
        _dgemv(1.0, self._W, self._buf, 0.0, out, 0, 1, 0, 1, 0, 1)
        mean, var = out[:t], out[t:]
        np.maximum(var, 0.0, out=var)
        return mean, var
