"""Taylor-order bookkeeping for the input-error correction.

Two tools quantify how far the second-order correction can be trusted:

* ``required_order`` evaluates the closed-form order count

      N = max(0, ceil( log(epsilon / l_m) / log(radius) ))

  — the smallest series order whose worst-case remainder, under a
  derivative-norm bound ``l_m`` and an expansion radius < 1, drops
  below ``epsilon``.

* ``empirical_remainder`` measures the actual decay: it corrects a
  prediction for a scaled input error and compares against a model
  retrained at the displaced inputs, returning the max-abs mean gap per
  scale and the fitted log-log slope (the observed remainder order).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .correction import PerturbationSet, correct, retrain_oracle
from .derivatives import build_bundle
from .errors import InvalidRadius
from .gp import GPRegressor, as_points

__all__ = ["BoundInputs", "required_order", "empirical_remainder", "RemainderStudy"]


@dataclass(frozen=True)
class BoundInputs:
    """Inputs to the order-count formula.

    epsilon -- desired accuracy (same units as the field values);
    l_m     -- bound on the norm of the next-order derivative tensor;
    radius  -- distance from the expansion point the bound must hold over.

    l_m is supplied by the caller, not estimated: bounding sup-norms of
    high-order derivative tensors is out of scope. Finite-difference
    checks of the first two orders (see the fd module) make a crude probe.
    """

    epsilon: float
    l_m: float
    radius: float

    def __post_init__(self):
        for name in ("epsilon", "l_m", "radius"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite real, got {v}")


def required_order(inputs, l_m: float | None = None, radius: float | None = None) -> int:
    """Smallest series order meeting an accuracy target; never negative.

    Accepts a BoundInputs, or plain (epsilon, l_m, radius) floats.
    A radius >= 1 makes the formula ill-posed (log(radius) >= 0) and
    raises InvalidRadius. epsilon >= l_m returns 0: the order-0 remainder
    already meets the target.
    """
    if not isinstance(inputs, BoundInputs):
        inputs = BoundInputs(float(inputs), float(l_m), float(radius))
    if inputs.radius >= 1.0:
        raise InvalidRadius(
            f"radius must be < 1 for the remainder to contract, got {inputs.radius}")
    order = math.ceil(math.log(inputs.epsilon / inputs.l_m) / math.log(inputs.radius))
    return max(0, order)


@dataclass
class RemainderStudy:
    """Measured remainder decay: gap per scale and fitted log-log slope."""

    scales: np.ndarray
    gaps: np.ndarray
    slope: float
    mode: str

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.scales.tolist(), self.gaps.tolist()))


def _fit_slope(scales: np.ndarray, gaps: np.ndarray) -> float:
    keep = (scales > 0) & (gaps > 0)
    if keep.sum() < 2:
        return float("nan")
    coeff = np.polyfit(np.log(scales[keep]), np.log(gaps[keep]), 1)
    return float(coeff[0])


def empirical_remainder(gp: GPRegressor, queries, direction, scales,
                        mode: str = "paper_diag") -> RemainderStudy:
    """Measure how fast the corrected-vs-retrained mean gap shrinks.

    ``direction`` is a fixed error pattern delta (one row per training
    point); for each scale s the planned inputs are taken to overshoot
    the truth by s*delta, i.e. the retrained reference uses inputs
    X - s*delta, and the correction is applied with the matching step.
    A scale of exactly 0 yields a gap of exactly 0. One derivative
    bundle is reused across all scales; retrains run serially per scale.
    """
    scales = np.asarray(scales, dtype=float)
    if scales.ndim != 1 or scales.size == 0:
        raise ValueError("scales must be a non-empty 1-d sequence")
    if (scales < 0).any():
        raise ValueError("scales must be non-negative")
    if (np.diff(scales) > 0).any():
        raise ValueError("scales must be sorted in descending order")

    Q = as_points(queries)
    if isinstance(direction, PerturbationSet):
        direction = direction.deltas
    d = np.asarray(direction, dtype=float)
    if d.ndim == 1:
        d = d[:, None]

    pred = gp.predict_full(Q)
    bundle = build_bundle(gp, Q, include_full_mean_hessian=(mode == "full_hessian"))
    params = gp._params()

    gaps = np.empty(scales.size)
    for k, s in enumerate(scales):
        step = -s * d
        corrected = correct(pred, bundle, step, mode=mode)
        reference = retrain_oracle(params, gp.X_train_ + step, gp.y_train_, Q)
        gaps[k] = float(np.abs(corrected.mean - reference.mean).max())

    return RemainderStudy(scales=scales, gaps=gaps,
                          slope=_fit_slope(scales, gaps), mode=mode)
