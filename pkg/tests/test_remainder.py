"""Order-count formula and measured remainder decay.

required_order implements

    N = max(0, ceil( log(epsilon / l_m) / log(radius) ))     (radius < 1)

Hand check: epsilon/l_m = 0.01, radius = 0.5 gives
log(0.01)/log(0.5) = 6.6438... so N = 7.
"""

import numpy as np
import pytest

from gpdelta import (
    BoundInputs,
    KernelParams,
    empirical_remainder,
    required_order,
    train,
)
from gpdelta.errors import InvalidRadius

from helpers import random_instance


def test_hand_computed_order():
    assert required_order(0.01 * 2.0, 2.0, 0.5) == 7
    assert required_order(0.01, 1.0, 0.5) == 7
    assert required_order(BoundInputs(0.02, 2.0, 0.5)) == 7


def test_equal_target_and_bound_needs_no_terms():
    assert required_order(2.0, 2.0, 0.5) == 0
    assert required_order(1.0, 1.0, 0.9) == 0


def test_loose_target_needs_no_terms():
    assert required_order(3.0, 1.0, 0.5) == 0
    assert required_order(100.0, 1.0, 0.99) == 0


def test_radius_at_or_above_one_is_rejected():
    with pytest.raises(InvalidRadius):
        required_order(0.01, 1.0, 1.0)
    with pytest.raises(InvalidRadius):
        required_order(0.01, 1.0, 1.5)


def test_inputs_must_be_positive_finite():
    for bad in ({"epsilon": 0.0}, {"epsilon": -1.0}, {"l_m": 0.0},
                {"radius": 0.0}, {"radius": -0.5}, {"epsilon": np.nan},
                {"l_m": np.inf}):
        kw = {"epsilon": 0.1, "l_m": 1.0, "radius": 0.5}
        kw.update(bad)
        with pytest.raises(ValueError):
            BoundInputs(**kw)


def test_order_monotonicity():
    epsilons = np.logspace(-6, 0, 7)
    radii = np.linspace(0.2, 0.9, 6)
    lms = np.logspace(-2, 2, 5)
    # tighter target -> at least as many terms
    for r in radii:
        for lm in lms:
            orders = [required_order(e, lm, r) for e in epsilons]
            assert all(a >= b for a, b in zip(orders, orders[1:]))
    # slower contraction (radius closer to 1) -> at least as many terms
    for e in epsilons:
        for lm in lms:
            orders = [required_order(e, lm, r) for r in radii]
            assert all(a <= b for a, b in zip(orders, orders[1:]))
    # larger derivative bound -> at least as many terms
    for e in epsilons:
        for r in radii:
            orders = [required_order(e, lm, r) for lm in lms]
            assert all(a <= b for a, b in zip(orders, orders[1:]))


def _smooth_sine_gp(rng, n=9):
    params = KernelParams(amplitude=1.0, length_scale=0.3,
                          noise_std=float(rng.uniform(0.02, 0.05)))
    X = np.sort(rng.uniform(0.0, 1.5, n))[:, None]
    y = np.sin(2.0 * np.pi * X[:, 0]) + rng.normal(0.0, params.noise_std, n)
    return params, train(params, X, y)


def test_zero_direction_leaves_no_gap():
    rng = np.random.default_rng(401)
    _, gp = _smooth_sine_gp(rng)
    queries = rng.uniform(0.0, 1.5, (12, 1))
    study = empirical_remainder(gp, queries, np.zeros((gp.n_, 1)),
                                [4e-3, 2e-3, 1e-3])
    assert np.all(study.gaps == 0.0)
    assert np.isnan(study.slope)


def test_gaps_shrink_with_the_scale():
    rng = np.random.default_rng(409)
    _, gp = _smooth_sine_gp(rng)
    queries = rng.uniform(0.0, 1.5, (12, 1))
    direction = rng.standard_normal((gp.n_, 1))
    direction /= np.abs(direction).max()
    scales = np.array([4e-3, 2e-3, 1e-3]) * 0.3
    study = empirical_remainder(gp, queries, direction, scales)
    assert np.all(study.gaps > 0.0)
    assert np.all(np.diff(study.gaps) < 0.05 * study.gaps[:-1])
    assert study.mode == "paper_diag"
    assert study.points == list(zip(scales.tolist(), study.gaps.tolist()))


def test_single_point_direction_decays_cubically():
    # with one perturbed point there are no cross blocks for paper_diag
    # to miss, so the remainder is third order
    rng = np.random.default_rng(419)
    _, gp = _smooth_sine_gp(rng)
    queries = rng.uniform(0.0, 1.5, (12, 1))
    direction = np.zeros((gp.n_, 1))
    direction[3, 0] = 1.0
    scales = np.array([4e-3, 2e-3, 1e-3]) * 0.3
    study = empirical_remainder(gp, queries, direction, scales)
    assert study.slope > 2.7


def test_full_hessian_restores_third_order_for_all_point_errors():
    rng = np.random.default_rng(421)
    _, gp = _smooth_sine_gp(rng)
    queries = rng.uniform(0.0, 1.5, (12, 1))
    direction = rng.standard_normal((gp.n_, 1))
    direction /= np.abs(direction).max()
    scales = np.array([4e-3, 2e-3, 1e-3]) * 0.3
    diag = empirical_remainder(gp, queries, direction, scales, mode="paper_diag")
    full = empirical_remainder(gp, queries, direction, scales, mode="full_hessian")
    assert full.slope > 2.5
    assert 1.7 < diag.slope < full.slope
    assert np.all(full.gaps <= diag.gaps)


def test_scales_are_validated():
    rng = np.random.default_rng(431)
    _, gp = _smooth_sine_gp(rng)
    queries = np.array([[0.5]])
    d = np.ones((gp.n_, 1))
    with pytest.raises(ValueError):
        empirical_remainder(gp, queries, d, [])
    with pytest.raises(ValueError):
        empirical_remainder(gp, queries, d, [1e-3, 2e-3])
    with pytest.raises(ValueError):
        empirical_remainder(gp, queries, d, [2e-3, -1e-3])
    with pytest.raises(ValueError):
        empirical_remainder(gp, queries, d, [[1e-3], [2e-3]])


def test_study_accepts_scale_zero_rows():
    rng = np.random.default_rng(433)
    _, gp = _smooth_sine_gp(rng)
    queries = np.array([[0.4], [0.9]])
    direction = np.ones((gp.n_, 1))
    study = empirical_remainder(gp, queries, direction, [1e-3, 0.0])
    assert study.gaps[1] == 0.0
    assert study.gaps[0] > 0.0
