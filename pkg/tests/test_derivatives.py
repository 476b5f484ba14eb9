"""Derivative tensors of the posterior against retrain finite differences.

Beyond the FD sweeps, two single-training-point instances pin the tensors
to hand-derived formulas. With amplitude = length_scale = 1, one training
point x1, one query q, d = q - x1 and no noise:

    mean(q)            = e^{-d^2/2} z1
    d2 mean / d x1^2   = (d^2 - 1) e^{-d^2/2} z1
    cov(q, q)          = 1 - e^{-d^2}
    d2 cov / d x1^2    = (2 - 4 d^2) e^{-d^2}
"""

import numpy as np
import pytest

from gpdelta import (
    KernelParams,
    build_bundle,
    cov_hessian_diag,
    cov_jacobian,
    mean_hessian_diag,
    mean_hessian_full,
    mean_jacobian,
    inputs_digest,
    train,
)
from gpdelta.errors import ResourceLimit
from gpdelta.fd import (
    fd_cov_hessian_diag,
    fd_cov_jacobian,
    fd_mean_hessian_diag,
    fd_mean_hessian_full,
    fd_mean_jacobian,
    relative_error,
)

from helpers import random_instance


def test_all_families_match_finite_differences():
    rng = np.random.default_rng(101)
    for _ in range(5):
        params, X, y, queries = random_instance(rng, n_range=(3, 8), t_range=(2, 6))
        gp = train(params, X, y)
        h1 = 1e-5 * params.length_scale
        h2 = 1e-4 * params.length_scale
        assert relative_error(
            mean_jacobian(gp, queries),
            fd_mean_jacobian(params, X, y, queries, step=h1)) < 1e-4
        assert relative_error(
            cov_jacobian(gp, queries),
            fd_cov_jacobian(params, X, y, queries, step=h1)) < 1e-4
        assert relative_error(
            mean_hessian_diag(gp, queries),
            fd_mean_hessian_diag(params, X, y, queries, step=h2)) < 1e-3
        assert relative_error(
            cov_hessian_diag(gp, queries),
            fd_cov_hessian_diag(params, X, y, queries, step=h2)) < 1e-3


def test_full_mean_hessian_matches_finite_differences():
    rng = np.random.default_rng(103)
    for _ in range(3):
        params, X, y, queries = random_instance(rng, n_range=(3, 5), t_range=(2, 4))
        gp = train(params, X, y)
        h2 = 1e-4 * params.length_scale
        assert relative_error(
            mean_hessian_full(gp, queries),
            fd_mean_hessian_full(params, X, y, queries, step=h2)) < 1e-3


def test_single_point_mean_hessian_formula():
    params = KernelParams(amplitude=1.0, length_scale=1.0, noise_std=0.0, jitter=1e-13)
    x1, z1 = 0.3, 1.7
    for q in (0.3, 0.9, 1.8, -0.4):
        gp = train(params, np.array([[x1]]), np.array([z1]))
        d = q - x1
        hess = mean_hessian_diag(gp, np.array([[q]]))[0, 0, 0, 0]
        expected = (d**2 - 1.0) * np.exp(-(d**2) / 2.0) * z1
        assert abs(hess - expected) < 1e-9
        jac = mean_jacobian(gp, np.array([[q]]))[0, 0, 0]
        assert abs(jac - d * np.exp(-(d**2) / 2.0) * z1) < 1e-9


def test_single_point_covariance_hessian_formula():
    params = KernelParams(amplitude=1.0, length_scale=1.0, noise_std=0.0, jitter=1e-13)
    x1 = -0.2
    gp = train(params, np.array([[x1]]), np.array([0.5]))
    for q in (0.1, 0.7, 1.5):
        d = q - x1
        hess = cov_hessian_diag(gp, np.array([[q]]))[0, 0, 0, 0, 0]
        expected = (2.0 - 4.0 * d**2) * np.exp(-(d**2))
        assert abs(hess - expected) < 1e-9
        jac = cov_jacobian(gp, np.array([[q]]))[0, 0, 0, 0]
        assert abs(jac - (-2.0 * d * np.exp(-(d**2)))) < 1e-9


def test_mean_tensors_are_linear_in_targets():
    rng = np.random.default_rng(107)
    params, X, _, queries = random_instance(rng)
    y1 = rng.normal(size=len(X))
    y2 = rng.normal(size=len(X))
    j1 = mean_jacobian(train(params, X, y1), queries)
    j2 = mean_jacobian(train(params, X, y2), queries)
    j12 = mean_jacobian(train(params, X, y1 + y2), queries)
    scale = max(np.abs(j12).max(), 1e-12)
    assert np.abs(j1 + j2 - j12).max() < 1e-10 * scale
    h1 = mean_hessian_diag(train(params, X, y1), queries)
    h2 = mean_hessian_diag(train(params, X, y2), queries)
    h12 = mean_hessian_diag(train(params, X, y1 + y2), queries)
    assert np.abs(h1 + h2 - h12).max() < 1e-10 * max(np.abs(h12).max(), 1e-12)


def test_tensors_are_translation_invariant():
    rng = np.random.default_rng(109)
    params, X, y, queries = random_instance(rng, p_choices=(2,))
    shift = np.array([5.0, -3.0])
    g1 = train(params, X, y)
    g2 = train(params, X + shift, y)
    for fn in (mean_jacobian, mean_hessian_diag, cov_jacobian, cov_hessian_diag):
        a = fn(g1, queries)
        b = fn(g2, queries + shift)
        assert np.abs(a - b).max() < 1e-9 * max(np.abs(a).max(), 1e-12)


def test_covariance_tensors_do_not_depend_on_targets():
    rng = np.random.default_rng(113)
    params, X, _, queries = random_instance(rng)
    g1 = train(params, X, rng.normal(size=len(X)))
    g2 = train(params, X, rng.normal(size=len(X)))
    assert cov_jacobian(g1, queries).tobytes() == cov_jacobian(g2, queries).tobytes()
    assert (cov_hessian_diag(g1, queries).tobytes()
            == cov_hessian_diag(g2, queries).tobytes())


def test_full_hessian_diagonal_blocks_match_diag_tensor():
    rng = np.random.default_rng(127)
    params, X, y, queries = random_instance(rng, p_choices=(2,), n_range=(3, 6),
                                            t_range=(2, 5))
    gp = train(params, X, y)
    full = mean_hessian_full(gp, queries)
    diag = mean_hessian_diag(gp, queries)
    n, p = X.shape
    for i in range(n):
        block = full[:, i * p:(i + 1) * p, i * p:(i + 1) * p]
        assert np.abs(block - diag[:, i]).max() < 1e-10 * max(np.abs(diag).max(), 1e-12)


def test_full_hessian_is_symmetric_across_coordinates():
    rng = np.random.default_rng(131)
    params, X, y, queries = random_instance(rng, n_range=(3, 6), t_range=(2, 5))
    full = mean_hessian_full(train(params, X, y), queries)
    assert np.abs(full - np.transpose(full, (0, 2, 1))).max() < 1e-12 * max(
        np.abs(full).max(), 1e-12)


def test_full_hessian_coordinate_cap():
    rng = np.random.default_rng(137)
    params, X, y, queries = random_instance(rng, p_choices=(2,), n_range=(4, 4))
    gp = train(params, X, y)
    with pytest.raises(ResourceLimit):
        mean_hessian_full(gp, queries, max_coords=7)
    with pytest.raises(ResourceLimit):
        build_bundle(gp, queries, include_full_mean_hessian=True, max_coords=7)


def test_bundle_collects_tensors_and_metadata():
    rng = np.random.default_rng(139)
    params, X, y, queries = random_instance(rng)
    gp = train(params, X, y)
    bundle = build_bundle(gp, queries)
    n, p = X.shape
    t = len(queries)
    assert (bundle.meta.n, bundle.meta.t, bundle.meta.p) == (n, t, p)
    assert bundle.meta.amplitude == params.amplitude
    assert bundle.meta.length_scale == params.length_scale
    assert bundle.meta.planned_inputs_hash == inputs_digest(X)
    assert bundle.meta.measurements_hash == inputs_digest(y[:, None])
    assert not bundle.has_full_hessian
    assert bundle.mean.jacobian.shape == (t, n, p)
    assert bundle.mean.hessian_diag.shape == (t, n, p, p)
    assert bundle.cov.jacobian.shape == (t, t, n, p)
    assert bundle.cov.hessian_diag.shape == (t, t, n, p, p)
    assert np.array_equal(bundle.queries, np.asarray(queries))
    # the standalone accessors expose the same arrays
    assert np.array_equal(bundle.mean.jacobian, mean_jacobian(gp, queries))
    assert np.array_equal(bundle.cov.hessian_diag, cov_hessian_diag(gp, queries))
    full = build_bundle(gp, queries, include_full_mean_hessian=True)
    assert full.has_full_hessian
    assert full.mean.hessian_full.shape == (t, n * p, n * p)
