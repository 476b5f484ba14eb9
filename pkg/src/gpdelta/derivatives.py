"""Closed-form derivatives of GP predictions w.r.t. the training inputs.

Let K be the regularized training kernel matrix (Cholesky L), w = K^-1 y,
Kq the query-training cross kernel and A = Kq K^-1. Differentiating the
posterior mean M = Kq w and covariance S = Kee - Kq K^-1 Kq^T in a
training input x_i uses two structural facts:

* d(Kq)/dx_i only touches column i;
* d(K)/dx_i only touches row/column i (the (i, i) entry is constant),
  so with d_i the nonzero column, dK = e_i d_i^T + d_i e_i^T.

The derivative of the inverse, d(K^-1) = -K^-1 dK K^-1, is applied via
Cholesky solves against those sparse columns; the dense inverse never
multiplies data. Second derivatives reuse the same rank-structure, which
turns every term into outer products of a handful of (t, n[, p]) arrays.

All assembly happens offline; the resulting tensors are contracted with
an input error vector at application time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DimensionError, ResourceLimit
from .gp import GPRegressor, as_points, inputs_digest
from .kernel import kernel_matrix

__all__ = [
    "MeanDerivatives",
    "CovDerivatives",
    "BundleMeta",
    "DerivativeBundle",
    "build_bundle",
    "mean_jacobian",
    "mean_hessian_diag",
    "mean_hessian_full",
    "cov_jacobian",
    "cov_hessian_diag",
    "MAX_FULL_HESSIAN_COORDS",
]

# Full-Hessian assembly materializes (n*p)^2-sized tensors; refuse beyond
# this many input coordinates rather than thrash memory.
MAX_FULL_HESSIAN_COORDS = 2000


@dataclass
class MeanDerivatives:
    """Derivative tensors of the posterior mean.

    jacobian         (t, n, p)     d(mean_e)/d(x_i^j)
    hessian_diag     (t, n, p, p)  per-point second-derivative blocks
    hessian_full     (t, n*p, n*p) optional, includes cross-point blocks
    """

    jacobian: np.ndarray
    hessian_diag: np.ndarray
    hessian_full: np.ndarray | None = None


@dataclass
class CovDerivatives:
    """Derivative tensors of the posterior covariance.

    jacobian      (t, t, n, p)     d(cov_ef)/d(x_i^j)
    hessian_diag  (t, t, n, p, p)  per-point second-derivative blocks

    These do not depend on the measurements y: the covariance is a
    function of inputs and hyperparameters only.
    """

    jacobian: np.ndarray
    hessian_diag: np.ndarray


@dataclass
class BundleMeta:
    n: int
    t: int
    p: int
    amplitude: float
    length_scale: float
    noise_std: float
    jitter: float
    planned_inputs_hash: str
    measurements_hash: str
    created_with_measurements: bool
    format_version: int = 1


@dataclass
class DerivativeBundle:
    """Precomputed derivative tensors for one (model, query set) pair.

    queries stores the locations the tensors were evaluated at; a bundle
    is only valid for predictions at exactly these locations.
    """

    meta: BundleMeta
    mean: MeanDerivatives
    cov: CovDerivatives
    queries: np.ndarray

    @property
    def has_full_hessian(self) -> bool:
        return self.mean.hessian_full is not None


class _Workspace:
    """Shared intermediates for all tensor assemblies of one bundle."""

    def __init__(self, gp: GPRegressor, queries: np.ndarray):
        gp._check_fitted()
        Xq = as_points(queries, "queries")
        if Xq.shape[1] != gp.p_:
            raise DimensionError(
                f"queries have dimension {Xq.shape[1]}, model has {gp.p_}")
        params = gp._params()
        X = gp.X_train_
        L = gp.chol_lower_
        n, p = X.shape
        t = Xq.shape[0]
        ls2 = params.length_scale**2

        self.gp, self.queries, self.n, self.t, self.p = gp, Xq, n, t, p
        self.w = gp.weights_

        self.K = kernel_matrix(params, X, X)          # (n, n), no regularization
        self.Kq = kernel_matrix(params, Xq, X)        # (t, n)
        self.A = cho_solve((L, True), self.Kq.T, check_finite=False).T  # (t, n)

        Dq = Xq[:, None, :] - X[None, :, :]           # (t, n, p): x_e - x_i
        Dt = X[None, :, :] - X[:, None, :]            # (n, n, p): x_m - x_i
        eye = np.eye(p)

        # Gradients/Hessians of single kernel entries w.r.t. the training
        # point sitting in the second slot (queries) / first slot (pairs).
        self.Gq = self.Kq[:, :, None] * Dq / ls2                        # (t, n, p)
        self.Hq = (np.einsum("tn,tnj,tnl->tnjl", self.Kq, Dq, Dq) / ls2**2
                   - self.Kq[:, :, None, None] * eye / ls2)             # (t, n, p, p)
        self.dK = self.K[:, :, None] * Dt / ls2                        # (n, n, p)
        hK = (np.einsum("im,imj,iml->imjl", self.K, Dt, Dt) / ls2**2
              - self.K[:, :, None, None] * eye / ls2)                   # (n, n, p, p)
        idx = np.arange(n)
        hK[idx, idx] = 0.0   # k(x_i, x_i) is constant; its entry never moves
        self.hK = hK

        # Solves against the sparse dK columns: U[m, i, j] = (K^-1 d_{ij})[m]
        dcols = self.dK.transpose(1, 0, 2).reshape(n, n * p)
        self.U = cho_solve((L, True), dcols, check_finite=False).reshape(n, n, p)
        self.uii = self.U[idx, idx, :]                                  # (n, p)

        # diag(K^-1) from the factor: column norms of L^-1.
        Linv = solve_triangular(L, np.eye(n), lower=True, check_finite=False)
        self.Linv = Linv
        self.diagP = np.einsum("ki,ki->i", Linv, Linv)                  # (n,)

        self.s = np.einsum("imj,m->ij", self.dK, self.w)               # (n, p)
        self.TAd = np.einsum("em,imj->eij", self.A, self.dK)           # (t, n, p)
        self.TAh = np.einsum("em,imjl->eijl", self.A, hK)              # (t, n, p, p)
        self.du = np.einsum("iml,mij->ilj", self.dK, self.U)           # (n, p, p)
        self.hw = np.einsum("imjl,m->ijl", hK, self.w)                 # (n, p, p)
        # c_ii[i, j] = (K^-1 dK_{ij} w)[i]
        self.c_ii = self.diagP[:, None] * self.s + self.uii * self.w[:, None]

    def full_inverse(self) -> np.ndarray:
        return self.Linv.T @ self.Linv


def _mean_jacobian(ws: _Workspace) -> np.ndarray:
    w = ws.w
    return (ws.Gq * w[None, :, None]
            - ws.A[:, :, None] * ws.s[None, :, :]
            - ws.TAd * w[None, :, None])


def _mean_hessian_diag(ws: _Workspace) -> np.ndarray:
    w, A, Gq, TAd = ws.w, ws.A, ws.Gq, ws.TAd
    s, uii, du, c_ii, hw = ws.s, ws.uii, ws.du, ws.c_ii, ws.hw

    H = ws.Hq * w[None, :, None, None]
    H -= np.einsum("eij,il->eijl", Gq, c_ii)
    H -= np.einsum("eil,ij->eijl", Gq, c_ii)
    inner = uii[:, None, :] * s[:, :, None] + du.transpose(0, 2, 1) * w[:, None, None]
    # inner[i, j, l] = uii[i, l] s[i, j] + du[i, l, j] w[i]
    H += np.einsum("ei,ijl->eijl", A, inner)
    H += np.einsum("ei,ilj->eijl", A, inner)
    H += np.einsum("eil,ij->eijl", TAd, c_ii)
    H += np.einsum("eij,il->eijl", TAd, c_ii)
    H -= np.einsum("ei,ijl->eijl", A, hw)
    H -= ws.TAh * w[None, :, None, None]
    return H


def _cov_jacobian(ws: _Workspace) -> np.ndarray:
    R = ws.TAd - ws.Gq
    return (np.einsum("eij,fi->efij", R, ws.A)
            + np.einsum("ei,fij->efij", ws.A, R))


def _cov_hessian_diag(ws: _Workspace) -> np.ndarray:
    """Second derivative of the covariance, same-point blocks.

    Built as minus the second derivative of B = Kq K^-1 Kq^T; every term
    is an outer product over the two query axes.
    """
    A, Gq, TAd, Hq, TAh = ws.A, ws.Gq, ws.TAd, ws.Hq, ws.TAh
    dP, uii, du = ws.diagP, ws.uii, ws.du
    t, n, p = ws.t, ws.n, ws.p

    def sym(term):
        # term[e, f, i, j, l] + its (e <-> f) transpose
        return term + term.transpose(1, 0, 2, 3, 4)

    H = np.zeros((t, t, n, p, p))
    # -(d2 Kq) K^-1 Kq^T and transpose
    H -= sym(np.einsum("eijl,fi->efijl", Hq, A))
    # (d Kq) dQ Kq^T family: +g_j (x) (dP*Ad_l + u_l*a), both orders, and e<->f
    M1 = dP[:, None] * TAd + uii[None, :, :] * A[:, :, None]   # (t, n, p): dP Ad_l + u_l a
    H += sym(np.einsum("eij,fil->efijl", Gq, M1))
    H += sym(np.einsum("eil,fij->efijl", Gq, M1))
    # -(d Kq) K^-1 (d Kq)^T: dP g_j (x) g_l, both coordinate orders collapse
    H -= sym(np.einsum("eij,i,fil->efijl", Gq, dP, Gq))
    # Kq d2(K^-1) Kq^T expands into three groups:
    #   -A dK Q dK A^T (two coordinate orders) and +A d2K A^T
    H -= sym(np.einsum("ei,il,fij->efijl", A, uii, TAd))
    H -= sym(np.einsum("ei,ij,fil->efijl", A, uii, TAd))
    H -= sym(0.5 * np.einsum("ei,ilj,fi->efijl", A, du, A))
    H -= sym(0.5 * np.einsum("ei,ijl,fi->efijl", A, du, A))
    H -= sym(np.einsum("eil,i,fij->efijl", TAd, dP, TAd))
    H += sym(np.einsum("ei,fijl->efijl", A, TAh))
    return H


def mean_jacobian(gp: GPRegressor, queries) -> np.ndarray:
    """First derivatives of the posterior mean, shape (t, n, p)."""
    return _mean_jacobian(_Workspace(gp, queries))


def mean_hessian_diag(gp: GPRegressor, queries) -> np.ndarray:
    """Same-point second derivatives of the posterior mean, (t, n, p, p)."""
    return _mean_hessian_diag(_Workspace(gp, queries))


def cov_jacobian(gp: GPRegressor, queries) -> np.ndarray:
    """First derivatives of the posterior covariance, (t, t, n, p)."""
    return _cov_jacobian(_Workspace(gp, queries))


def cov_hessian_diag(gp: GPRegressor, queries) -> np.ndarray:
    """Same-point second derivatives of the covariance, (t, t, n, p, p)."""
    return _cov_hessian_diag(_Workspace(gp, queries))


def mean_hessian_full(gp: GPRegressor, queries,
                      max_coords: int = MAX_FULL_HESSIAN_COORDS) -> np.ndarray:
    """Full mean Hessian across all training coordinates, (t, n*p, n*p).

    Includes the cross-point blocks that the diagonal tensors drop.
    Memory grows as t * (n*p)^2; requests beyond max_coords coordinates
    raise ResourceLimit.
    """
    ws = _Workspace(gp, queries)
    return _mean_hessian_full(ws, max_coords)


def _mean_hessian_full(ws: _Workspace, max_coords: int = MAX_FULL_HESSIAN_COORDS) -> np.ndarray:
    n, p, t, w = ws.n, ws.p, ws.t, ws.w
    if n * p > max_coords:
        raise ResourceLimit(
            f"full Hessian needs (n*p)^2 = {(n * p)**2} blocks; "
            f"limit is n*p <= {max_coords}")
    P = ws.full_inverse()
    U, s, dK, hK = ws.U, ws.s, ws.dK, ws.hK
    A, Gq, TAd = ws.A, ws.Gq, ws.TAd

    # C[m, b, l] = (K^-1 dK_{bl} w)[m]
    C = P[:, :, None] * s[None, :, :] + U * w[None, :, None]
    # dU[a, l, b, j] = d_{al} . (K^-1 d_{bj})
    dU = np.einsum("aml,mbj->albj", dK, U)

    def sym(term):
        # (a, j) <-> (b, l) exchange of term[e, a, j, b, l]
        return term + term.transpose(0, 3, 4, 1, 2)

    H = -sym(np.einsum("eaj,abl->eajbl", Gq, C))
    H += sym(np.einsum("eb,abl,aj->eajbl", A, U, s)
             + np.einsum("eb,blaj,a->eajbl", A, dU, w)
             + np.einsum("ebl,baj->eajbl", TAd, C))
    H += np.einsum("abjl,ea,b->eajbl", hK, A, w) + np.einsum("abjl,eb,a->eajbl", hK, A, w)

    # Same-point blocks pick up the terms the rank-2 structure misses.
    idx = np.arange(n)
    diag = (ws.Hq * w[None, :, None, None]
            - np.einsum("ei,ijl->eijl", A, ws.hw)
            - ws.TAh * w[None, :, None, None])
    H[:, idx, :, idx, :] += diag.transpose(1, 0, 2, 3)
    return H.reshape(t, n * p, n * p)


def build_bundle(gp: GPRegressor, queries, include_full_mean_hessian: bool = False,
                 max_coords: int = MAX_FULL_HESSIAN_COORDS) -> DerivativeBundle:
    """Assemble every derivative tensor for a fitted model at fixed queries.

    This is the offline step: all solves and einsums happen here, once.
    Applying an input-error correction later touches only the stored
    tensors.
    """
    ws = _Workspace(gp, queries)
    mean = MeanDerivatives(
        jacobian=_mean_jacobian(ws),
        hessian_diag=_mean_hessian_diag(ws),
        hessian_full=_mean_hessian_full(ws, max_coords) if include_full_mean_hessian else None,
    )
    cov = CovDerivatives(
        jacobian=_cov_jacobian(ws),
        hessian_diag=_cov_hessian_diag(ws),
    )
    params = gp._params()
    meta = BundleMeta(
        n=ws.n, t=ws.t, p=ws.p,
        amplitude=params.amplitude, length_scale=params.length_scale,
        noise_std=params.noise_std, jitter=params.jitter,
        planned_inputs_hash=gp.digest_,
        measurements_hash=inputs_digest(gp.y_train_[:, None]),
        created_with_measurements=True,
    )
    return DerivativeBundle(meta=meta, mean=mean, cov=cov, queries=ws.queries)
