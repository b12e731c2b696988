"""Weighted mass matrices, matrix-free weight-adjusted inverses, L2 and
weight-adjusted projections, the square-root-weighted projection error, and
moment (local conservation) diagnostics.

Element fields are coefficient arrays in the nodal basis of a
ReferenceElement; weights live at that element's volume quadrature points.
Batched forms take (K, Np) / (K, Nq) arrays; single-element (Np,) / (Nq,)
inputs are accepted everywhere.
"""

from __future__ import annotations

import numpy as np


class NotSPD(Exception):
    """A weighted mass matrix failed to be symmetric positive definite."""


def _check_weight(w):
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise NotSPD(f"weight must be positive and finite, min = {np.min(w):.3e}")


def weighted_mass_matrix(ref, w, check=True):
    """Mass matrices int phi_i phi_j w, one per row of w, shape (..., Np, Np).

    Assembled with ref's volume quadrature; requires exactness >= 2N for w
    constant in P^0 to be exact.  Raises NotSPD if any matrix fails a
    Cholesky factorization.
    """
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    W = np.atleast_2d(w) * ref.wq[None, :]
    M = np.einsum("kq,qi,qj->kij", W, ref.Vq, ref.Vq, optimize=True)
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    if check:
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError as exc:
            raise NotSPD(f"weighted mass matrix not positive definite: {exc}") from exc
    return M[0] if single else M


def apply_weight_adjusted_inverse(ref, w_inv, rhs, premultiplied=True):
    """Matrix-free application of Mhat^-1 M_{1/w} Mhat^-1 to rhs.

    `w_inv` holds values of 1/w at ref's volume quadrature points.  With
    premultiplied=True (the fused-kernel convention) rhs is assumed to carry
    a leading Mhat^-1 already and the result is Pq diag(w_inv) Vq rhs.
    Only reference matrices and the pointwise weight values are touched; no
    per-element matrix is formed.
    """
    w_inv = np.asarray(w_inv, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    single = rhs.ndim == 1
    z = np.atleast_2d(rhs)
    if not premultiplied:
        z = z @ ref.Mhat_inv.T
    out = (np.atleast_2d(w_inv) * (z @ ref.Vq.T)) @ ref.Pq.T
    return out[0] if single else out


def l2_project(ref, geo, exact_fn):
    """Per-element coefficients of the J-weighted L2 projection of exact_fn.

    Solves M_J c = Vq^T diag(w J) f elementwise by dense factorization; the
    accuracy of M_J is set by ref's quadrature degree.
    """
    fq = exact_fn(geo.xq, geo.yq)
    M = weighted_mass_matrix(ref, geo.Jq, check=False)
    rhs = (ref.wq[None, :] * geo.Jq * fq) @ ref.Vq
    return np.linalg.solve(M, rhs[:, :, None])[:, :, 0]


def wadg_pseudo_project(ref, geo, exact_fn, project_weight=False):
    """Weight-adjusted approximation of the J-weighted L2 projection:
    the composition of reference L2 projections u -> P(1/J * P(u J)).

    With project_weight=True the inverse-weight values are taken from the
    degree-N reference L2 projection of J (the load keeps the true J), which
    makes the projected-J moment of the output match the true J-moment of u
    exactly, restoring local conservation.
    """
    fq = exact_fn(geo.xq, geo.yq)
    load = (ref.wq[None, :] * geo.Jq * fq) @ ref.Vq
    Jq = geo.Jq
    if project_weight:
        Jq = (Jq @ ref.Pq.T) @ ref.Vq.T
    return apply_weight_adjusted_inverse(ref, 1.0 / Jq, load, premultiplied=False)


def lsc_projection_error(ref, geo, exact_fn):
    """Per-element J-weighted L2 error of the square-root-weighted
    projection u -> (1/sqrt(J)) P(u sqrt(J)); diagnostic only."""
    fq = exact_fn(geo.xq, geo.yq)
    sq = np.sqrt(geo.Jq)
    c = (fq * sq) @ ref.Pq.T
    resid = fq - (c @ ref.Vq.T) / sq
    return np.sqrt(np.sum(ref.wq[None, :] * geo.Jq * resid**2, axis=1))


def global_l2_error(ref, geo, coeffs, exact_fn):
    """sqrt(sum_k sum_q w_q J_q (u_h - u)^2) with fixed summation order."""
    uq = np.atleast_2d(coeffs) @ ref.Vq.T
    fq = exact_fn(geo.xq, geo.yq)
    return float(np.sqrt(np.sum(ref.wq[None, :] * geo.Jq * (uq - fq) ** 2)))


def _monomials(shape, M, points):
    cols = []
    for a in range(M + 1):
        for b in range(M + 1 - a):
            cols.append(points[:, 0] ** a * points[:, 1] ** b)
    return np.column_stack(cols)


def conservation_moment_error(ref, geo, w, u_fn, M):
    """Worst moment discrepancy of the weight-adjusted inner product.

    max over elements and test monomials v in P^M of
    |(w u, v)_ref - (T_{1/w}^{-1} u, v)_ref|, with all inner products under
    ref's volume quadrature.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    _check_weight(w)
    uq = u_fn(geo.xq, geo.yq)
    Vm = _monomials(ref.shape, M, ref.volume_quad.points)  # (Nq, n_mono)
    Minv = weighted_mass_matrix(ref, 1.0 / w)
    load = (ref.wq[None, :] * uq) @ ref.Vq
    z = np.linalg.solve(Minv, load[:, :, None])[:, :, 0]
    zq = z @ ref.Vq.T
    lhs = (ref.wq[None, :] * w * uq) @ Vm
    rhs = (ref.wq[None, :] * zq) @ Vm
    return float(np.max(np.abs(lhs - rhs)))
