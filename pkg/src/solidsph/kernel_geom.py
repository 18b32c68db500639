"""Smoothing kernels, reference-configuration neighbor search, first-order
kernel-gradient correction, and notch bond severing.

All of this is build-once data: adjacency is constructed on the reference
configuration and never rebuilt (total Lagrangian contract).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from .core import Adjacency, CaseError, KernelKind

# condition-number ceiling for the moment matrix before the identity fallback
COND_LIMIT = 1.0e8


def smoothing_length(dp, coefh, dim):
    """h = coefh * dp * sqrt(dim)  (sqrt(3) in 3D, sqrt(2) in 2D)."""
    if dp <= 0.0 or coefh <= 0.0:
        raise CaseError("dp and coefh must be positive")
    if dim not in (2, 3):
        raise CaseError(f"dim must be 2 or 3, got {dim}")
    return coefh * dp * math.sqrt(dim)


def kernel_eval(q, h, dim, kind):
    """Kernel value and radial derivative at q = r/h.

    Support radius is 2h for both kernels.  Returns (W, dW/dr) with the same
    shape as q.
    """
    q = np.asarray(q, dtype=np.float64)
    if dim == 2:
        alpha_c = 10.0 / (7.0 * math.pi * h * h)
        alpha_w = 7.0 / (4.0 * math.pi * h * h)
    elif dim == 3:
        alpha_c = 1.0 / (math.pi * h ** 3)
        alpha_w = 21.0 / (16.0 * math.pi * h ** 3)
    else:
        raise CaseError(f"dim must be 2 or 3, got {dim}")

    if kind == KernelKind.CUBIC_SPLINE:
        w = np.where(
            q < 1.0,
            1.0 - 1.5 * q * q + 0.75 * q ** 3,
            np.where(q < 2.0, 0.25 * (2.0 - q) ** 3, 0.0))
        dw = np.where(
            q < 1.0,
            -3.0 * q + 2.25 * q * q,
            np.where(q < 2.0, -0.75 * (2.0 - q) ** 2, 0.0))
        return alpha_c * w, alpha_c * dw / h
    if kind == KernelKind.WENDLAND:
        inside = q < 2.0
        t = np.where(inside, 1.0 - 0.5 * q, 0.0)
        w = t ** 4 * (2.0 * q + 1.0)
        dw = -5.0 * q * t ** 3
        return alpha_w * w, alpha_w * dw / h
    raise CaseError(f"unknown kernel kind {kind!r}")


def build_pairs(positions, h, nbsrange=None, dp_body=None):
    """Symmetric neighbor pair list on the reference configuration.

    Pairs satisfy |Xi-Xj| < 2h, or a per-axis |dX| <= nbsrange*dp_body
    window when nbsrange is given (which replaces the radial rule).
    Returns (rows, cols) covering both directions of every pair.
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if n < 2:
        raise CaseError("need at least 2 particles to build neighbors")
    tree = cKDTree(positions)
    if nbsrange is not None:
        win = nbsrange * dp_body * (1.0 + 1e-9)
        cand = tree.query_pairs(r=win * math.sqrt(3.0) * (1 + 1e-12),
                                output_type="ndarray")
        if cand.size:
            d = np.abs(positions[cand[:, 0]] - positions[cand[:, 1]])
            keep = np.all(d <= win, axis=1)
            cand = cand[keep]
    else:
        cand = tree.query_pairs(r=2.0 * h * (1 + 1e-12), output_type="ndarray")
        if cand.size:
            d = positions[cand[:, 0]] - positions[cand[:, 1]]
            keep = np.einsum("kd,kd->k", d, d) < (2.0 * h) ** 2
            cand = cand[keep]
    if cand.size == 0:
        raise CaseError("no neighbor pairs found (body too sparse for the "
                        "kernel support)")
    rows = np.concatenate([cand[:, 0], cand[:, 1]])
    cols = np.concatenate([cand[:, 1], cand[:, 0]])
    order = np.lexsort((cols, rows))
    return rows[order], cols[order]


def _quad_frame(quad, scale):
    """Orthonormal in-plane frame and 2D polygon for a planar quad."""
    p = quad.points
    e1 = p[1] - p[0]
    nvec = np.cross(e1, p[2] - p[0])
    nn = np.linalg.norm(nvec)
    if nn <= 1e-14 * max(scale, 1e-300) ** 2:
        raise CaseError("degenerate quad (zero area)")
    nhat = nvec / nn
    diag = np.linalg.norm(p.max(axis=0) - p.min(axis=0))
    if abs((p[3] - p[0]) @ nhat) > 1e-6 * diag:
        raise CaseError("quad points are not coplanar")
    e1h = e1 / np.linalg.norm(e1)
    e2h = np.cross(nhat, e1h)
    poly = (p - p[0]) @ np.stack([e1h, e2h], axis=1)
    return p[0], nhat, e1h, e2h, poly


def _points_in_poly(pts2, poly):
    """Edge-inclusive membership test for a convex polygon with either
    winding."""
    m = poly.shape[0]
    tol = 1e-12 * max(1.0, np.abs(poly).max())
    pos = np.ones(pts2.shape[0], dtype=bool)
    neg = np.ones(pts2.shape[0], dtype=bool)
    for k in range(m):
        a = poly[k]
        b = poly[(k + 1) % m]
        cr = (b[0] - a[0]) * (pts2[:, 1] - a[1]) - (b[1] - a[1]) * (pts2[:, 0] - a[0])
        pos &= cr >= -tol
        neg &= cr <= tol
    return pos | neg


def segments_cross_quad(Xa, Xb, quad):
    """Vectorized test: does segment Xa->Xb intersect the quadrilateral?

    An endpoint lying on the plane counts as crossing when the other
    endpoint is strictly on either side (sharp pre-crack semantics)."""
    Xa = np.atleast_2d(Xa)
    Xb = np.atleast_2d(Xb)
    scale = max(np.abs(quad.points).max(), 1.0)
    origin, nhat, e1h, e2h, poly = _quad_frame(quad, scale)
    da = (Xa - origin) @ nhat
    db = (Xb - origin) @ nhat
    tol = 1e-12 * scale
    opposite = ((da < -tol) & (db > tol)) | ((da > tol) & (db < -tol))
    touching = ((np.abs(da) <= tol) & (np.abs(db) > tol)) | \
               ((np.abs(db) <= tol) & (np.abs(da) > tol))
    cand = opposite | touching
    out = np.zeros(Xa.shape[0], dtype=bool)
    if not cand.any():
        return out
    denom = da[cand] - db[cand]
    denom = np.where(np.abs(denom) < 1e-300, 1e-300, denom)
    t = np.clip(da[cand] / denom, 0.0, 1.0)
    pts = Xa[cand] + t[:, None] * (Xb[cand] - Xa[cand])
    loc = (pts - origin) @ np.stack([e1h, e2h], axis=1)
    out[cand] = _points_in_poly(loc, poly)
    return out


def sever_notch_bonds(rows, cols, positions, quad):
    """Remove every pair whose reference segment crosses the notch quad."""
    crossed = segments_cross_quad(positions[rows], positions[cols], quad)
    keep = ~crossed
    return rows[keep], cols[keep]


def _csr_from_pairs(rows, cols, n):
    counts = np.bincount(rows, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr


def correction_matrices(positions, V0, rows, cols, grad_base, dim):
    """First-order renormalization matrices L_i.

    L_i = (sum_j V0_j grad_ij ox (Xj - Xi))^-1, applied as grad~ = L_i grad,
    which reproduces affine fields exactly.  In 2D the out-of-plane row and
    column are replaced by the identity before inversion.  Near-singular
    moment matrices (cond >= 1e8) fall back to the identity; the fallback
    count is returned.
    """
    n = positions.shape[0]
    d = positions[cols] - positions[rows]
    A = np.zeros((n, 3, 3))
    contrib = V0[cols, None, None] * grad_base[:, :, None] * d[:, None, :]
    np.add.at(A, rows, contrib)
    if dim == 2:
        A[:, 1, :] = 0.0
        A[:, :, 1] = 0.0
        A[:, 1, 1] = 1.0
    L = np.empty_like(A)
    fallbacks = 0
    finite = np.isfinite(A).all(axis=(1, 2))
    with np.errstate(all="ignore"):
        conds = np.full(n, np.inf)
        conds[finite] = np.linalg.cond(A[finite])
    good = finite & np.isfinite(conds) & (conds < COND_LIMIT)
    L[~good] = np.eye(3)
    fallbacks = int(np.count_nonzero(~good))
    if good.any():
        L[good] = np.linalg.inv(A[good])
    return L, fallbacks


def moment_matrix(positions, V0, rows, cols, grad_base, dim, i):
    """Moment matrix of one particle (test/diagnostic helper)."""
    sel = rows == i
    d = positions[cols[sel]] - positions[i]
    A = np.einsum("k,kr,kc->rc", V0[cols[sel]], grad_base[sel], d)
    if dim == 2:
        A[1, :] = 0.0
        A[:, 1] = 0.0
        A[1, 1] = 1.0
    return A


def build_adjacency(positions, V0, h, dim, kind, nbsrange=None, dp_body=None,
                    notches=(), correction=True):
    """Full adjacency construction: pairs, notch severing, kernel values,
    corrected gradients.  Raises CaseError for isolated particles."""
    rows, cols = build_pairs(positions, h, nbsrange=nbsrange, dp_body=dp_body)
    for quad in notches:
        rows, cols = sever_notch_bonds(rows, cols, positions, quad)
    n = positions.shape[0]
    counts = np.bincount(rows, minlength=n)
    if (counts == 0).any():
        lonely = int(np.flatnonzero(counts == 0)[0])
        raise CaseError(
            f"particle {lonely} has no neighbors after notch severing")
    indptr = _csr_from_pairs(rows, cols, n)
    r0 = positions[rows] - positions[cols]
    r0norm = np.linalg.norm(r0, axis=1)
    w0, dwdr = kernel_eval(r0norm / h, h, dim, kind)
    with np.errstate(invalid="ignore", divide="ignore"):
        grad_base = (dwdr / r0norm)[:, None] * r0
    grad_base[r0norm == 0.0] = 0.0
    fallbacks = 0
    if correction:
        L, fallbacks = correction_matrices(positions, V0, rows, cols,
                                           grad_base, dim)
        grad = np.einsum("kab,kb->ka", L[rows], grad_base)
    else:
        grad = grad_base
    # reverse-pair lookup: pair (i, j) -> index of pair (j, i); keys are the
    # lexsorted (rows, cols) codes, so searchsorted lands exactly
    keys = rows.astype(np.int64) * n + cols
    rev = np.searchsorted(keys, cols.astype(np.int64) * n + rows)
    return Adjacency(
        indptr=indptr,
        rows=np.ascontiguousarray(rows, dtype=np.int64),
        indices=np.ascontiguousarray(cols, dtype=np.int64),
        grad0=np.ascontiguousarray(grad),
        grad0r=np.ascontiguousarray(grad[rev]),
        r0=np.ascontiguousarray(r0),
        r0norm=np.ascontiguousarray(r0norm),
        w0=np.ascontiguousarray(w0),
        correction_fallbacks=fallbacks,
    )
