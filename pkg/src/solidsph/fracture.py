"""Hyperbolic phase-field evolution: history functional, SPH Laplacian of
the phase field, the s-acceleration update, and phase-field clamps."""

from __future__ import annotations

import numpy as np

from . import expr as ex
from .core import CaseError


def history_update(psi_plus, H_prev):
    """H = max(psi_plus, H_prev): cracks do not heal."""
    return np.maximum(psi_plus, H_prev)


def sph_laplacian_s(body, be, out):
    """SPH Laplacian of the phase field on the reference configuration."""
    adj = body.adjacency
    st = body.state
    return be.sph_laplacian(adj.indptr, adj.rows, adj.indices, adj.grad0,
                            adj.r0, adj.r0norm, st.V0, st.s, out)


def phase_field_accel(s, sdot, lap_s, H, Gc, eps0, c):
    """s-ddot of the damped hyperbolic phase-field equation with the damping
    bound substituted in."""
    ratio = H / Gc
    damp = 2.0 * np.sqrt(4.0 * eps0 * ratio + 1.0) / c
    return (c * c / (2.0 * eps0)) * (
        2.0 * eps0 * lap_s + (1.0 - s) / (2.0 * eps0) - damp * sdot
        - 2.0 * s * ratio)


def update_phase_acceleration(body, be, ws):
    """Force-phase fracture work: advance the history field from the
    current tensile energy density, then evaluate s-ddot."""
    st = body.state
    mat = body.material
    st.Hhist[:] = history_update(st.psi_plus, st.Hhist)
    sph_laplacian_s(body, be, ws.lap_s)
    st.sddot[:] = phase_field_accel(st.s, st.sdot, ws.lap_s, st.Hhist,
                                    mat.Gc, mat.eps0, mat.c0)


def restrictphi_values(body, expressions, t, dt):
    """Evaluate the body's restrictphi expression; returns (floor, applied)
    or None when the body has no restriction."""
    if body.restrictphi_expr is None:
        return None
    ast = expressions.get(body.restrictphi_expr)
    if ast is None:
        raise CaseError(
            f"restrictphi references unknown expression id "
            f"{body.restrictphi_expr} (body {body.mk})")
    ctx = ex.field_context(body, t, dt)
    vals, skip = ex.eval_field(ast, ctx, body.n)
    applied = ~skip
    if np.any(applied & ((vals < 0.0) | (vals > 1.0))):
        raise CaseError(
            f"restrictphi expression must evaluate within [0, 1] "
            f"(body {body.mk})")
    return vals, applied


def apply_phase_clamps(body, restrict):
    """Clamp s to [0,1] and to the restrictphi floor; the rate is zeroed
    wherever a clamp engages so the clamp does not fight momentum in s."""
    st = body.state
    low = st.s < 0.0
    high = st.s > 1.0
    if low.any():
        st.s[low] = 0.0
        st.sdot[low] = 0.0
    if high.any():
        st.s[high] = 1.0
        st.sdot[high] = 0.0
    if restrict is not None:
        vals, applied = restrict
        engage = applied & (st.s < vals)
        if engage.any():
            st.s[engage] = vals[engage]
            st.sdot[engage] = 0.0
