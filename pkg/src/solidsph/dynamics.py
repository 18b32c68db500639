"""Per-particle force assembly: discrete deformation gradients, TLSPH
internal forces with artificial viscosity, simplified inter-body penalty
contact, and external loads."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from . import expr as ex
from .core import J_MIN, CaseError, SimulationError, youngs_from_lame


class Workspace:
    """Per-body scratch buffers reused across steps."""

    def __init__(self, n):
        self.P = np.zeros((n, 3, 3))
        self.a_int = np.zeros((n, 3))
        self.a_contact = np.zeros((n, 3))
        self.lap_s = np.zeros(n)
        self.grad_s = np.zeros((n, 3))
        self.dwp = np.zeros(n)


def compute_deformation_gradients(body, be):
    """F_i = I + sum_j V0_j (u_j - u_i) x grad0_ij, routed through the
    phase-field gate when fracture is on."""
    adj = body.adjacency
    st = body.state
    be.deformation_gradient(
        adj.indptr, adj.rows, adj.indices, adj.grad0, st.u, st.V0,
        st.s, body.material.s_l, body.fracture, st.F)


def artificial_viscosity_term(v_i, v_j, X_i, X_j, h, c0, rho0, beta1, beta2,
                              F_i):
    """Pairwise viscosity tensor P_v = det(F_i) * pi_ij * F_i^-1.

    pi > 0 for approaching pairs (dissipative sign).  Degenerate F_i
    (det <= J_MIN) yields a zero tensor."""
    r = np.asarray(X_i, dtype=np.float64) - np.asarray(X_j, dtype=np.float64)
    dv = np.asarray(v_i, dtype=np.float64) - np.asarray(v_j, dtype=np.float64)
    r2 = float(r @ r)
    if r2 <= 0.0:
        raise SimulationError("coincident reference positions in viscosity term")
    G = h * float(dv @ r) / (r2 + 0.001 * h * h)
    pi = (beta2 * G * G - beta1 * c0 * G) / rho0
    detF = float(np.linalg.det(F_i))
    if detF <= J_MIN:
        return np.zeros((3, 3))
    return detF * pi * np.linalg.inv(F_i)


def internal_forces(body, be, ws):
    """Momentum-balance acceleration from internal stresses and artificial
    viscosity (body force and externals are added by the stepper)."""
    st = body.state
    mat = body.material
    adj = body.adjacency
    np.matmul(st.F, st.S, out=ws.P)
    n_bad = be.momentum(
        adj.indptr, adj.rows, adj.indices, adj.grad0, adj.grad0r, adj.r0,
        adj.r0norm, ws.P, st.m0, mat.rho0, st.v, body.h, mat.c0, mat.beta1,
        mat.beta2, st.F, ws.a_int)
    body.degenerate_warnings += int(n_bad)
    return ws.a_int


def damping_ratio(restcoef):
    """Spring-dashpot damping ratio giving the requested restitution."""
    if restcoef >= 1.0:
        return 0.0
    e = max(restcoef, 1e-4)
    ln_e = math.log(e)
    return -ln_e / math.sqrt(math.pi ** 2 + ln_e * ln_e)


def contact_forces(bodies, contcoeff, be, workspaces):
    """Penalty contact between every pair of bodies.

    Cross-body particle pairs closer than dp_contact = (dp_a + dp_b)/2 in
    the current configuration receive a normal spring-dashpot force (spring
    k_n = contcoeff * min(E_a, E_b) * dp_contact, damping calibrated from
    the restitution coefficient) plus a Coulomb-capped tangential force.
    Forces are equal and opposite on the pair."""
    n_warn = 0
    for ws in workspaces:
        ws.a_contact[:] = 0.0
    xs = [b.state.x for b in bodies]
    for ia in range(len(bodies)):
        for ib in range(ia + 1, len(bodies)):
            a, b = bodies[ia], bodies[ib]
            dpc = 0.5 * (a.dp_body + b.dp_body)
            # cheap AABB gate: only particles inside the inflated overlap
            # box can touch
            xa, xb = xs[ia], xs[ib]
            lo = np.maximum(xa.min(axis=0), xb.min(axis=0)) - dpc
            hi = np.minimum(xa.max(axis=0), xb.max(axis=0)) + dpc
            if np.any(lo > hi):
                continue
            sub_a = np.flatnonzero(
                np.all((xa >= lo) & (xa <= hi), axis=1))
            sub_b = np.flatnonzero(
                np.all((xb >= lo) & (xb <= hi), axis=1))
            if sub_a.size == 0 or sub_b.size == 0:
                continue
            hits = cKDTree(xa[sub_a]).query_ball_tree(
                cKDTree(xb[sub_b]), r=dpc)
            counts = [len(h) for h in hits]
            total = sum(counts)
            if total == 0:
                continue
            pairs = np.empty((total, 2), dtype=np.int64)
            pairs[:, 0] = sub_a[np.repeat(np.arange(len(hits)), counts)]
            pairs[:, 1] = sub_b[np.fromiter(
                (j for h in hits for j in sorted(h)), dtype=np.int64,
                count=total)]
            Ea = youngs_from_lame(a.material.lam, a.material.mu)[0]
            Eb = youngs_from_lame(b.material.lam, b.material.mu)[0]
            k_n = contcoeff * min(Ea, Eb) * dpc
            ma = float(np.mean(a.state.m0))
            mb = float(np.mean(b.state.m0))
            m_eff = ma * mb / (ma + mb)
            zeta = damping_ratio(min(a.material.restcoef, b.material.restcoef))
            c_n = 2.0 * zeta * math.sqrt(k_n * m_eff)
            kfric = 0.5 * (a.material.kfric + b.material.kfric)
            n_warn += int(be.contact_pair_accumulate(
                a.state.x, a.state.v, a.state.m0,
                b.state.x, b.state.v, b.state.m0,
                pairs, dpc, k_n, c_n, kfric,
                workspaces[ia].a_contact, workspaces[ib].a_contact))
    return n_warn


def _axis_values(bc, axis, expressions, ctx, idx_count):
    """Per-axis BC evaluation: (values, applied_mask) or None if the axis
    is untouched."""
    const = bc.const[axis]
    if const is not None:
        return np.full(idx_count, const), np.ones(idx_count, dtype=bool)
    expr_id = bc.expr[axis]
    if expr_id is None:
        return None
    ast = expressions.get(expr_id)
    if ast is None:
        raise CaseError(f"boundary condition references unknown expression "
                        f"id {expr_id}")
    vals, skip = ex.eval_field(ast, ctx, idx_count)
    return vals, ~skip


def _subset_ctx(ctx, idx):
    return ctx.subset(idx) if idx is not None else ctx


def external_force_accel(body, bc, t, dt, expressions, a_out):
    """Add one force BC's contribution to the acceleration array.

    type 1: point force [N] -> F/m0; type 2: surface traction [N/m^2]
    scaled by the per-particle surface measure dp_body^(d-1); type 3:
    acceleration passthrough."""
    if not bc.active(t):
        return
    idx = bc.target
    count = body.n if idx is None else idx.shape[0]
    if count == 0:
        return
    ctx = _subset_ctx(ex.field_context(body, t, dt), idx)
    if bc.ftype == 1:
        scale = 1.0 / (body.state.m0 if idx is None else body.state.m0[idx])
    elif bc.ftype == 2:
        area = body.dp_body ** (body.dim - 1)
        scale = area / (body.state.m0 if idx is None else body.state.m0[idx])
    elif bc.ftype == 3:
        scale = np.ones(count)
    else:
        raise CaseError(f"unknown force BC type {bc.ftype}")
    for axis in range(3):
        got = _axis_values(bc, axis, expressions, ctx, count)
        if got is None:
            continue
        vals, mask = got
        add = np.where(mask, vals * scale, 0.0)
        if idx is None:
            a_out[:, axis] += add
        else:
            a_out[idx, axis] += add


def apply_velocity_bcs(body, t, dt, expressions):
    """Overwrite prescribed velocity components; expression `skip` leaves a
    component untouched.  BCs apply in file order (later wins)."""
    st = body.state
    ctx_full = None
    for bc in body.bcs:
        if bc.kind != "vel" or not bc.active(t):
            continue
        idx = bc.target
        count = body.n if idx is None else idx.shape[0]
        if count == 0:
            continue
        if ctx_full is None:
            ctx_full = ex.field_context(body, t, dt)
        ctx = _subset_ctx(ctx_full, idx)
        for axis in range(3):
            got = _axis_values(bc, axis, expressions, ctx, count)
            if got is None:
                continue
            vals, mask = got
            if idx is None:
                st.v[mask, axis] = vals[mask]
            else:
                sel = idx[mask]
                st.v[sel, axis] = vals[mask]
