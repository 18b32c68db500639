"""Pure-numpy implementations of the per-step kernels.

This is the fallback path (SOLIDSPH_BACKEND=numpy) and the readable
reference for the numba mirrors in fast.py.  Pair sums run over the CSR
adjacency with np.add.at, which accumulates in index order, so results are
deterministic.
"""

from __future__ import annotations

import numpy as np

from ..core import J_MIN

NAME = "numpy"


def deformation_gradient(indptr, rows, indices, grad0, u, V0, s, s_l, gated, out):
    """F_i = I + sum_j V0_j (u_j - u_i) x grad0_ij, identity-gated when the
    phase field sits at or below s_l."""
    n = out.shape[0]
    du = u[indices] - u[rows]
    contrib = (V0[indices, None, None]
               * du[:, :, None] * grad0[:, None, :])
    out[:] = np.eye(3)
    np.add.at(out, rows, contrib)
    if gated:
        out[s <= s_l] = np.eye(3)
    return out


def sph_laplacian(indptr, rows, indices, grad0, r0, r0norm, V0, f, out):
    """Brookshaw-style SPH Laplacian on the reference configuration."""
    df = f[rows] - f[indices]
    rdotg = np.einsum("kd,kd->k", r0, grad0)
    contrib = 2.0 * df * V0[indices] * rdotg / (r0norm * r0norm)
    out[:] = 0.0
    np.add.at(out, rows, contrib)
    return out


def sph_gradient(indptr, rows, indices, grad0, V0, f, out):
    """Corrected SPH gradient of a scalar field (used for the crack-surface
    energy density)."""
    df = f[indices] - f[rows]
    contrib = (V0[indices] * df)[:, None] * grad0
    out[:] = 0.0
    np.add.at(out, rows, contrib)
    return out


def momentum(indptr, rows, indices, grad0, grad0r, r0, r0norm, P, m0, rho0,
             v, h, c0, beta1, beta2, F, out):
    """TLSPH momentum sum with Monaghan-type artificial viscosity.

    The neighbor stress rides on the reverse-pair gradient (exact discrete
    strain-energy gradient; identical to the +grad0 bracket when the kernel
    correction is off).  The viscous term det(F_i) pi_ij F_i^-1 is applied
    along the j->i direction (opposite the corrected gradient) so that
    pi > 0 on approach is dissipative.  Returns the number of
    viscosity-degenerate particles (det F <= J_MIN)."""
    n = out.shape[0]
    inv_rho2 = 1.0 / (rho0 * rho0)
    f_pair = (np.einsum("kab,kb->ka", P[rows], grad0)
              - np.einsum("kab,kb->ka", P[indices], grad0r)) * inv_rho2
    n_bad = 0
    if beta1 != 0.0 or beta2 != 0.0:
        dv = v[rows] - v[indices]
        G = h * np.einsum("kd,kd->k", dv, r0) / (r0norm * r0norm + 0.001 * h * h)
        pi = (beta2 * G * G - beta1 * c0 * G) / rho0
        detF = np.linalg.det(F)
        bad = detF <= J_MIN
        n_bad = int(np.count_nonzero(bad))
        Fsafe = np.where(bad[:, None, None], np.eye(3), F)
        Avis = np.linalg.inv(Fsafe) * detF[:, None, None]
        Avis[bad] = 0.0
        f_pair -= pi[:, None] * np.einsum("kab,kb->ka", Avis[rows], grad0)
    contrib = m0[indices, None] * f_pair
    out[:] = 0.0
    np.add.at(out, rows, contrib)
    return n_bad


def _eigh_split(E):
    """Spectral +/- split of a batch of symmetric matrices."""
    w, Q = np.linalg.eigh(E)
    wp = np.clip(w, 0.0, None)
    wm = np.clip(w, None, 0.0)
    Ep = np.einsum("nij,nj,nkj->nik", Q, wp, Q)
    Em = np.einsum("nij,nj,nkj->nik", Q, wm, Q)
    return Ep, Em


def svk_batch(F, lam, mu, s, fracture, out_S, out_psi, out_psip):
    """St. Venant-Kirchhoff stress with optional spectral degradation."""
    Ft = np.swapaxes(F, 1, 2)
    E = 0.5 * (np.matmul(Ft, F) - np.eye(3))
    E = 0.5 * (E + np.swapaxes(E, 1, 2))
    trE = np.trace(E, axis1=1, axis2=2)
    if not fracture:
        out_S[:] = lam * trE[:, None, None] * np.eye(3) + 2.0 * mu * E
        out_psi[:] = 0.5 * lam * trE * trE + mu * np.einsum("nij,nij->n", E, E)
        out_psip[:] = 0.0
        return 0
    Ep, Em = _eigh_split(E)
    trp = np.clip(trE, 0.0, None)
    trm = np.clip(trE, None, 0.0)
    Sp = lam * trp[:, None, None] * np.eye(3) + 2.0 * mu * Ep
    Sm = lam * trm[:, None, None] * np.eye(3) + 2.0 * mu * Em
    s2 = (s * s)[:, None, None]
    out_S[:] = s2 * Sp + Sm
    psip = 0.5 * lam * trp * trp + mu * np.einsum("nij,nij->n", Ep, Ep)
    psim = 0.5 * lam * trm * trm + mu * np.einsum("nij,nij->n", Em, Em)
    out_psi[:] = s * s * psip + psim
    out_psip[:] = psip
    return 0


def nh_batch(F, kappa, mu, s, fracture, out_S, out_psi, out_psip):
    """Compressible neo-Hookean stress written through b = F F^T, with the
    volumetric/isochoric fracture split.  Degenerate particles
    (det F <= J_MIN) are zeroed; their count is returned."""
    J = np.linalg.det(F)
    bad = J <= J_MIN
    n_bad = int(np.count_nonzero(bad))
    Fsafe = np.where(bad[:, None, None], np.eye(3), F)
    Js = np.where(bad, 1.0, J)
    b = np.matmul(Fsafe, np.swapaxes(Fsafe, 1, 2))
    binv = np.linalg.inv(b)
    trb = np.trace(b, axis1=1, axis2=2)
    Svol = 0.5 * kappa * (Js * Js - 1.0)[:, None, None] * binv
    Siso = (Js ** (-2.0 / 3.0))[:, None, None] * mu * (
        np.eye(3) - (trb / 3.0)[:, None, None] * binv)
    U = 0.5 * kappa * (0.5 * (Js * Js - 1.0) - np.log(Js))
    psibar = 0.5 * mu * (Js ** (-2.0 / 3.0) * trb - 3.0)
    tension = Js >= 1.0
    s2 = s * s if fracture else np.ones_like(s)
    w_vol = np.where(tension, s2, 1.0)
    w_iso = s2
    out_S[:] = w_vol[:, None, None] * Svol + w_iso[:, None, None] * Siso
    psip = np.where(tension, U + psibar, psibar)
    psim = np.where(tension, 0.0, U)
    out_psi[:] = s2 * psip + psim
    out_psip[:] = psip
    out_S[bad] = 0.0
    out_psi[bad] = 0.0
    out_psip[bad] = 0.0
    return n_bad


def j2_batch(F, Cp, epbar, mu, kappa, sigma_y0, H_hard,
             out_S, out_psi, out_dwp):
    """Finite-strain J2 radial return on the plastic metric Cp (updated in
    place together with epbar).  out_dwp receives the plastic dissipation
    density increment sigma_y(mid) * d(epbar).  Returns (n_degenerate,
    first_bad_particle or -1 on a non-SPD Cp update)."""
    n = F.shape[0]
    J = np.linalg.det(F)
    bad = J <= J_MIN
    n_bad = int(np.count_nonzero(bad))
    Fsafe = np.where(bad[:, None, None], np.eye(3), F)
    Js = np.where(bad, 1.0, J)
    C = np.matmul(np.swapaxes(Fsafe, 1, 2), Fsafe)
    Ce = np.matmul(C, np.linalg.inv(Cp))
    Je = Js
    fac = Je ** (-2.0 / 3.0)
    Cebar = fac[:, None, None] * Ce
    tr3 = np.trace(Cebar, axis1=1, axis2=2) / 3.0
    Mdev = mu * (Cebar - tr3[:, None, None] * np.eye(3))
    sigeq = np.sqrt(1.5 * np.einsum("nij,nij->n", Mdev, Mdev))
    sy = sigma_y0 + H_hard * epbar
    f_yield = sigeq - sy
    plastic = (f_yield > 0.0) & ~bad

    dgamma = np.zeros(n)
    if plastic.any():
        dg = f_yield[plastic] / (3.0 * mu + H_hard * np.sqrt(2.0 / 3.0))
        dgamma[plastic] = dg
        scale = 1.0 - 3.0 * mu * dg / sigeq[plastic]
        Ntr = 1.5 / sigeq[plastic, None, None] * Mdev[plastic]
        Cp_new = Cp[plastic] + 2.0 * dg[:, None, None] * np.matmul(Ntr, Cp[plastic])
        Cp_new = 0.5 * (Cp_new + np.swapaxes(Cp_new, 1, 2))
        detCp = np.linalg.det(Cp_new)
        if np.any(detCp <= 0.0):
            first = int(np.flatnonzero(plastic)[np.argmax(detCp <= 0.0)])
            return n_bad, first
        Cp_new *= (detCp ** (-1.0 / 3.0))[:, None, None]
        Cp[plastic] = Cp_new
        Mdev[plastic] *= scale[:, None, None]
        epbar[plastic] += np.sqrt(2.0 / 3.0) * dg
        # refresh the elastic state for stress/energy recovery
        Ce[plastic] = np.matmul(C[plastic], np.linalg.inv(Cp_new))
        Cebar[plastic] = fac[plastic, None, None] * Ce[plastic]

    Ceinv = np.linalg.inv(Ce)
    Cinv = np.linalg.inv(C)
    Sdev = np.matmul(np.matmul(Ceinv, Mdev), Ceinv) / Je[:, None, None]
    S = Sdev + 0.5 * kappa * (Js * Js - 1.0)[:, None, None] * Cinv
    out_S[:] = 0.5 * (S + np.swapaxes(S, 1, 2))
    trbar = np.trace(Cebar, axis1=1, axis2=2)
    out_psi[:] = (0.25 * kappa * (Js * Js - 1.0 - 2.0 * np.log(Js))
                  + 0.5 * mu * (trbar - 3.0))
    deb = np.sqrt(2.0 / 3.0) * dgamma
    out_dwp[:] = (sy + 0.5 * H_hard * deb) * deb
    out_S[bad] = 0.0
    out_psi[bad] = 0.0
    out_dwp[bad] = 0.0
    return n_bad, -1


def contact_pair_accumulate(xa, va, ma, xb, vb, mb, pairs, dp_contact,
                            k_n, c_n, kfric, out_aa, out_ab):
    """Apply the penalty contact law on precomputed cross-body candidate
    pairs (first column indexes body a, second body b).  Forces are equal
    and opposite; returns the coincident-pair warning count."""
    n_warn = 0
    for k in range(pairs.shape[0]):
        i = pairs[k, 0]
        j = pairs[k, 1]
        d = xa[i] - xb[j]
        dist = float(np.sqrt(d @ d))
        if dist >= dp_contact:
            continue
        if dist < 1e-12:
            nvec = np.array([1.0, 0.0, 0.0])
            dist = 1e-12
            n_warn += 1
        else:
            nvec = d / dist
        overlap = dp_contact - dist
        vrel = va[i] - vb[j]
        vn = float(vrel @ nvec)
        fn = k_n * overlap - c_n * vn
        if fn < 0.0:
            fn = 0.0
        force = fn * nvec
        if kfric > 0.0:
            vt = vrel - vn * nvec
            vtn = float(np.sqrt(vt @ vt))
            if vtn > 1e-14:
                force -= kfric * fn * vt / vtn
        out_aa[i] += force / ma[i]
        out_ab[j] -= force / mb[j]
    return n_warn
