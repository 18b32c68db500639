"""Numba implementations of the per-step kernels.

Same signatures and semantics as reference.py.  Per-particle loops use
prange; each particle's neighbor sum runs sequentially in CSR order, so
results are independent of the thread count.  fastmath only reassociates
within a particle's own sum, which keeps runs bitwise reproducible for a
fixed build.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from ..core import J_MIN

NAME = "numba"

_F8 = np.float64


@njit(cache=True, inline="always")
def _det3(A):
    return (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
            + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))


@njit(cache=True, inline="always")
def _inv3(A, out):
    det = _det3(A)
    inv_det = 1.0 / det
    out[0, 0] = (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]) * inv_det
    out[0, 1] = (A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2]) * inv_det
    out[0, 2] = (A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1]) * inv_det
    out[1, 0] = (A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2]) * inv_det
    out[1, 1] = (A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]) * inv_det
    out[1, 2] = (A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2]) * inv_det
    out[2, 0] = (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]) * inv_det
    out[2, 1] = (A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1]) * inv_det
    out[2, 2] = (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]) * inv_det
    return det


@njit(cache=True)
def _eig3_jacobi(A, w, Q):
    """Cyclic Jacobi for a symmetric 3x3; eigenvalues sorted descending.
    Returns the number of sweeps used (64 means no convergence)."""
    a = np.empty((3, 3), dtype=_F8)
    for r in range(3):
        for c in range(3):
            a[r, c] = 0.5 * (A[r, c] + A[c, r])
        for c in range(3):
            Q[r, c] = 0.0
        Q[r, r] = 1.0
    scale = 0.0
    for r in range(3):
        for c in range(3):
            if abs(a[r, c]) > scale:
                scale = abs(a[r, c])
    if scale == 0.0:
        w[0] = 0.0; w[1] = 0.0; w[2] = 0.0
        return 0
    tol = 1e-30 * scale * scale
    sweeps = 0
    while sweeps < 64:
        off = a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]
        if off <= tol:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                if theta >= 0.0:
                    tpar = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    tpar = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(tpar * tpar + 1.0)
                s = tpar * c
                for k in range(3):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(3):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(3):
                    qkp = Q[k, p]
                    qkq = Q[k, q]
                    Q[k, p] = c * qkp - s * qkq
                    Q[k, q] = s * qkp + c * qkq
        sweeps += 1
    w[0] = a[0, 0]; w[1] = a[1, 1]; w[2] = a[2, 2]
    for i in range(2):
        m = i
        for j in range(i + 1, 3):
            if w[j] > w[m]:
                m = j
        if m != i:
            tmp = w[i]; w[i] = w[m]; w[m] = tmp
            for k in range(3):
                tq = Q[k, i]; Q[k, i] = Q[k, m]; Q[k, m] = tq
    return sweeps


@njit(cache=True, parallel=True, fastmath=True)
def deformation_gradient(indptr, rows, indices, grad0, u, V0, s, s_l, gated,
                         out):
    n = out.shape[0]
    for i in prange(n):
        if gated and s[i] <= s_l:
            for r in range(3):
                for c in range(3):
                    out[i, r, c] = 1.0 if r == c else 0.0
            continue
        f00 = 1.0; f01 = 0.0; f02 = 0.0
        f10 = 0.0; f11 = 1.0; f12 = 0.0
        f20 = 0.0; f21 = 0.0; f22 = 1.0
        ui0 = u[i, 0]; ui1 = u[i, 1]; ui2 = u[i, 2]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            vj = V0[j]
            d0 = (u[j, 0] - ui0) * vj
            d1 = (u[j, 1] - ui1) * vj
            d2 = (u[j, 2] - ui2) * vj
            g0 = grad0[k, 0]; g1 = grad0[k, 1]; g2 = grad0[k, 2]
            f00 += d0 * g0; f01 += d0 * g1; f02 += d0 * g2
            f10 += d1 * g0; f11 += d1 * g1; f12 += d1 * g2
            f20 += d2 * g0; f21 += d2 * g1; f22 += d2 * g2
        out[i, 0, 0] = f00; out[i, 0, 1] = f01; out[i, 0, 2] = f02
        out[i, 1, 0] = f10; out[i, 1, 1] = f11; out[i, 1, 2] = f12
        out[i, 2, 0] = f20; out[i, 2, 1] = f21; out[i, 2, 2] = f22
    return out


@njit(cache=True, parallel=True, fastmath=True)
def sph_laplacian(indptr, rows, indices, grad0, r0, r0norm, V0, f, out):
    n = out.shape[0]
    for i in prange(n):
        acc = 0.0
        fi = f[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            rdotg = (r0[k, 0] * grad0[k, 0] + r0[k, 1] * grad0[k, 1]
                     + r0[k, 2] * grad0[k, 2])
            acc += 2.0 * (fi - f[j]) * V0[j] * rdotg / (r0norm[k] * r0norm[k])
        out[i] = acc
    return out


@njit(cache=True, parallel=True, fastmath=True)
def sph_gradient(indptr, rows, indices, grad0, V0, f, out):
    n = out.shape[0]
    for i in prange(n):
        g0 = 0.0; g1 = 0.0; g2 = 0.0
        fi = f[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            c = V0[j] * (f[j] - fi)
            g0 += c * grad0[k, 0]
            g1 += c * grad0[k, 1]
            g2 += c * grad0[k, 2]
        out[i, 0] = g0; out[i, 1] = g1; out[i, 2] = g2
    return out


@njit(cache=True, parallel=True, fastmath=True)
def momentum(indptr, rows, indices, grad0, grad0r, r0, r0norm, P, m0, rho0,
             v, h, c0, beta1, beta2, F, out):
    n = out.shape[0]
    visc = beta1 != 0.0 or beta2 != 0.0
    inv_rho2 = 1.0 / (rho0 * rho0)
    eps_h2 = 0.001 * h * h
    n_bad = 0
    for i in prange(n):
        A00 = 0.0; A01 = 0.0; A02 = 0.0
        A10 = 0.0; A11 = 0.0; A12 = 0.0
        A20 = 0.0; A21 = 0.0; A22 = 0.0
        if visc:
            detF = _det3(F[i])
            if detF > J_MIN:
                Avis = np.empty((3, 3), dtype=_F8)
                _inv3(F[i], Avis)
                A00 = Avis[0, 0] * detF; A01 = Avis[0, 1] * detF; A02 = Avis[0, 2] * detF
                A10 = Avis[1, 0] * detF; A11 = Avis[1, 1] * detF; A12 = Avis[1, 2] * detF
                A20 = Avis[2, 0] * detF; A21 = Avis[2, 1] * detF; A22 = Avis[2, 2] * detF
            else:
                n_bad += 1
        p00 = P[i, 0, 0]; p01 = P[i, 0, 1]; p02 = P[i, 0, 2]
        p10 = P[i, 1, 0]; p11 = P[i, 1, 1]; p12 = P[i, 1, 2]
        p20 = P[i, 2, 0]; p21 = P[i, 2, 1]; p22 = P[i, 2, 2]
        vi0 = v[i, 0]; vi1 = v[i, 1]; vi2 = v[i, 2]
        a0 = 0.0; a1 = 0.0; a2 = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            g0 = grad0[k, 0]; g1 = grad0[k, 1]; g2 = grad0[k, 2]
            q0 = grad0r[k, 0]; q1 = grad0r[k, 1]; q2 = grad0r[k, 2]
            f0 = (p00 * g0 + p01 * g1 + p02 * g2
                  - P[j, 0, 0] * q0 - P[j, 0, 1] * q1 - P[j, 0, 2] * q2) * inv_rho2
            f1 = (p10 * g0 + p11 * g1 + p12 * g2
                  - P[j, 1, 0] * q0 - P[j, 1, 1] * q1 - P[j, 1, 2] * q2) * inv_rho2
            f2 = (p20 * g0 + p21 * g1 + p22 * g2
                  - P[j, 2, 0] * q0 - P[j, 2, 1] * q1 - P[j, 2, 2] * q2) * inv_rho2
            if visc:
                G = h * ((vi0 - v[j, 0]) * r0[k, 0] + (vi1 - v[j, 1]) * r0[k, 1]
                         + (vi2 - v[j, 2]) * r0[k, 2]) / (
                    r0norm[k] * r0norm[k] + eps_h2)
                pi = (beta2 * G * G - beta1 * c0 * G) / rho0
                f0 -= pi * (A00 * g0 + A01 * g1 + A02 * g2)
                f1 -= pi * (A10 * g0 + A11 * g1 + A12 * g2)
                f2 -= pi * (A20 * g0 + A21 * g1 + A22 * g2)
            a0 += m0[j] * f0
            a1 += m0[j] * f1
            a2 += m0[j] * f2
        out[i, 0] = a0; out[i, 1] = a1; out[i, 2] = a2
    return n_bad


@njit(cache=True, parallel=True)
def svk_batch(F, lam, mu, s, fracture, out_S, out_psi, out_psip):
    n = F.shape[0]
    n_noconv = 0
    for i in prange(n):
        E = np.empty((3, 3), dtype=_F8)
        for r in range(3):
            for c in range(3):
                acc = 0.0
                for k in range(3):
                    acc += F[i, k, r] * F[i, k, c]
                E[r, c] = 0.5 * (acc - (1.0 if r == c else 0.0))
        for r in range(3):
            for c in range(r + 1, 3):
                m = 0.5 * (E[r, c] + E[c, r])
                E[r, c] = m
                E[c, r] = m
        trE = E[0, 0] + E[1, 1] + E[2, 2]
        if not fracture:
            frob = 0.0
            for r in range(3):
                for c in range(3):
                    out_S[i, r, c] = 2.0 * mu * E[r, c]
                    frob += E[r, c] * E[r, c]
                out_S[i, r, r] += lam * trE
            out_psi[i] = 0.5 * lam * trE * trE + mu * frob
            out_psip[i] = 0.0
            continue
        w = np.empty(3, dtype=_F8)
        Q = np.empty((3, 3), dtype=_F8)
        sweeps = _eig3_jacobi(E, w, Q)
        if sweeps >= 64:
            n_noconv += 1
        trp = trE if trE > 0.0 else 0.0
        trm = trE if trE < 0.0 else 0.0
        psip = 0.5 * lam * trp * trp
        psim = 0.5 * lam * trm * trm
        s2 = s[i] * s[i]
        for r in range(3):
            for c in range(3):
                ep = 0.0
                em = 0.0
                for k in range(3):
                    lp = w[k] if w[k] > 0.0 else 0.0
                    lm = w[k] if w[k] < 0.0 else 0.0
                    ep += Q[r, k] * lp * Q[c, k]
                    em += Q[r, k] * lm * Q[c, k]
                sp = 2.0 * mu * ep
                sm = 2.0 * mu * em
                if r == c:
                    sp += lam * trp
                    sm += lam * trm
                out_S[i, r, c] = s2 * sp + sm
        for k in range(3):
            lp = w[k] if w[k] > 0.0 else 0.0
            lm = w[k] if w[k] < 0.0 else 0.0
            psip += mu * lp * lp
            psim += mu * lm * lm
        out_psi[i] = s2 * psip + psim
        out_psip[i] = psip
    return n_noconv


@njit(cache=True, parallel=True)
def nh_batch(F, kappa, mu, s, fracture, out_S, out_psi, out_psip):
    n = F.shape[0]
    n_bad = 0
    for i in prange(n):
        J = _det3(F[i])
        if J <= J_MIN:
            for r in range(3):
                for c in range(3):
                    out_S[i, r, c] = 0.0
            out_psi[i] = 0.0
            out_psip[i] = 0.0
            n_bad += 1
            continue
        b = np.empty((3, 3), dtype=_F8)
        for r in range(3):
            for c in range(3):
                acc = 0.0
                for k in range(3):
                    acc += F[i, r, k] * F[i, c, k]
                b[r, c] = acc
        binv = np.empty((3, 3), dtype=_F8)
        _inv3(b, binv)
        trb = b[0, 0] + b[1, 1] + b[2, 2]
        Jm23 = J ** (-2.0 / 3.0)
        U = 0.5 * kappa * (0.5 * (J * J - 1.0) - np.log(J))
        psibar = 0.5 * mu * (Jm23 * trb - 3.0)
        s2 = s[i] * s[i] if fracture else 1.0
        tension = J >= 1.0
        w_vol = s2 if tension else 1.0
        for r in range(3):
            for c in range(3):
                svol = 0.5 * kappa * (J * J - 1.0) * binv[r, c]
                siso = Jm23 * mu * (-(trb / 3.0) * binv[r, c])
                if r == c:
                    siso += Jm23 * mu
                out_S[i, r, c] = w_vol * svol + s2 * siso
        if tension:
            psip = U + psibar
            psim = 0.0
        else:
            psip = psibar
            psim = U
        out_psi[i] = s2 * psip + psim
        out_psip[i] = psip
    return n_bad


@njit(cache=True, parallel=True)
def j2_batch(F, Cp, epbar, mu, kappa, sigma_y0, H_hard,
             out_S, out_psi, out_dwp):
    n = F.shape[0]
    n_bad = 0
    sq23 = np.sqrt(2.0 / 3.0)
    err = np.zeros(n, dtype=np.int64)
    for i in prange(n):
        J = _det3(F[i])
        if J <= J_MIN:
            for r in range(3):
                for c in range(3):
                    out_S[i, r, c] = 0.0
            out_psi[i] = 0.0
            out_dwp[i] = 0.0
            n_bad += 1
            continue
        C = np.empty((3, 3), dtype=_F8)
        for r in range(3):
            for c in range(3):
                acc = 0.0
                for k in range(3):
                    acc += F[i, k, r] * F[i, k, c]
                C[r, c] = acc
        Cpinv = np.empty((3, 3), dtype=_F8)
        _inv3(Cp[i], Cpinv)
        Ce = C @ Cpinv
        fac = J ** (-2.0 / 3.0)
        tr3 = fac * (Ce[0, 0] + Ce[1, 1] + Ce[2, 2]) / 3.0
        Mdev = np.empty((3, 3), dtype=_F8)
        frob = 0.0
        for r in range(3):
            for c in range(3):
                m = mu * (fac * Ce[r, c] - (tr3 if r == c else 0.0))
                Mdev[r, c] = m
                frob += m * m
        sigeq = np.sqrt(1.5 * frob)
        sy = sigma_y0 + H_hard * epbar[i]
        dwp = 0.0
        if sigeq - sy > 0.0:
            dg = (sigeq - sy) / (3.0 * mu + H_hard * sq23)
            scale = 1.0 - 3.0 * mu * dg / sigeq
            NCp = (1.5 / sigeq) * (Mdev @ Cp[i])
            for r in range(3):
                for c in range(3):
                    Cp[i, r, c] += 2.0 * dg * NCp[r, c]
            for r in range(3):
                for c in range(r + 1, 3):
                    m = 0.5 * (Cp[i, r, c] + Cp[i, c, r])
                    Cp[i, r, c] = m
                    Cp[i, c, r] = m
            detCp = _det3(Cp[i])
            if detCp <= 0.0:
                err[i] = 1
                continue
            proj = detCp ** (-1.0 / 3.0)
            for r in range(3):
                for c in range(3):
                    Cp[i, r, c] *= proj
                    Mdev[r, c] *= scale
            deb = sq23 * dg
            dwp = (sy + 0.5 * H_hard * deb) * deb
            epbar[i] += deb
            _inv3(Cp[i], Cpinv)
            Ce = C @ Cpinv
        Ceinv = np.empty((3, 3), dtype=_F8)
        _inv3(Ce, Ceinv)
        Cinv = np.empty((3, 3), dtype=_F8)
        _inv3(C, Cinv)
        Sd = (Ceinv @ Mdev) @ Ceinv
        vol = 0.5 * kappa * (J * J - 1.0)
        for r in range(3):
            for c in range(3):
                out_S[i, r, c] = Sd[r, c] / J + vol * Cinv[r, c]
        for r in range(3):
            for c in range(r + 1, 3):
                m = 0.5 * (out_S[i, r, c] + out_S[i, c, r])
                out_S[i, r, c] = m
                out_S[i, c, r] = m
        trbar = fac * (Ce[0, 0] + Ce[1, 1] + Ce[2, 2])
        out_psi[i] = (0.25 * kappa * (J * J - 1.0 - 2.0 * np.log(J))
                      + 0.5 * mu * (trbar - 3.0))
        out_dwp[i] = dwp
    first_bad = -1
    for i in range(n):
        if err[i] != 0:
            first_bad = i
            break
    return n_bad, first_bad


@njit(cache=True)
def contact_pair_accumulate(xa, va, ma, xb, vb, mb, pairs, dp_contact,
                            k_n, c_n, kfric, out_aa, out_ab):
    n_warn = 0
    for k in range(pairs.shape[0]):
        i = pairs[k, 0]
        j = pairs[k, 1]
        d0 = xa[i, 0] - xb[j, 0]
        d1 = xa[i, 1] - xb[j, 1]
        d2 = xa[i, 2] - xb[j, 2]
        dist = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        if dist >= dp_contact:
            continue
        if dist < 1e-12:
            n0 = 1.0; n1 = 0.0; n2 = 0.0
            dist = 1e-12
            n_warn += 1
        else:
            n0 = d0 / dist; n1 = d1 / dist; n2 = d2 / dist
        overlap = dp_contact - dist
        dv0 = va[i, 0] - vb[j, 0]
        dv1 = va[i, 1] - vb[j, 1]
        dv2 = va[i, 2] - vb[j, 2]
        vn = dv0 * n0 + dv1 * n1 + dv2 * n2
        fn = k_n * overlap - c_n * vn
        if fn < 0.0:
            fn = 0.0
        f0 = fn * n0; f1 = fn * n1; f2 = fn * n2
        if kfric > 0.0:
            t0 = dv0 - vn * n0
            t1 = dv1 - vn * n1
            t2 = dv2 - vn * n2
            vtn = np.sqrt(t0 * t0 + t1 * t1 + t2 * t2)
            if vtn > 1e-14:
                f0 -= kfric * fn * t0 / vtn
                f1 -= kfric * fn * t1 / vtn
                f2 -= kfric * fn * t2 / vtn
        out_aa[i, 0] += f0 / ma[i]
        out_aa[i, 1] += f1 / ma[i]
        out_aa[i, 2] += f2 / ma[i]
        out_ab[j, 0] -= f0 / mb[j]
        out_ab[j, 1] -= f1 / mb[j]
        out_ab[j, 2] -= f2 / mb[j]
    return n_warn
