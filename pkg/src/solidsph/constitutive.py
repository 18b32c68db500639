"""Strain measures, spectral energy splits, and the three stress models.

Scalar (single-particle) operations are the reference API; the engine runs
the batched backend kernels, which are cross-checked against these in the
test suite.  All stress outputs are second Piola-Kirchhoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import J_MIN, Model, SimulationError


@dataclass
class StressResult:
    S_total: np.ndarray
    S_plus: np.ndarray
    S_minus: np.ndarray
    psi_plus: float
    psi_minus: float
    epbar_new: float = 0.0
    Cp_new: np.ndarray | None = None
    degenerate: bool = False

    @property
    def psi_e(self):
        return self.psi_plus + self.psi_minus


def green_lagrange(F):
    """E = (F^T F - I) / 2."""
    F = np.asarray(F, dtype=np.float64)
    E = 0.5 * (F.T @ F - np.eye(3))
    return 0.5 * (E + E.T)


def spectral_split(E):
    """Split a symmetric tensor into positive/negative spectral parts.

    Returns (E_plus, E_minus, tr_plus, tr_minus) with E_plus + E_minus = E.
    """
    E = np.asarray(E, dtype=np.float64)
    E = 0.5 * (E + E.T)
    w, Q = np.linalg.eigh(E)
    Ep = (Q * np.clip(w, 0.0, None)) @ Q.T
    Em = (Q * np.clip(w, None, 0.0)) @ Q.T
    trE = float(np.trace(E))
    return Ep, Em, max(trE, 0.0), min(trE, 0.0)


def svk_stress(E, lam, mu, s=1.0):
    """St. Venant-Kirchhoff with spectral tension/compression split."""
    Ep, Em, trp, trm = spectral_split(E)
    Sp = lam * trp * np.eye(3) + 2.0 * mu * Ep
    Sm = lam * trm * np.eye(3) + 2.0 * mu * Em
    psip = 0.5 * lam * trp * trp + mu * float(np.sum(Ep * Ep))
    psim = 0.5 * lam * trm * trm + mu * float(np.sum(Em * Em))
    return StressResult(
        S_total=s * s * Sp + Sm, S_plus=Sp, S_minus=Sm,
        psi_plus=psip, psi_minus=psim)


def neo_hookean_stress(F, kappa, mu, s=1.0):
    """Compressible neo-Hookean written through b = F F^T, with the
    volumetric term degraded only in tension (J >= 1)."""
    F = np.asarray(F, dtype=np.float64)
    J = float(np.linalg.det(F))
    if J <= J_MIN:
        z = np.zeros((3, 3))
        return StressResult(S_total=z, S_plus=z.copy(), S_minus=z.copy(),
                            psi_plus=0.0, psi_minus=0.0, degenerate=True)
    b = F @ F.T
    binv = np.linalg.inv(b)
    trb = float(np.trace(b))
    Svol = 0.5 * kappa * (J * J - 1.0) * binv
    Siso = J ** (-2.0 / 3.0) * mu * (np.eye(3) - (trb / 3.0) * binv)
    U = 0.5 * kappa * (0.5 * (J * J - 1.0) - math.log(J))
    psibar = 0.5 * mu * (J ** (-2.0 / 3.0) * trb - 3.0)
    if J >= 1.0:
        Sp, Sm = Svol + Siso, np.zeros((3, 3))
        psip, psim = U + psibar, 0.0
    else:
        Sp, Sm = Siso, Svol
        psip, psim = psibar, U
    return StressResult(
        S_total=s * s * Sp + Sm, S_plus=Sp, S_minus=Sm,
        psi_plus=psip, psi_minus=psim)


def j2_return_map(C, Cp_n, epbar_n, mu, kappa, sigma_y0, H_hard):
    """Finite-strain J2 radial return on the plastic metric.

    Trial state Ce = C Cp^-1 with plastic evolution frozen; the deviatoric
    Mandel stress drives a von Mises check, and plastic steps update Cp
    through the associative flow rule followed by the det-preserving
    projection.
    """
    C = np.asarray(C, dtype=np.float64)
    Cp = np.asarray(Cp_n, dtype=np.float64).copy()
    Ce = C @ np.linalg.inv(Cp)
    detCe = float(np.linalg.det(Ce))
    if detCe <= J_MIN ** 2:
        z = np.zeros((3, 3))
        return StressResult(S_total=z, S_plus=z.copy(), S_minus=z.copy(),
                            psi_plus=0.0, psi_minus=0.0,
                            epbar_new=float(epbar_n), Cp_new=Cp,
                            degenerate=True)
    Je = math.sqrt(detCe)
    J = Je  # det Cp = 1 is maintained by the projection
    fac = Je ** (-2.0 / 3.0)
    Cebar = fac * Ce
    Mdev = mu * (Cebar - (np.trace(Cebar) / 3.0) * np.eye(3))
    sigeq = math.sqrt(1.5 * float(np.sum(Mdev * Mdev)))
    sy = sigma_y0 + H_hard * epbar_n
    epbar_new = float(epbar_n)
    if sigeq - sy > 0.0:
        dgamma = (sigeq - sy) / (3.0 * mu + H_hard * math.sqrt(2.0 / 3.0))
        Ntr = 1.5 / sigeq * Mdev
        Cp = Cp + 2.0 * dgamma * (Ntr @ Cp)
        Cp = 0.5 * (Cp + Cp.T)
        detCp = float(np.linalg.det(Cp))
        if detCp <= 0.0:
            raise SimulationError("non-SPD plastic metric after flow update")
        Cp *= detCp ** (-1.0 / 3.0)
        Mdev = (1.0 - 3.0 * mu * dgamma / sigeq) * Mdev
        epbar_new += math.sqrt(2.0 / 3.0) * dgamma
        Ce = C @ np.linalg.inv(Cp)
    Ceinv = np.linalg.inv(Ce)
    Cinv = np.linalg.inv(C)
    S = Ceinv @ Mdev @ Ceinv / Je + 0.5 * kappa * (J * J - 1.0) * Cinv
    S = 0.5 * (S + S.T)
    trbar = fac * float(np.trace(Ce))
    psi = (0.25 * kappa * (J * J - 1.0 - 2.0 * math.log(J))
           + 0.5 * mu * (trbar - 3.0))
    return StressResult(
        S_total=S, S_plus=np.zeros((3, 3)), S_minus=S.copy(),
        psi_plus=0.0, psi_minus=psi, epbar_new=epbar_new, Cp_new=Cp)


def cauchy_from_pk2(F, S):
    """Push-forward sigma = J^-1 F S F^T (zeroed for degenerate F)."""
    F = np.asarray(F, dtype=np.float64)
    J = float(np.linalg.det(F))
    if J <= J_MIN:
        return np.zeros((3, 3))
    sig = F @ np.asarray(S) @ F.T / J
    return 0.5 * (sig + sig.T)


def cauchy_batch(F, S):
    """Vectorized push-forward for snapshot output; degenerate particles
    are zeroed and counted."""
    J = np.linalg.det(F)
    bad = J <= J_MIN
    Fsafe = np.where(bad[:, None, None], np.eye(3), F)
    Js = np.where(bad, 1.0, J)
    sig = np.matmul(np.matmul(Fsafe, S), np.swapaxes(Fsafe, 1, 2))
    sig /= Js[:, None, None]
    sig = 0.5 * (sig + np.swapaxes(sig, 1, 2))
    sig[bad] = 0.0
    return sig, int(np.count_nonzero(bad))


def update_stress(body, be, scratch_dwp=None):
    """Engine entry point: run the body's constitutive model over all
    particles, filling state.S / psi_e / psi_plus (and, for J2, advancing
    Cp, epbar and the accumulated plastic work)."""
    st = body.state
    mat = body.material
    if mat.model == Model.SVK:
        n_noconv = be.svk_batch(st.F, mat.lam, mat.mu, st.s, body.fracture,
                                st.S, st.psi_e, st.psi_plus)
        if n_noconv:
            raise SimulationError(
                f"eigensolver failed to converge for {n_noconv} particles "
                f"(body {body.mk})")
    elif mat.model == Model.NEO_HOOKEAN:
        body.degenerate_warnings += be.nh_batch(
            st.F, mat.kappa, mat.mu, st.s, body.fracture,
            st.S, st.psi_e, st.psi_plus)
    elif mat.model == Model.J2:
        if scratch_dwp is None:
            scratch_dwp = np.empty(st.n)
        n_bad, first_bad = be.j2_batch(
            st.F, st.Cp, st.epbar, mat.mu, mat.kappa,
            mat.sigma_y0, mat.H_hard, st.S, st.psi_e, scratch_dwp)
        if first_bad >= 0:
            raise SimulationError(
                f"non-SPD plastic metric at particle {first_bad} "
                f"(body {body.mk})")
        body.degenerate_warnings += n_bad
        body.plastic_work += float(scratch_dwp @ st.V0)
        st.psi_plus[:] = 0.0
    else:
        raise SimulationError(f"unknown constitutive model {mat.model!r}")
