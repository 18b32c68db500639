"""Shared domain types and unit conventions.

Everything is SI: metres, kilograms, seconds, pascals.  Tensors are stored
as full 3x3 arrays even for plane-strain (2D) runs; 2D cases keep the
out-of-plane axis (y) at zero displacement/velocity and use unit out-of-plane
thickness for masses and volumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class CaseError(Exception):
    """Configuration / case-load problem.  Message carries the element path
    or the body mk so the user can locate the offending input."""


class SimulationError(Exception):
    """Runtime numerical failure (non-finite state, degenerate update)."""


class Model(IntEnum):
    SVK = 1
    NEO_HOOKEAN = 2
    J2 = 3


class KernelKind(IntEnum):
    CUBIC_SPLINE = 1
    WENDLAND = 2


class StepAlgorithm(IntEnum):
    VERLET = 1
    SYMPLECTIC = 2


# Floor on det(F) before inverting b, C or computing Cauchy stress.  Below
# this the particle is treated as degenerate: stress zeroed, warning counted.
J_MIN = 1.0e-6


def normalize_elastic_constants(*, E=None, nu=None, lam=None, mu=None,
                                kappa=None, where=""):
    """Reduce any accepted elastic-constant pair to a (lam, mu, kappa) triple.

    Exactly one of {E, nu}, {lam, mu}, {kappa, mu} must be supplied; the
    returned triple always satisfies kappa = lam + 2*mu/3.
    """
    pairs = [E is not None or nu is not None,
             lam is not None,
             kappa is not None]
    tag = f" (body {where})" if where != "" else ""
    if (E is None) != (nu is None):
        raise CaseError(f"Young's modulus and Poisson's ratio must be given together{tag}")
    n_routes = int(E is not None) + int(lam is not None) + int(kappa is not None)
    if n_routes == 0:
        raise CaseError(f"no elastic constants supplied{tag}")
    if n_routes > 1:
        raise CaseError(f"conflicting elastic constant definitions{tag}")
    if E is not None:
        if E <= 0.0 or not (0.0 < nu < 0.5):
            raise CaseError(f"need E > 0 and 0 < nu < 0.5{tag}")
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        mu = E / (2.0 * (1.0 + nu))
    elif kappa is not None:
        if mu is None:
            raise CaseError(f"bulk modulus given without shear modulus{tag}")
        if kappa <= 0.0 or mu <= 0.0:
            raise CaseError(f"need kappa > 0 and mu > 0{tag}")
        lam = kappa - 2.0 * mu / 3.0
    else:
        if mu is None:
            raise CaseError(f"Lame lambda given without shear modulus{tag}")
        if mu <= 0.0:
            raise CaseError(f"need mu > 0{tag}")
    kappa = lam + 2.0 * mu / 3.0
    if kappa <= 0.0:
        raise CaseError(f"derived bulk modulus is not positive{tag}")
    return float(lam), float(mu), float(kappa)


def youngs_from_lame(lam, mu):
    """Inverse of the {E, nu} route (used by tests and the contact stiffness)."""
    E = mu * (3.0 * lam + 2.0 * mu) / (lam + mu)
    nu = lam / (2.0 * (lam + mu))
    return E, nu


@dataclass
class MaterialParams:
    rho0: float
    lam: float
    mu: float
    kappa: float
    model: Model = Model.SVK
    beta1: float = 0.2       # artificial viscosity, linear term
    beta2: float = 0.0       # artificial viscosity, quadratic term
    Gc: float = 0.0          # critical energy release rate [J/m^2]
    eps0: float = 0.0        # phase-field length scale [m]
    s_l: float = 0.1         # phase-field gating limit
    sigma_y0: float = 0.0    # initial yield stress [Pa]
    H_hard: float = 0.0      # linear isotropic hardening modulus [Pa]
    restcoef: float = 1.0    # contact restitution coefficient
    kfric: float = 0.0       # contact Coulomb friction coefficient
    contcoeff: float = 1.0   # contact stiffness multiplier

    @property
    def c0(self):
        """Reference sound speed sqrt((kappa + 4 mu / 3) / rho0)."""
        return math.sqrt((self.kappa + 4.0 * self.mu / 3.0) / self.rho0)

    def validate(self, fracture: bool, where=""):
        tag = f" (body {where})" if where != "" else ""
        if self.rho0 <= 0.0:
            raise CaseError(f"density must be positive{tag}")
        if self.mu <= 0.0 or self.kappa <= 0.0:
            raise CaseError(f"elastic constants must give mu > 0 and kappa > 0{tag}")
        if abs(self.kappa - (self.lam + 2.0 * self.mu / 3.0)) > 1e-9 * self.kappa:
            raise CaseError(f"inconsistent Lame constants{tag}")
        if fracture:
            if self.model == Model.J2:
                raise CaseError(f"fracture is not available with J2 plasticity{tag}")
            if self.Gc <= 0.0:
                raise CaseError(f"Gc required and positive when fracture is enabled{tag}")
            if self.eps0 <= 0.0:
                raise CaseError(f"pflenscale required and positive when fracture is enabled{tag}")
            if not (0.0 < self.s_l < 1.0):
                raise CaseError(f"pflim must lie strictly between 0 and 1{tag}")
        if self.model == Model.J2:
            if self.sigma_y0 <= 0.0:
                raise CaseError(f"yieldstress required and positive for J2 plasticity{tag}")
            if self.H_hard < 0.0:
                raise CaseError(f"hardening modulus must be nonnegative{tag}")


@dataclass
class ParticleArrays:
    """Per-particle evolving fields, struct-of-arrays layout.

    m0 = rho0 * V0 by construction.  s is clamped to [0,1] after every
    integrator substep; Hhist is nondecreasing; Cp stays symmetric with
    det(Cp) = 1 after every plastic update.
    """
    X: np.ndarray        # (n,3) reference positions
    u: np.ndarray        # (n,3) displacements
    v: np.ndarray        # (n,3) velocities
    a: np.ndarray        # (n,3) accelerations
    m0: np.ndarray       # (n,)  reference masses
    V0: np.ndarray       # (n,)  reference volumes
    F: np.ndarray        # (n,3,3) deformation gradients
    S: np.ndarray        # (n,3,3) second Piola-Kirchhoff stress
    s: np.ndarray        # (n,)  phase field
    sdot: np.ndarray     # (n,)  phase-field rate
    sddot: np.ndarray    # (n,)  phase-field acceleration
    Hhist: np.ndarray    # (n,)  history functional
    Cp: np.ndarray       # (n,3,3) plastic metric
    epbar: np.ndarray    # (n,)  equivalent plastic strain
    psi_e: np.ndarray    # (n,)  degraded elastic energy density
    psi_plus: np.ndarray  # (n,) tensile energy density (feeds Hhist)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def x(self):
        """Current positions."""
        return self.X + self.u

    @classmethod
    def from_reference(cls, X, V0, rho0):
        X = np.ascontiguousarray(X, dtype=np.float64)
        n = X.shape[0]
        V0 = np.ascontiguousarray(V0, dtype=np.float64)
        eye = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        return cls(
            X=X,
            u=np.zeros((n, 3)),
            v=np.zeros((n, 3)),
            a=np.zeros((n, 3)),
            m0=rho0 * V0,
            V0=V0,
            F=eye.copy(),
            S=np.zeros((n, 3, 3)),
            s=np.ones(n),
            sdot=np.zeros(n),
            sddot=np.zeros(n),
            Hhist=np.zeros(n),
            Cp=eye,
            epbar=np.zeros(n),
            psi_e=np.zeros(n),
            psi_plus=np.zeros(n),
        )


@dataclass
class BoundaryCondition:
    """One bcvel / bcforce card.

    Per axis either a constant, an expression id, or None (axis untouched).
    The target set is resolved once at load time on the reference
    configuration: the whole body, or particles within dp of the mkid
    auxiliary geometry.
    """
    kind: str                      # "vel" | "force"
    ftype: int = 0                 # force type 1|2|3 (force BCs only)
    mkid: int | None = None
    const: tuple = (None, None, None)
    expr: tuple = (None, None, None)   # expression ids
    tst: float = 0.0
    tend: float = math.inf
    target: np.ndarray | None = None   # resolved particle indices

    def active(self, t):
        return self.tst <= t <= self.tend


@dataclass
class Quad:
    """Planar quadrilateral given by 4 corner points (notch / measure plane)."""
    points: np.ndarray  # (4,3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(4, 3)


@dataclass
class Adjacency:
    """Fixed reference-configuration neighbor structure in CSR layout.

    grad0 holds the corrected Lagrangian kernel gradients actually used in
    the discrete sums; built once and never rebuilt (total Lagrangian
    contract).
    """
    indptr: np.ndarray    # (n+1,)
    rows: np.ndarray      # (nnz,) source particle per pair (CSR expanded)
    indices: np.ndarray   # (nnz,)
    grad0: np.ndarray     # (nnz,3) corrected kernel gradients
    grad0r: np.ndarray    # (nnz,3) corrected gradient of the reverse pair;
                          # equals -grad0 when correction is off
    r0: np.ndarray        # (nnz,3) Xi - Xj
    r0norm: np.ndarray    # (nnz,)
    w0: np.ndarray        # (nnz,) kernel values
    correction_fallbacks: int = 0

    @property
    def nnz(self):
        return self.indices.shape[0]

    def counts(self):
        return np.diff(self.indptr)


@dataclass
class Body:
    mk: int
    state: ParticleArrays
    material: MaterialParams
    dp_body: float
    h: float
    dim: int
    fracture: bool = False
    adjacency: Adjacency | None = None
    bcs: list = field(default_factory=list)
    measure_planes: list = field(default_factory=list)
    notches: list = field(default_factory=list)
    restrictphi_expr: int | None = None
    nbsrange: int | None = None
    kernel_correction: bool = True
    f0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    plastic_work: float = 0.0      # accumulated plastic dissipation [J]
    degenerate_warnings: int = 0

    # resolved particle sets for each measure plane, same order
    measure_sets: list = field(default_factory=list)

    @property
    def n(self):
        return self.state.n


@dataclass
class CaseConfig:
    dp: float
    coefh: float = 1.0
    cfl: float = 0.2
    kernel: KernelKind = KernelKind.WENDLAND
    step_algorithm: StepAlgorithm = StepAlgorithm.VERLET
    time_max: float = 0.0
    time_out: float = 0.0
    dim: int = 3
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bodies: list = field(default_factory=list)
    aux_geometries: dict = field(default_factory=dict)  # mk -> (npts,3) positions
    expressions: dict = field(default_factory=dict)     # id -> ExprAst
    dt_override: float | None = None
    contcoeff: float = 1.0

    def validate(self):
        if self.dp <= 0.0:
            raise CaseError("dp must be positive")
        if not (0.0 < self.cfl <= 1.0):
            raise CaseError("cflnumber must lie in (0, 1]")
        if self.time_out > self.time_max:
            raise CaseError("TimeOut must not exceed TimeMax")
