import os

# Allow the determinism tests to exercise multiple numba threads even on a
# single-core runner; must be set before numba is first imported.
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest

from solidsph import kernel_geom
from solidsph.core import KernelKind, MaterialParams, Model, ParticleArrays


def lattice_2d(nx, nz, dp, origin=(0.0, 0.0, 0.0)):
    xs = origin[0] + (np.arange(nx) + 0.5) * dp
    zs = origin[2] + (np.arange(nz) + 0.5) * dp
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    pos = np.column_stack([gx.ravel(),
                           np.full(gx.size, origin[1]),
                           gz.ravel()])
    return pos


def lattice_3d(nx, ny, nz, dp, origin=(0.0, 0.0, 0.0)):
    xs = origin[0] + (np.arange(nx) + 0.5) * dp
    ys = origin[1] + (np.arange(ny) + 0.5) * dp
    zs = origin[2] + (np.arange(nz) + 0.5) * dp
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


@pytest.fixture
def small_lattice_2d():
    dp = 1e-3
    pos = lattice_2d(12, 8, dp)
    V0 = np.full(pos.shape[0], dp * dp)
    h = kernel_geom.smoothing_length(dp, 1.0, 2)
    adj = kernel_geom.build_adjacency(pos, V0, h, 2, KernelKind.WENDLAND)
    return pos, V0, h, adj, dp


def soft_material(**kw):
    """Rubber-like SVK material used by the mechanics tests."""
    base = dict(rho0=1000.0, lam=2.7733e6, mu=0.715e6,
                kappa=2.7733e6 + 2 * 0.715e6 / 3, model=Model.SVK,
                beta1=0.0, beta2=0.0)
    base.update(kw)
    return MaterialParams(**base)


def make_body(pos, dp, dim=2, material=None, fracture=False, correction=True,
              nbsrange=None, notches=(), coefh=1.0,
              kernel=KernelKind.WENDLAND):
    """Programmatic Body assembly for unit tests."""
    from solidsph.core import Body

    material = material or soft_material()
    pos = np.asarray(pos, dtype=np.float64)
    v0 = dp ** 2 if dim == 2 else dp ** 3
    V0 = np.full(pos.shape[0], v0)
    state = ParticleArrays.from_reference(pos, V0, material.rho0)
    h = kernel_geom.smoothing_length(dp, coefh, dim)
    body = Body(mk=1, state=state, material=material, dp_body=dp, h=h,
                dim=dim, fracture=fracture, nbsrange=nbsrange,
                kernel_correction=correction, notches=list(notches))
    body.adjacency = kernel_geom.build_adjacency(
        pos, V0, h, dim, kernel, nbsrange=nbsrange, dp_body=dp,
        notches=notches, correction=correction)
    return body


def single_body_config(body, cfl=0.2, dt=None, expressions=None,
                       algorithm=None):
    from solidsph.core import CaseConfig, StepAlgorithm

    cfg = CaseConfig(dp=body.dp_body, cfl=cfl, dim=body.dim,
                     dt_override=dt,
                     step_algorithm=algorithm or StepAlgorithm.VERLET)
    cfg.bodies = [body]
    cfg.expressions = expressions or {}
    return cfg
