import numpy as np
import pytest

from conftest import lattice_2d, make_body, soft_material
from solidsph import backends
from solidsph import expr as ex
from solidsph import fracture
from solidsph.core import CaseError


BE = backends.active()


def test_history_update_max_semantics():
    assert fracture.history_update(5.0, 3.0) == 5.0
    assert fracture.history_update(1.0, 3.0) == 3.0
    # running max over a sequence
    H = 0.0
    seq = [1.0, 4.0, 2.0, 4.5, 0.5]
    for psi in seq:
        H = fracture.history_update(psi, H)
        assert H == max(seq[:seq.index(psi) + 1] + [0.0]) or H >= psi
    assert H == 4.5


def test_history_update_vectorized_nondecreasing():
    rng = np.random.default_rng(0)
    H = np.zeros(50)
    for _ in range(20):
        psi = rng.exponential(1.0, size=50)
        H_new = fracture.history_update(psi, H)
        assert np.all(H_new >= H)
        H = H_new


def _phase_body(nx=12, nz=10):
    dp = 1e-3
    pos = lattice_2d(nx, nz, dp)
    mat = soft_material(Gc=3.0, eps0=2 * dp, s_l=0.1)
    return make_body(pos, dp, material=mat, fracture=True), dp


def test_laplacian_constant_field_zero():
    body, dp = _phase_body()
    body.state.s[:] = 0.7
    out = np.zeros(body.n)
    fracture.sph_laplacian_s(body, BE, out)
    assert np.abs(out).max() == 0.0


def test_laplacian_quadratic_interior():
    body, dp = _phase_body(16, 12)
    st = body.state
    st.s[:] = st.X[:, 0] ** 2
    out = np.zeros(body.n)
    fracture.sph_laplacian_s(body, BE, out)
    # brute-force oracle on one interior particle
    interior = np.flatnonzero(
        (st.X[:, 0] > 3.5 * dp) & (st.X[:, 0] < 12.5 * dp)
        & (st.X[:, 2] > 3.5 * dp) & (st.X[:, 2] < 8.5 * dp))
    adj = body.adjacency
    for i in interior[:6]:
        sel = adj.rows == i
        js = adj.indices[sel]
        acc = 0.0
        for j, g, r0, rn in zip(js, adj.grad0[sel], adj.r0[sel],
                                adj.r0norm[sel]):
            acc += 2.0 * (st.s[i] - st.s[j]) * st.V0[j] * float(r0 @ g) / rn ** 2
        assert out[i] == pytest.approx(acc, rel=1e-12)
        assert out[i] == pytest.approx(2.0, rel=0.05)


def test_laplacian_two_particle_antisymmetry():
    # uncorrected gradients, equal volumes: lap_i = -lap_j
    dp = 1.0
    pos = np.array([[0.0, 0.0, 0.0], [dp, 0.0, 0.0], [2 * dp, 0.0, 0.0]])
    body = make_body(pos, dp, dim=3, correction=False)
    st = body.state
    st.s[:] = np.array([0.2, 0.5, 0.8])  # antisymmetric about the middle
    out = np.zeros(3)
    fracture.sph_laplacian_s(body, BE, out)
    assert out[0] == pytest.approx(-out[2], rel=1e-12)


def test_phase_accel_intact_equilibrium():
    acc = fracture.phase_field_accel(
        s=np.array([1.0]), sdot=np.array([0.0]), lap_s=np.array([0.0]),
        H=np.array([0.0]), Gc=3.0, eps0=1e-3, c=100.0)
    assert acc[0] == 0.0


def test_phase_accel_equilibrium_value():
    # s* = Gc / (Gc + 4 eps0 H) makes s-ddot vanish (algebraic solve)
    Gc, eps0, c = 3.0, 1e-3, 100.0
    for H in [0.0, 10.0, 1e4, 3e6]:
        s_star = Gc / (Gc + 4 * eps0 * H)
        acc = fracture.phase_field_accel(
            np.array([s_star]), np.array([0.0]), np.array([0.0]),
            np.array([H]), Gc, eps0, c)
        assert abs(acc[0]) < 1e-6 * (c * c / (4 * eps0 ** 2))


def test_phase_accel_broken_relaxes_up():
    Gc, eps0, c = 3.0, 1e-3, 100.0
    acc = fracture.phase_field_accel(
        np.array([0.0]), np.array([0.0]), np.array([0.0]), np.array([0.0]),
        Gc, eps0, c)
    assert acc[0] == pytest.approx(c * c / (4 * eps0 ** 2), rel=1e-12)


def test_gated_deformation_gradient():
    body, dp = _phase_body()
    st = body.state
    A = np.array([[0.02, 0, 0.01], [0, 0, 0], [-0.01, 0, 0.03]])
    st.u[:] = st.X @ A.T
    adj = body.adjacency
    # gate closed: s below the limit forces F = I
    st.s[:] = 0.05
    BE.deformation_gradient(adj.indptr, adj.rows, adj.indices, adj.grad0,
                            st.u, st.V0, st.s, 0.1, True, st.F)
    assert np.abs(st.F - np.eye(3)).max() == 0.0
    # gate open: affine reproduction
    st.s[:] = 1.0
    BE.deformation_gradient(adj.indptr, adj.rows, adj.indices, adj.grad0,
                            st.u, st.V0, st.s, 0.1, True, st.F)
    assert np.abs(st.F - (np.eye(3) + A)).max() < 1e-8
    # zero displacement keeps identity
    st.u[:] = 0.0
    BE.deformation_gradient(adj.indptr, adj.rows, adj.indices, adj.grad0,
                            st.u, st.V0, st.s, 0.1, True, st.F)
    assert np.abs(st.F - np.eye(3)).max() == 0.0


def test_restrictphi_clamp_and_skip():
    body, dp = _phase_body()
    body.restrictphi_expr = 9
    exprs = {9: ex.parse("if(x0 < 2.0e-3, 0.9999, skip)")}
    st = body.state
    st.s[:] = 0.3
    st.sdot[:] = -1.0
    restrict = fracture.restrictphi_values(body, exprs, 0.0, 0.0)
    fracture.apply_phase_clamps(body, restrict)
    inside = st.X[:, 0] < 2.0e-3
    assert np.all(st.s[inside] == 0.9999)
    assert np.all(st.sdot[inside] == 0.0)      # rate zeroed on clamp
    assert np.all(st.s[~inside] == 0.3)        # skip leaves untouched
    assert np.all(st.sdot[~inside] == -1.0)


def test_restrictphi_out_of_range_rejected():
    body, dp = _phase_body()
    body.restrictphi_expr = 9
    exprs = {9: ex.parse("1.5")}
    with pytest.raises(CaseError, match="within"):
        fracture.restrictphi_values(body, exprs, 0.0, 0.0)


def test_restrictphi_unknown_id_rejected():
    body, dp = _phase_body()
    body.restrictphi_expr = 77
    with pytest.raises(CaseError, match="unknown expression"):
        fracture.restrictphi_values(body, {}, 0.0, 0.0)


def test_clamps_zero_rate_and_bound():
    body, dp = _phase_body()
    st = body.state
    st.s[:] = 0.5
    st.s[0] = -0.2
    st.s[1] = 1.3
    st.sdot[:] = 2.0
    fracture.apply_phase_clamps(body, None)
    assert st.s[0] == 0.0 and st.sdot[0] == 0.0
    assert st.s[1] == 1.0 and st.sdot[1] == 0.0
    assert np.all(st.s >= 0.0) and np.all(st.s <= 1.0)
    assert st.sdot[2] == 2.0  # unclamped rates untouched


def test_fracture_off_is_bit_identical_to_inert_module(monkeypatch):
    """Disabling fracture must leave the solver bit-identical to a build
    whose fracture module is inert: the phase-field machinery is never
    invoked, s stays exactly 1, and the trajectory is unchanged by
    neutering the module."""
    from conftest import single_body_config
    from solidsph import stepper as stepper_mod
    from solidsph.stepper import Simulation

    def run(neutered):
        dp = 1e-3
        pos = lattice_2d(10, 6, dp)
        body = make_body(pos, dp, material=soft_material(), fracture=False)
        st = body.state
        rng = np.random.default_rng(11)
        st.v[:] = rng.normal(scale=0.01, size=(body.n, 3))
        st.v[:, 1] = 0.0
        cfg = single_body_config(body, dt=1e-7)
        sim = Simulation(cfg)
        if neutered:
            def boom(*a, **k):
                raise AssertionError("fracture path invoked with fracture off")
            monkeypatch.setattr(stepper_mod.fracture,
                                "update_phase_acceleration", boom)
            monkeypatch.setattr(stepper_mod.fracture,
                                "apply_phase_clamps", boom)
        for _ in range(40):
            sim.step(1e-7)
        if neutered:
            monkeypatch.undo()
        return st.u.copy(), st.v.copy(), st.s.copy(), st.Hhist.copy()

    u_off, v_off, s_off, H_off = run(False)
    u_inert, v_inert, s_inert, H_inert = run(True)
    assert np.array_equal(s_off, np.ones_like(s_off))
    assert np.array_equal(H_off, np.zeros_like(H_off))
    assert np.array_equal(u_off, u_inert)
    assert np.array_equal(v_off, v_inert)
