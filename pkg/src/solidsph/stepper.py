"""Explicit time integration: Verlet and symplectic (leapfrog) schemes,
the adaptive timestep criterion, and per-step phase orchestration.

Phase order per step follows the integration algorithms verbatim:
contact -> internal forces -> velocity BCs -> update -> commit, with the
predictor first for the symplectic scheme.  An optional trace list records
the phases for auditing."""

from __future__ import annotations

import math

import numpy as np

from . import backends, constitutive, dynamics, fracture
from .core import SimulationError, StepAlgorithm


def stable_dt(h, c0, vmax, amax, cfl):
    """dt = cfl * min(h / (c0 + vmax), sqrt(h / amax)); the acceleration
    bound is omitted when amax = 0."""
    dt_v = h / (c0 + vmax)
    if amax > 0.0:
        return cfl * min(dt_v, math.sqrt(h / amax))
    return cfl * dt_v


def verlet_update_1dof(u, v, a, dt):
    """Single Verlet update (kick then drift with the new velocity)."""
    v = v + dt * a
    u = u + dt * v
    return u, v


def symplectic_predict_1dof(u, v, a_prev, dt):
    """Predictor half kick + half drift (stored velocity is the
    integer-level value)."""
    v_half = v + 0.5 * dt * a_prev
    u_half = u + 0.5 * dt * v_half
    return u_half, v_half


def symplectic_correct_1dof(u_half, v_half, a_half, dt):
    v_new = v_half + 0.5 * dt * a_half
    u_new = u_half + 0.5 * dt * v_new
    return u_new, v_new


class Simulation:
    """Owns the per-step orchestration for all bodies of one case."""

    def __init__(self, config, trace=None):
        self.config = config
        self.bodies = config.bodies
        self.expressions = config.expressions
        self.t = 0.0
        self.step_index = 0
        self.trace = trace
        self.be = backends.active()
        self.workspaces = [dynamics.Workspace(b.n) for b in self.bodies]
        self.contact_warnings = 0
        self._static_restrict = {}
        self._initialized = False

    # -- phases ------------------------------------------------------------

    def _mark(self, phase):
        if self.trace is not None:
            self.trace.append(phase)

    def _contact_phase(self):
        self._mark("contact")
        if len(self.bodies) > 1:
            self.contact_warnings += dynamics.contact_forces(
                self.bodies, self.config.contcoeff, self.be, self.workspaces)

    def _internal_phase(self, t, dt):
        self._mark("internal")
        for body, ws in zip(self.bodies, self.workspaces):
            st = body.state
            dynamics.compute_deformation_gradients(body, self.be)
            constitutive.update_stress(body, self.be, ws.dwp)
            if body.fracture:
                fracture.update_phase_acceleration(body, self.be, ws)
            dynamics.internal_forces(body, self.be, ws)
            st.a[:] = ws.a_int
            if len(self.bodies) > 1:
                st.a += ws.a_contact
            st.a += body.f0
            for bc in body.bcs:
                if bc.kind == "force":
                    dynamics.external_force_accel(
                        body, bc, t, dt, self.expressions, st.a)
            if body.dim == 2:
                st.a[:, 1] = 0.0
            if not np.isfinite(st.a).all():
                bad = int(np.flatnonzero(~np.isfinite(st.a).all(axis=1))[0])
                raise SimulationError(
                    f"non-finite acceleration at particle {bad} "
                    f"(body {body.mk}, step {self.step_index})")

    def _bc_phase(self, t, dt):
        self._mark("bc")
        self._apply_velocity_bcs(t, dt)

    def _apply_velocity_bcs(self, t, dt):
        for body in self.bodies:
            dynamics.apply_velocity_bcs(body, t, dt, self.expressions)
            if body.dim == 2:
                body.state.v[:, 1] = 0.0

    def _restriction(self, body, t, dt):
        if body.restrictphi_expr is None:
            return None
        ast = self.expressions.get(body.restrictphi_expr)
        if ast is not None and not ast.time_dependent:
            cached = self._static_restrict.get(body.mk)
            if cached is None:
                cached = fracture.restrictphi_values(
                    body, self.expressions, t, dt)
                self._static_restrict[body.mk] = cached
            return cached
        return fracture.restrictphi_values(body, self.expressions, t, dt)

    def _advance_phase_field(self, body, dt_s, dt_rate, t, dt):
        """sdot += dt_rate * sddot; s += dt_s * sdot; clamp."""
        st = body.state
        st.sdot += dt_rate * st.sddot
        st.s += dt_s * st.sdot
        fracture.apply_phase_clamps(body, self._restriction(body, t, dt))

    # -- integrators ---------------------------------------------------------

    def initialize(self):
        """One force evaluation at t = 0 plus the initial BC application,
        so a0 (and s-ddot0) exist before the first step."""
        self._contact_phase()
        self._internal_phase(0.0, 0.0)
        self._apply_velocity_bcs(0.0, 0.0)
        if self.trace is not None:
            del self.trace[:]
        self._initialized = True

    def verlet_step(self, dt):
        t = self.t
        self._contact_phase()
        self._internal_phase(t, dt)
        self._bc_phase(t, dt)
        self._mark("update")
        t_new = t + dt
        for body in self.bodies:
            st = body.state
            st.v += dt * st.a
        self._apply_velocity_bcs(t_new, dt)
        for body in self.bodies:
            st = body.state
            st.u += dt * st.v
            if body.dim == 2:
                st.u[:, 1] = 0.0
            if body.fracture:
                self._advance_phase_field(body, dt, dt, t_new, dt)
        self._commit(dt)

    def symplectic_step(self, dt):
        t = self.t
        t_half = t + 0.5 * dt
        t_new = t + dt
        self._mark("predictor")
        for body in self.bodies:
            st = body.state
            st.v += 0.5 * dt * st.a
        self._apply_velocity_bcs(t_half, dt)
        for body in self.bodies:
            st = body.state
            st.u += 0.5 * dt * st.v
            if body.dim == 2:
                st.u[:, 1] = 0.0
            if body.fracture:
                self._advance_phase_field(body, 0.5 * dt, 0.5 * dt,
                                          t_half, dt)
        self._contact_phase()
        self._internal_phase(t_half, dt)
        self._bc_phase(t_half, dt)
        self._mark("update")
        for body in self.bodies:
            st = body.state
            st.v += 0.5 * dt * st.a
        self._apply_velocity_bcs(t_new, dt)
        for body in self.bodies:
            st = body.state
            st.u += 0.5 * dt * st.v
            if body.dim == 2:
                st.u[:, 1] = 0.0
            if body.fracture:
                self._advance_phase_field(body, 0.5 * dt, 0.5 * dt,
                                          t_new, dt)
        self._commit(dt)

    def _commit(self, dt):
        self._mark("commit")
        self.t += dt
        self.step_index += 1
        if self.step_index % 64 == 0:
            for body in self.bodies:
                st = body.state
                if not (np.isfinite(st.u).all() and np.isfinite(st.v).all()):
                    raise SimulationError(
                        f"non-finite state in body {body.mk} at step "
                        f"{self.step_index}")

    def step(self, dt):
        if not self._initialized:
            self.initialize()
        if self.config.step_algorithm == StepAlgorithm.SYMPLECTIC:
            self.symplectic_step(dt)
        else:
            self.verlet_step(dt)

    # -- timestep control ----------------------------------------------------

    def pick_dt(self):
        """Adaptive dt from the current per-body maxima, or the user
        override."""
        if self.config.dt_override is not None:
            return self.config.dt_override
        dt = math.inf
        for body in self.bodies:
            st = body.state
            vmax = float(np.sqrt(np.max(np.einsum("nd,nd->n", st.v, st.v))))
            amax = float(np.sqrt(np.max(np.einsum("nd,nd->n", st.a, st.a))))
            dt = min(dt, stable_dt(body.h, body.material.c0, vmax, amax,
                                   self.config.cfl))
        return dt

    # -- run loop --------------------------------------------------------

    def run(self, time_max=None, time_out=None, on_output=None,
            max_steps=None):
        """Advance to time_max, invoking on_output(sim) at t = 0, at every
        time_out boundary, and at the end."""
        cfg = self.config
        t_max = cfg.time_max if time_max is None else time_max
        t_out = cfg.time_out if time_out is None else time_out
        if not self._initialized:
            self.initialize()
        if on_output is not None:
            on_output(self)
        if t_max <= 0.0:
            return
        next_out = t_out if t_out > 0.0 else t_max
        eps = 1e-12 * max(t_max, 1.0)
        while self.t < t_max - eps:
            dt = min(self.pick_dt(), next_out - self.t, t_max - self.t)
            if dt <= 0.0:
                raise SimulationError(f"timestep collapsed to {dt!r}")
            self.step(dt)
            if self.t >= next_out - eps:
                if on_output is not None:
                    on_output(self)
                next_out = min(next_out + t_out, t_max) if t_out > 0.0 \
                    else t_max
            if max_steps is not None and self.step_index >= max_steps:
                break
