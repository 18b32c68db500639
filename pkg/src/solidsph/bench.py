"""Benchmark runner: scaled-down versions of the shipped cases with
quantitative comparison against analytical or qualitative oracles.

Each benchmark loads its case file, applies resolution scaling
(dp := dp * scale) plus the desk-scale parameter set, runs it, and emits a
report comparing measured quantities with expectations: the beam/plate
against Euler-Bernoulli frequency and amplitude, the fracture cases against
initiation/branching/kink-angle behavior, the plasticity cases against
monotone upset curves and interface localization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import caseio
from .core import CaseError, youngs_from_lame
from .output import OutputManager, compute_energies
from .stepper import Simulation

CASE_DIR = Path(__file__).resolve().parent.parent.parent / "cases"

# desk-scale parameter presets; explicit CLI flags override these
BENCH_PRESETS = {
    "beam2d": dict(file="beam2d.xml", mapfac=2, time_max=0.60),
    "plate3d": dict(file="plate3d.xml", mapfac=1, time_max=0.30),
    "branch2d": dict(file="branch2d.xml", mapfac=1, eps0=1.0e-3,
                     time_max=60.0e-6),
    "kalthoff2d": dict(file="kalthoff2d.xml", mapfac=2, eps0=1.5e-3,
                       time_max=90.0e-6),
    "taylor3d": dict(file="taylor3d.xml", time_max=60.0e-6, cfl=0.05),
    "flyer2d": dict(file="flyer2d.xml", time_max=4.0e-4, time_out=1.0e-6),
}


@dataclass
class BenchReport:
    name: str
    rows: list = field(default_factory=list)  # (metric, measured, expected, ok)
    extras: dict = field(default_factory=dict)

    def add(self, metric, measured, expected=None, ok=None):
        self.rows.append((metric, measured, expected, ok))

    @property
    def passed(self):
        return all(ok is not False for _, _, _, ok in self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("metric,measured,expected,status\n")
            for metric, measured, expected, ok in self.rows:
                status = "" if ok is None else ("pass" if ok else "FAIL")
                exp = "" if expected is None else f"{expected:.9g}"
                fh.write(f"{metric},{measured:.9g},{exp},{status}\n")

    def format(self):
        lines = [f"benchmark {self.name}:"]
        for metric, measured, expected, ok in self.rows:
            status = "" if ok is None else ("  [pass]" if ok else "  [FAIL]")
            exp = "" if expected is None else f"  expected {expected:.6g}"
            lines.append(f"  {metric:<28} {measured:.6g}{exp}{status}")
        return "\n".join(lines)


def case_path(name):
    preset = BENCH_PRESETS.get(name)
    if preset is None:
        raise CaseError(f"unknown benchmark {name!r}; choose from "
                        + ", ".join(sorted(BENCH_PRESETS)))
    return CASE_DIR / preset["file"]


def _load(name, scale, mapfac, eps0, cfl, time_max, scale_eps0):
    preset = BENCH_PRESETS[name]
    kw = {}
    kw["mapfac"] = mapfac if mapfac is not None else preset.get("mapfac")
    if eps0 is not None:
        kw["eps0"] = eps0
    elif scale_eps0:
        kw["eps0"] = None  # resolved after parse below
    elif "eps0" in preset:
        kw["eps0"] = preset["eps0"]
    kw["cfl"] = cfl if cfl is not None else preset.get("cfl")
    kw["time_max"] = time_max if time_max is not None else preset.get("time_max")
    kw["time_out"] = preset.get("time_out")
    raw = caseio.parse_case(case_path(name))
    if scale_eps0 and eps0 is None:
        for body in raw.bodies:
            if "pflenscale" in body.cards:
                kw["eps0"] = body.cards["pflenscale"] * scale
                break
    kw = {k: v for k, v in kw.items() if v is not None}
    return caseio.build_case(raw, dp_scale=scale, **kw)


def _zero_cross_omega(ts, uz):
    sgn = np.sign(uz)
    idx = np.flatnonzero((sgn[:-1] != sgn[1:]) & (sgn[:-1] != 0))
    if idx.size < 2:
        return float("nan")
    tc = ts[idx] - uz[idx] * (ts[idx + 1] - ts[idx]) / (uz[idx + 1] - uz[idx])
    return 2.0 * math.pi / (2.0 * float(np.mean(np.diff(tc))))


def _beam_analytics(body, L0=0.2, H0=0.02, W0=1.0, cs=57.0):
    E, _ = youngs_from_lame(body.material.lam, body.material.mu)
    kw = 1.875 / L0
    I = W0 * H0 ** 3 / 12.0
    omega1 = kw * kw * math.sqrt(E * I / (body.material.rho0 * H0 * W0))
    return omega1, 0.01 * cs / omega1


def _tip_indices(body):
    st = body.state
    xmax = st.X[:, 0].max()
    zmid = 0.5 * (st.X[:, 2].min() + st.X[:, 2].max())
    tip = np.flatnonzero((st.X[:, 0] > xmax - 0.6 * body.dp_body)
                         & (np.abs(st.X[:, 2] - zmid) <= 0.55 * body.dp_body))
    if tip.size == 0:
        tip = np.flatnonzero(st.X[:, 0] > xmax - 0.6 * body.dp_body)
    return tip


def _run(config, sampler, progress=None, outdir=None):
    sim = Simulation(config)
    manager = OutputManager(outdir, write_vtk=False) if outdir else None

    def on_output(s):
        if manager is not None:
            manager.emit(s)
        sampler(s)
        if progress is not None:
            progress(s)

    sim.run(on_output=on_output)
    return sim


def bench_beam(name, config, progress, outdir):
    body = config.bodies[0]
    tip = _tip_indices(body)
    omega1, amp_exp = _beam_analytics(body)
    ts, uz, etot = [], [], []

    def sampler(sim):
        se, ke, fe, pe = compute_energies(body, sim.be)
        ts.append(sim.t)
        uz.append(float(body.state.u[tip, 2].mean()))
        etot.append(se + ke)

    _run(config, sampler, progress, outdir)
    ts_a, uz_a, e_a = map(np.array, (ts, uz, etot))
    omega = _zero_cross_omega(ts_a, uz_a)
    amp = float(np.abs(uz_a).max())
    band = float((e_a.max() - e_a.min()) / e_a.max())
    rep = BenchReport(name)
    rep.add("frequency_rad_s", omega, omega1, abs(omega / omega1 - 1.0) <= 0.05)
    rep.add("tip_amplitude_m", amp, amp_exp, abs(amp / amp_exp - 1.0) <= 0.10)
    rep.add("energy_band_rel", band, 0.05, band <= 0.05)
    rep.extras["series"] = (ts_a, uz_a, e_a)
    return rep


def bench_plate(name, config, progress, outdir):
    body = config.bodies[0]
    tip = _tip_indices(body)
    omega1, amp_exp = _beam_analytics(body)
    ts, uz = [], []

    def sampler(sim):
        ts.append(sim.t)
        uz.append(float(body.state.u[tip, 2].mean()))

    _run(config, sampler, progress, outdir)
    omega = _zero_cross_omega(np.array(ts), np.array(uz))
    rep = BenchReport(name)
    rep.add("frequency_rad_s", omega, omega1, abs(omega / omega1 - 1.0) <= 0.10)
    rep.add("tip_amplitude_m", float(np.abs(uz).max()), amp_exp)
    return rep


def _notch_tip(body):
    """Rightmost point of the notch quad (crack starter)."""
    quad = body.notches[0].points
    i = int(np.argmax(quad[:, 0]))
    return np.array([quad[i, 0], 0.0, quad[i, 2]])


def bench_branch(name, config, progress, outdir):
    body = config.bodies[0]
    st = body.state
    tip = _notch_tip(body)
    near_tip = np.flatnonzero(
        np.sqrt((st.X[:, 0] - tip[0]) ** 2 + (st.X[:, 2] - tip[2]) ** 2)
        <= 2.0 * body.dp_body)
    series = {"t": [], "se": [], "fe": [], "t_init": None}

    def sampler(sim):
        se, ke, fe, pe = compute_energies(body, sim.be)
        series["t"].append(sim.t)
        series["se"].append(se)
        series["fe"].append(fe)
        if series["t_init"] is None and np.any(st.s[near_tip] < 0.5):
            series["t_init"] = sim.t

    _run(config, sampler, progress, outdir)
    t_init = series["t_init"]
    z_n = tip[2]
    damaged = st.s < 0.5
    downstream = damaged & (st.X[:, 0] > tip[0] + 4.0 * body.dp_body)
    eps0 = body.material.eps0
    branched = (np.any(downstream & (st.X[:, 2] > z_n + 3.0 * eps0))
                and np.any(downstream & (st.X[:, 2] < z_n - 3.0 * eps0)))
    rep = BenchReport(name)
    rep.add("initiation_time_s", -1.0 if t_init is None else t_init,
            14.0e-6, t_init is not None and 8.0e-6 <= t_init <= 30.0e-6)
    rep.add("branched", float(branched), 1.0, bool(branched))
    fe = np.array(series["fe"])
    se = np.array(series["se"])
    ok_fe = ok_se = False
    if t_init is not None:
        i0 = int(np.searchsorted(series["t"], t_init))
        fe_post = fe[i0:]
        ok_fe = bool(np.all(np.diff(fe_post) >= -1e-3 * max(fe_post.max(), 1e-300)))
        ok_se = bool(se[-1] < se[i0:].max())
        rep.add("fe_monotone", float(ok_fe), 1.0, ok_fe)
        rep.add("se_decreases", float(ok_se), 1.0, ok_se)
    rep.extras["series"] = series
    rep.extras["final_s"] = st.s.copy()
    return rep


def bench_kalthoff(name, config, progress, outdir):
    body = config.bodies[0]
    st = body.state
    tip = _notch_tip(body)

    def sampler(sim):
        pass

    _run(config, sampler, progress, outdir)
    damaged = np.flatnonzero(
        (st.s < 0.5) & (st.X[:, 0] > tip[0] + 2.0 * body.dp_body))
    rep = BenchReport(name)
    if damaged.size < 5:
        rep.add("kink_angle_deg", -1.0, 70.0, False)
        return rep
    pts = st.X[damaged][:, [0, 2]]
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    direction = vt[0]
    angle = math.degrees(math.atan2(abs(direction[1]), abs(direction[0])))
    rep.add("kink_angle_deg", angle, 70.0, 60.0 <= angle <= 80.0)
    rep.extras["damaged"] = pts
    return rep


def bench_taylor(name, config, progress, outdir):
    body = config.bodies[0]
    st = body.state
    L0 = st.X[:, 2].max() - st.X[:, 2].min() + body.dp_body
    series = {"short": [], "rad": [], "ep_drop": 0}
    prev_ep = st.epbar.copy()

    def sampler(sim):
        x = st.x
        base = x[:, 2] <= x[:, 2].min() + 3.0 * body.dp_body
        series["rad"].append(float(np.sqrt(
            x[base, 0] ** 2 + x[base, 1] ** 2).max()))
        series["short"].append(float(L0 - (x[:, 2].max() - x[:, 2].min()
                                           + body.dp_body)))
        if np.any(st.epbar < prev_ep - 1e-12):
            series["ep_drop"] += 1
        prev_ep[:] = st.epbar

    _run(config, sampler, progress, outdir)
    rad = np.array(series["rad"])
    short = np.array(series["short"])
    # post-contact portion of the upset curve; elastic waves may wiggle the
    # surface radius by a fraction of a particle spacing, so small dips are
    # tolerated while the curve must grow overall
    live = short > 0.5 * body.dp_body
    rad_c = rad[live] if live.any() else rad
    short_c = short[live] if live.any() else short
    order = np.argsort(short_c)
    span = rad_c.max() - rad_c.min()
    monotone = bool(np.all(np.diff(rad_c[order]) >= -0.02 * max(span, 1e-12))
                    and rad_c[order][-1] > rad_c[order][0])
    zmax_ep = float(st.x[int(np.argmax(st.epbar)), 2])
    z_floor = float(st.x[:, 2].min())
    near_face = zmax_ep <= z_floor + 3.0 * body.dp_body
    rep = BenchReport(name)
    rep.add("radial_vs_short_monotone", float(monotone), 1.0, monotone)
    rep.add("epbar_max_z_m", zmax_ep, z_floor, bool(near_face))
    rep.add("epbar_nondecreasing", float(series["ep_drop"] == 0), 1.0,
            series["ep_drop"] == 0)
    rep.add("final_epbar_max", float(st.epbar.max()))
    rep.extras["curve"] = (short, rad)
    return rep


def bench_flyer(name, config, progress, outdir):
    bodies = config.bodies
    p_scale = None
    series = {"dp": [], "t_plastic": None, "init_ok": None}

    faces = []
    for body in bodies:
        z = body.state.X[:, 2]
        zmin, zmax = z.min(), z.max()
        # facing surface = the edge nearest the other body
        other = [b for b in bodies if b is not body][0]
        oz = other.state.X[:, 2].mean()
        faces.append(zmin if abs(zmin - oz) < abs(zmax - oz) else zmax)

    def total_momentum():
        return sum((b.state.m0[:, None] * b.state.v).sum(axis=0)
                   for b in bodies)

    def sampler(sim):
        nonlocal p_scale
        if p_scale is None:
            p_scale = sum(float(np.linalg.norm(
                (b.state.m0[:, None] * b.state.v).sum(axis=0)))
                for b in bodies)
            series["p0"] = total_momentum()
        dp_now = float(np.linalg.norm(total_momentum() - series["p0"]))
        series["dp"].append(dp_now)
        if series["t_plastic"] is None:
            for body, face in zip(bodies, faces):
                if np.any(body.state.epbar > 1e-10):
                    series["t_plastic"] = sim.t
                    idx = body.state.epbar > 1e-10
                    dist = np.abs(body.state.X[idx, 2] - face)
                    series["init_ok"] = bool(
                        dist.max() <= 2.0 * body.dp_body)
                    break

    _run(config, sampler, progress, outdir)
    rep = BenchReport(name)
    drift = max(series["dp"]) / p_scale if p_scale else 0.0
    rep.add("momentum_drift_rel", drift, 0.02, drift <= 0.02)
    got_plastic = series["t_plastic"] is not None
    rep.add("plastic_started", float(got_plastic), 1.0, got_plastic)
    if got_plastic:
        rep.add("plastic_at_interface", float(bool(series["init_ok"])), 1.0,
                bool(series["init_ok"]))
    return rep


_RUNNERS = {
    "beam2d": bench_beam,
    "plate3d": bench_plate,
    "branch2d": bench_branch,
    "kalthoff2d": bench_kalthoff,
    "taylor3d": bench_taylor,
    "flyer2d": bench_flyer,
}


def run_bench(name, scale=1.0, mapfac=None, eps0=None, cfl=None,
              time_max=None, scale_eps0=False, outdir=None, progress=None):
    if name not in _RUNNERS:
        raise CaseError(f"unknown benchmark {name!r}; choose from "
                        + ", ".join(sorted(_RUNNERS)))
    config = _load(name, scale, mapfac, eps0, cfl, time_max, scale_eps0)
    report = _RUNNERS[name](name, config, progress, outdir)
    if outdir is not None:
        report.write_csv(Path(outdir) / f"bench_{name}.csv")
    return report
