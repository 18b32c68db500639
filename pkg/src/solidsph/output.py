"""Output writers: per-body energies CSV, measure-plane CSVs, and legacy
ASCII VTK particle snapshots.  All numbers serialize at 17 significant
digits so golden files are bit-stable."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from . import backends
from .constitutive import cauchy_batch
from .core import Model

ENERGY_HEADER = ("time,body_mk,strain_energy,kinetic_energy,"
                 "fracture_energy,plastic_energy")
MEASURE_HEADER = "time,ux_avg,uy_avg,uz_avg,fx_total,fy_total,fz_total,count"


def _fmt(x):
    return f"{float(x):.17g}"


def compute_energies(body, be=None, grad_buf=None):
    """(strain, kinetic, fracture, plastic) energy of one body.

    Fracture surface energy uses the regularized crack functional
    sum V0 * Gc * [(1-s)^2/(4 eps0) + eps0 |grad0 s|^2] with the corrected
    SPH gradient; plastic energy is the accumulated dissipation."""
    st = body.state
    se = float(st.V0 @ st.psi_e)
    ke = 0.5 * float(st.m0 @ np.einsum("nd,nd->n", st.v, st.v))
    fe = 0.0
    pe = 0.0
    if body.fracture:
        be = be or backends.active()
        if grad_buf is None:
            grad_buf = np.empty((st.n, 3))
        adj = body.adjacency
        be.sph_gradient(adj.indptr, adj.rows, adj.indices, adj.grad0,
                        st.V0, st.s, grad_buf)
        g2 = np.einsum("nd,nd->n", grad_buf, grad_buf)
        mat = body.material
        density = (1.0 - st.s) ** 2 / (4.0 * mat.eps0) + mat.eps0 * g2
        fe = float(mat.Gc * (st.V0 @ density))
    if body.material.model == Model.J2:
        pe = body.plastic_work
    return se, ke, fe, pe


def write_energies_csv(path, series):
    """Write a complete energies series: rows of
    (time, mk, se, ke, fe, pe)."""
    with open(path, "w", newline="\n") as fh:
        fh.write(ENERGY_HEADER + "\n")
        for row in series:
            t, mk, se, ke, fe, pe = row
            fh.write(f"{_fmt(t)},{int(mk)},{_fmt(se)},{_fmt(ke)},"
                     f"{_fmt(fe)},{_fmt(pe)}\n")


def measure_row(body, idx, t):
    """Average displacement and total force (sum m0*a) over a particle set."""
    st = body.state
    if idx.size == 0:
        return (t, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    u_avg = st.u[idx].mean(axis=0)
    f_tot = (st.m0[idx, None] * st.a[idx]).sum(axis=0)
    return (t, u_avg[0], u_avg[1], u_avg[2], f_tot[0], f_tot[1], f_tot[2],
            int(idx.size))


def write_measure_csv(path, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(MEASURE_HEADER + "\n")
        for row in rows:
            t, ux, uy, uz, fx, fy, fz, count = row
            fh.write(",".join([_fmt(t), _fmt(ux), _fmt(uy), _fmt(uz),
                               _fmt(fx), _fmt(fy), _fmt(fz), str(count)])
                     + "\n")


def write_vtk_snapshot(dirpath, body, step):
    """Legacy ASCII VTK polydata snapshot: current positions plus
    displacement, velocity, Cauchy stress (xx,yy,zz,xy,xz,yz) and the
    phase-field or equivalent-plastic-strain scalar."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    st = body.state
    n = st.n
    x = st.x
    sigma, _ = cauchy_batch(st.F, st.S)
    path = dirpath / f"Body{body.mk}_{step:04d}.vtk"
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"solidsph body {body.mk} snapshot step {step}\n")
        fh.write("ASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {n} double\n")
        for p in x:
            fh.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")
        fh.write(f"VERTICES {n} {2 * n}\n")
        for i in range(n):
            fh.write(f"1 {i}\n")
        fh.write(f"POINT_DATA {n}\n")
        fh.write("VECTORS displacement double\n")
        for d in st.u:
            fh.write(f"{_fmt(d[0])} {_fmt(d[1])} {_fmt(d[2])}\n")
        fh.write("VECTORS velocity double\n")
        for d in st.v:
            fh.write(f"{_fmt(d[0])} {_fmt(d[1])} {_fmt(d[2])}\n")
        if body.material.model == Model.J2:
            fh.write("SCALARS eq_plastic_strain double 1\n")
            fh.write("LOOKUP_TABLE default\n")
            for val in st.epbar:
                fh.write(f"{_fmt(val)}\n")
        else:
            fh.write("SCALARS phase_field double 1\n")
            fh.write("LOOKUP_TABLE default\n")
            for val in st.s:
                fh.write(f"{_fmt(val)}\n")
        fh.write(f"FIELD attributes 1\ncauchy_stress 6 {n} double\n")
        for sg in sigma:
            fh.write(" ".join(_fmt(v) for v in (
                sg[0, 0], sg[1, 1], sg[2, 2], sg[0, 1], sg[0, 2], sg[1, 2]))
                + "\n")
    return path


class OutputManager:
    """Streams the standard output files during a run: one energies CSV for
    all bodies, one CSV per measure plane, and VTK snapshots per body per
    output time."""

    def __init__(self, outdir, write_vtk=True):
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.write_vtk = write_vtk
        self.count = 0
        self.energies_path = self.outdir / "DeformStruc_Energies.csv"
        self._energy_rows = []
        self._measure_rows = {}

    def emit(self, sim):
        for body in sim.bodies:
            se, ke, fe, pe = compute_energies(body, sim.be)
            self._energy_rows.append((sim.t, body.mk, se, ke, fe, pe))
            for i, idx in enumerate(body.measure_sets):
                key = (body.mk, i)
                self._measure_rows.setdefault(key, []).append(
                    measure_row(body, idx, sim.t))
            if self.write_vtk:
                write_vtk_snapshot(self.outdir / "DeformStruc", body,
                                   self.count)
        write_energies_csv(self.energies_path, self._energy_rows)
        for (mk, i), rows in self._measure_rows.items():
            write_measure_csv(
                self.outdir / f"MeasuringPlData_mk{mk}_{i}.csv", rows)
        self.count += 1

    def last_energies(self, mk):
        for row in reversed(self._energy_rows):
            if row[1] == mk:
                return row
        return None
