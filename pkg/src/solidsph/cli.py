"""Command-line entry point: run cases, inspect them, evaluate expressions,
and run the desk-scale benchmarks.

Exit codes: 0 success, 1 runtime/configuration failure, 2 usage errors
(including a missing case file).
"""

from __future__ import annotations

import argparse
import os
import sys
import time


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="solidsph",
        description="Total Lagrangian SPH solver for deformable solids")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a case file")
    runp.add_argument("case", help="path to the XML case file")
    runp.add_argument("--out", default="out", help="output directory")
    runp.add_argument("--threads", type=int, default=None)
    runp.add_argument("--time-max", type=float, default=None)
    runp.add_argument("--time-out", type=float, default=None)
    runp.add_argument("--dt", type=float, default=None,
                      help="fixed timestep overriding the adaptive criterion")
    runp.add_argument("--scale", type=float, default=1.0,
                      help="multiply dp by this factor")
    runp.add_argument("--mapfac", type=int, default=None)
    runp.add_argument("--no-vtk", action="store_true")
    runp.add_argument("--seed-check", action="store_true",
                      help="run twice and verify bit-identical energies")

    benchp = sub.add_parser("bench", help="run a named desk-scale benchmark")
    benchp.add_argument("name", help="beam2d | plate3d | branch2d | "
                                     "kalthoff2d | taylor3d | flyer2d")
    benchp.add_argument("--scale", type=float, default=1.0)
    benchp.add_argument("--mapfac", type=int, default=None)
    benchp.add_argument("--eps0", type=float, default=None,
                        help="phase-field length scale override [m]")
    benchp.add_argument("--scale-eps0", action="store_true",
                        help="scale the case's length scale with dp")
    benchp.add_argument("--cfl", type=float, default=None)
    benchp.add_argument("--time-max", type=float, default=None)
    benchp.add_argument("--threads", type=int, default=None)
    benchp.add_argument("--out", default=None, help="report/output directory")

    insp = sub.add_parser("inspect", help="load a case and print a summary")
    insp.add_argument("case")
    insp.add_argument("--scale", type=float, default=1.0)
    insp.add_argument("--mapfac", type=int, default=None)

    exprp = sub.add_parser("expr-eval", help="evaluate one expression")
    exprp.add_argument("expression")
    exprp.add_argument("context", nargs="*",
                       help="key=value pairs (x0, y0, z0, x, y, z, ux, uy, "
                            "uz, t, dt, dx)")
    exprp.add_argument("--locals", default="", dest="locals_src",
                       help="semicolon-separated name=value bindings")
    return parser


def _set_threads(n):
    if n is None:
        n = os.environ.get("SOLIDSPH_THREADS")
        if n is None:
            return
        n = int(n)
    os.environ.setdefault("NUMBA_NUM_THREADS", str(max(1, n)))
    from . import backends
    backends.set_threads(n)


def _check_case_path(path):
    if not os.path.exists(path):
        print(f"solidsph: case file not found: {path}", file=sys.stderr)
        sys.exit(2)


def _run_once(args, outdir, quiet=False):
    from . import caseio
    from .output import OutputManager, compute_energies
    from .stepper import Simulation

    overrides = {}
    if args.time_max is not None:
        overrides["time_max"] = args.time_max
    if args.time_out is not None:
        overrides["time_out"] = args.time_out
    if args.dt is not None:
        overrides["dt_override"] = args.dt
    if args.mapfac is not None:
        overrides["mapfac"] = args.mapfac
    config = caseio.load_case(args.case, dp_scale=args.scale, **overrides)
    sim = Simulation(config)
    manager = OutputManager(outdir, write_vtk=not args.no_vtk)
    wall0 = time.time()
    last = {"t": 0.0, "steps": 0}

    def on_output(s):
        manager.emit(s)
        if quiet:
            return
        ke = se = 0.0
        for body in s.bodies:
            b_se, b_ke, _, _ = compute_energies(body, s.be)
            se += b_se
            ke += b_ke
        dt = s.t - last["t"]
        nst = s.step_index - last["steps"]
        step_dt = dt / nst if nst else 0.0
        print(f"t={s.t:.6e}  dt={step_dt:.3e}  steps={s.step_index}  "
              f"KE={ke:.6e}  SE={se:.6e}  wall={time.time() - wall0:.1f}s")
        last["t"] = s.t
        last["steps"] = s.step_index

    sim.run(on_output=on_output)
    return manager


def cmd_run(args):
    _check_case_path(args.case)
    _set_threads(args.threads)
    if args.seed_check:
        m1 = _run_once(args, os.path.join(args.out, "seedcheck_a"),
                       quiet=True)
        m2 = _run_once(args, os.path.join(args.out, "seedcheck_b"),
                       quiet=True)
        b1 = open(m1.energies_path, "rb").read()
        b2 = open(m2.energies_path, "rb").read()
        if b1 != b2:
            print("seed-check FAILED: energies differ between identical runs",
                  file=sys.stderr)
            return 1
        print("seed-check passed: bit-identical energies across two runs")
        return 0
    _run_once(args, args.out)
    print(f"done: outputs in {args.out}")
    return 0


def cmd_bench(args):
    _set_threads(args.threads)
    from . import bench

    t0 = time.time()

    def progress(sim):
        print(f"  t={sim.t:.4e}  steps={sim.step_index}  "
              f"wall={time.time() - t0:.1f}s", end="\r", flush=True)

    report = bench.run_bench(
        args.name, scale=args.scale, mapfac=args.mapfac, eps0=args.eps0,
        cfl=args.cfl, time_max=args.time_max, scale_eps0=args.scale_eps0,
        outdir=args.out, progress=progress)
    print()
    print(report.format())
    return 0 if report.passed else 1


def cmd_inspect(args):
    _check_case_path(args.case)
    from . import caseio

    overrides = {}
    if args.mapfac is not None:
        overrides["mapfac"] = args.mapfac
    config = caseio.load_case(args.case, dp_scale=args.scale, **overrides)
    print(f"case: {args.case}")
    print(f"  dim={config.dim}  dp={config.dp:g}  cfl={config.cfl:g}  "
          f"kernel={config.kernel.name}  stepper={config.step_algorithm.name}")
    print(f"  time_max={config.time_max:g}  time_out={config.time_out:g}  "
          f"dt_override={config.dt_override}")
    print(f"  expressions: {sorted(config.expressions)}")
    print(f"  aux geometries: "
          f"{ {mk: len(p) for mk, p in config.aux_geometries.items()} }")
    for body in config.bodies:
        mat = body.material
        print(f"  body mk={body.mk}: n={body.n}  dp_body={body.dp_body:g}  "
              f"model={mat.model.name}  fracture={body.fracture}")
        print(f"    rho0={mat.rho0:g}  lam={mat.lam:g}  mu={mat.mu:g}  "
              f"kappa={mat.kappa:g}  c0={mat.c0:g}")
        print(f"    beta=({mat.beta1:g},{mat.beta2:g})  bcs={len(body.bcs)}  "
              f"notches={len(body.notches)}  planes={len(body.measure_planes)}"
              f"  mean_neighbors={body.adjacency.nnz / body.n:.1f}")
    for note in config.notices:
        print(f"  note: {note}")
    return 0


def cmd_expr_eval(args):
    from . import expr as ex

    ctx = ex.EvalContext()
    for pair in args.context:
        if "=" not in pair:
            print(f"solidsph: bad context pair {pair!r} (want key=value)",
                  file=sys.stderr)
            return 2
        key, _, value = pair.partition("=")
        if key not in ex.VARIABLES:
            print(f"solidsph: unknown context variable {key!r}",
                  file=sys.stderr)
            return 2
        setattr(ctx, key, float(value))
    ast = ex.parse(args.expression, args.locals_src)
    result = ex.eval_expr(ast, ctx)
    print("skip" if result is ex.SKIP else f"{result:.17g}")
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    from .core import CaseError, SimulationError
    from .expr import ExprError

    handlers = {
        "run": cmd_run,
        "bench": cmd_bench,
        "inspect": cmd_inspect,
        "expr-eval": cmd_expr_eval,
    }
    try:
        return handlers[args.command](args)
    except (CaseError, SimulationError, ExprError) as err:
        print(f"solidsph: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
