"""Command line interface.

Exit codes: 0 on success, 1 for invalid input (arguments, config, mesh
files), 2 when a solver fails.
"""

import argparse
import json
import math
import os
import sys
import time

from . import __version__
from .bench import format_table, run_bench
from .config import ConfigError, build_controller, build_problem, load_mesh, read_config
from .io import read_mesh, write_fields, write_mesh
from .mesh import build_box_mesh, quality_report, uniform_refine
from .sim import (PhysicalRangeError, SolverError, coupled_steady_solve, initial_state,
                  advance_transient)
from .timing import TimingReport

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_INVALID", "EXIT_SOLVER"]

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for solver failures here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {s}")
    return v


def build_parser():
    p = _Parser(prog="thermomech", description="Thermoelastic FE solver with AMG-preconditioned Krylov methods.")
    p.add_argument("--version", action="version", version=f"thermomech {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(q):
        q.add_argument("--threads", type=_positive_int, default=1,
                       help="worker threads for compiled kernels (default 1)")
        q.add_argument("-v", "--verbose", action="store_true")

    q = sub.add_parser("mesh-gen", help="write a Kuhn box mesh")
    q.add_argument("--cells", type=_positive_int, nargs="+", default=[4],
                   help="cells per side (one value) or per axis (three values)")
    q.add_argument("--extents", type=float, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"),
                   default=[0, 0, 0, 1, 1, 1])
    q.add_argument("--levels", type=_nonneg_int, default=0, help="uniform refinements")
    q.add_argument("--out", required=True, help="output tfmesh file")
    common(q)

    q = sub.add_parser("refine", help="uniformly refine a mesh")
    q.add_argument("--mesh", required=True)
    q.add_argument("--levels", type=_nonneg_int, default=1)
    q.add_argument("--out", required=True)
    common(q)

    q = sub.add_parser("quality", help="dihedral-angle histogram of a mesh")
    q.add_argument("--mesh", required=True)
    q.add_argument("--bins", type=_positive_int, default=18)
    common(q)

    for name, text in (("steady", "coupled steady solve"), ("transient", "adaptive transient run")):
        q = sub.add_parser(name, help=text)
        q.add_argument("--config", required=True, help="YAML run configuration")
        q.add_argument("--mesh", help="tfmesh file overriding the config's mesh")
        q.add_argument("--levels", type=_nonneg_int, default=0,
                       help="extra uniform refinements on top of the config")
        q.add_argument("--out", help="output directory (default: config output.directory)")
        q.add_argument("--solver", choices=("cg", "bicgstab"), help="thermal Krylov method")
        q.add_argument("--amg", choices=("classical", "sa"), help="thermal AMG type")
        q.add_argument("--no-rotations", action="store_true",
                       help="translations-only near-nullspace for the elastic AMG")
        if name == "transient":
            q.add_argument("--max-steps", type=_positive_int)
        common(q)

    q = sub.add_parser("bench", help="CG iteration and timing table over refinement levels")
    q.add_argument("--mesh", help="base tfmesh file (default: unit cube box mesh)")
    q.add_argument("--cells", type=_positive_int, default=13, help="cells per side of the base cube")
    q.add_argument("--levels", type=_nonneg_int, default=3)
    q.add_argument("--amg", choices=("classical", "sa"), default="classical")
    q.add_argument("--rtol", type=float, default=1e-6)
    q.add_argument("--repeats", type=_positive_int, default=1)
    q.add_argument("--min-time", type=float, default=0.0,
                   help="repeat each level until its timed runs reach this many seconds")
    q.add_argument("--no-unpreconditioned", action="store_true",
                   help="skip the plain CG column")
    q.add_argument("--out", help="TSV output file (default: stdout)")
    common(q)
    return p


def _set_threads(n):
    import warnings
    import numba
    with warnings.catch_warnings():
        # numba reports unusable optional threading backends on first use
        warnings.simplefilter("ignore")
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _cmd_mesh_gen(args):
    cells = args.cells * 3 if len(args.cells) == 1 else args.cells
    if len(cells) != 3:
        raise UsageError("--cells takes one or three values")
    e = args.extents
    mesh = build_box_mesh(*cells, extents=(e[:3], e[3:]))
    for _ in range(args.levels):
        mesh = uniform_refine(mesh)
    write_mesh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_cells} cells, "
          f"{len(mesh.facet_tags)} tagged facets")


def _cmd_refine(args):
    mesh = read_mesh(args.mesh)
    for _ in range(args.levels):
        mesh = uniform_refine(mesh)
    write_mesh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_cells} cells")


def _cmd_quality(args):
    sys.stdout.write(quality_report(read_mesh(args.mesh), args.bins).to_text())


def _setup_run(args, timer):
    with timer.phase("config read"):
        cfg = read_config(args.config, check_mesh=False)
    if args.mesh:
        cfg.mesh = os.path.abspath(args.mesh)
    cfg.refine += args.levels
    overrides = {}
    if args.solver:
        overrides["thermal_krylov"] = args.solver
    if args.amg:
        overrides["thermal_amg"] = args.amg
    if args.no_rotations:
        overrides["rotations"] = False
    with timer.phase("mesh read"):
        mesh = load_mesh(cfg)
    with timer.phase("dofmap"):
        problem = build_problem(cfg, mesh, overrides)
    out = args.out or cfg.output["directory"]
    if not os.path.isabs(out) and not args.out:
        out = os.path.join(os.path.dirname(os.path.abspath(args.config)), out)
    with timer.phase("output"):
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "config.yaml"), "w") as fh:
            fh.write(cfg.echo())
    return cfg, problem, out


def _write_timing(path, timer, wall):
    with open(path, "w") as fh:
        fh.write(timer.to_jsonl())
        fh.write(json.dumps({"record": "total", "seconds": wall,
                             "covered": timer.total() / wall if wall > 0 else 1.0}) + "\n")


def _cmd_steady(args):
    t0 = time.perf_counter()
    timer = TimingReport()
    cfg, problem, out = _setup_run(args, timer)
    res = coupled_steady_solve(problem, cfg.steady["initial_guess"], timer=timer)
    with timer.phase("output"):
        write_fields(os.path.join(out, "fields.vtk"), problem.mesh, res.T, res.u)
    wall = time.perf_counter() - t0
    _write_timing(os.path.join(out, "timing.jsonl"), timer, wall)
    print(f"steady: n_T = {problem.V.n}, n_u = {problem.W.n}, "
          f"Newton iterations {res.thermal.iterations}, "
          f"thermal Krylov {sum(res.thermal.linear_iterations)}, "
          f"elastic Krylov {res.elastic.iterations}")
    print(f"T range [{res.T.min():.6g}, {res.T.max():.6g}] K, "
          f"max |u| {abs(res.u).max():.6g} m, wall {wall:.3f} s")
    print(f"wrote {out}")


def _cmd_transient(args):
    t0 = time.perf_counter()
    timer = TimingReport()
    cfg, problem, out = _setup_run(args, timer)
    controller = build_controller(cfg)
    max_steps = args.max_steps or cfg.time["max_steps"]
    if math.isinf(controller.t_end) and max_steps is None:
        raise ConfigError("time.t_end", "a transient run needs t_end or max_steps")
    every = cfg.output["every"]
    state = initial_state(problem, cfg.initial_temperature)
    steps_path = os.path.join(out, "steps.jsonl")
    n = 0
    with open(steps_path, "w") as steps:
        while state.t < controller.t_end * (1 - 1e-12) and (max_steps is None or n < max_steps):
            state, rep = advance_transient(problem, state, controller, timer)
            n += 1
            timer.steps.append(rep.record())
            # flushed per step so an interrupted run keeps its history
            steps.write(json.dumps(rep.record()) + "\n")
            steps.flush()
            if n % every == 0:
                with timer.phase("output"):
                    write_fields(os.path.join(out, f"fields_{n:05d}.vtk"), problem.mesh,
                                 state.T, state.u)
            if args.verbose:
                print(f"step {rep.step}: t = {rep.t:.6g} s, dt = {rep.dt:.4g} s, "
                      f"max dT = {rep.max_change:.4g} K, rejections {rep.rejections}")
    with timer.phase("output"):
        write_fields(os.path.join(out, "fields.vtk"), problem.mesh, state.T, state.u)
    wall = time.perf_counter() - t0
    _write_timing(os.path.join(out, "timing.jsonl"), timer, wall)
    print(f"transient: {n} steps to t = {state.t:.6g} s, thermal AMG builds "
          f"{state.thermal_builds}, elastic AMG builds {state.elastic_builds}, wall {wall:.3f} s")
    print(f"wrote {out}")


def _cmd_bench(args):
    base = read_mesh(args.mesh) if args.mesh else args.cells

    def show(row):
        if args.verbose:
            print(format_table([row], header=False), end="", file=sys.stderr)

    rows = run_bench(base, args.levels, amg=args.amg, rtol=args.rtol,
                     unpreconditioned=not args.no_unpreconditioned, on_row=show,
                     repeats=args.repeats, min_time=args.min_time)
    table = format_table(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(table)


COMMANDS = {"mesh-gen": _cmd_mesh_gen, "refine": _cmd_refine, "quality": _cmd_quality,
            "steady": _cmd_steady, "transient": _cmd_transient, "bench": _cmd_bench}


def main(argv=None):
    """Run the CLI; returns the exit code."""
    try:
        args = build_parser().parse_args(argv)
        _set_threads(args.threads)
        if args.verbose:
            import logging
            logging.basicConfig(level=logging.INFO, format="%(message)s")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SolverError, PhysicalRangeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
