"""Iteration-count and timing study of CG with and without AMG.

The benchmark operator is the P1 heat-conduction matrix with unit
conductivity and a unit Robin coefficient on the whole boundary; the
right-hand side is the consistent load of a unit heat source. Each level is
one uniform refinement of the previous mesh.
"""

from dataclasses import dataclass, asdict
import time

import numpy as np

from . import fem
from .amg import build_classical, build_smoothed_aggregation
from .krylov import cg
from .mesh import build_box_mesh, uniform_refine

__all__ = ["BenchRow", "poisson_system", "run_bench", "format_table", "TABLE_COLUMNS"]

TABLE_COLUMNS = ("level", "n", "cg_iterations", "amg_iterations", "cg_seconds",
                 "amg_setup_seconds", "amg_solve_seconds", "operator_complexity", "amg_levels")


@dataclass
class BenchRow:
    level: int
    n: int
    cg_iterations: int
    amg_iterations: int
    cg_seconds: float
    amg_setup_seconds: float
    amg_solve_seconds: float
    operator_complexity: float
    amg_levels: int

    @property
    def amg_seconds(self):
        return self.amg_setup_seconds + self.amg_solve_seconds


def poisson_system(mesh, beta=1.0):
    """Matrix and unit-source load of ``-div grad T = 1`` with ``grad T . n = -beta T``."""
    V = fem.FunctionSpace(mesh, 1, 1)
    cells = mesh.cells
    verts = mesh.vertices

    def stiffness(s, e):
        return fem.thermal_element_matrices(verts[cells[s:e]], 1, 1.0, 0.0)[0]

    tf, _ = mesh.tagged_facets()
    extra = []
    if beta and len(tf):
        Mf, _ = fem.robin_element_matrices(verts[tf], 1, beta, 0.0)
        extra.append((tf, Mf))
    A = fem.assemble_matrix(V, stiffness, extra)
    # the P1 consistent load of a unit source is a quarter of each cell volume per vertex
    vol = mesh.volumes
    b = np.bincount(cells.ravel(), weights=np.repeat(vol / 4.0, 4), minlength=V.n)
    return A, b


def run_bench(base, levels, amg="classical", rtol=1e-6, unpreconditioned=True,
              maxit=5000, on_row=None, repeats=1, min_time=0.0):
    """Solve the benchmark problem on ``base`` and ``levels`` refinements of it.

    Parameters
    ----------
    base : Mesh or int
        Coarsest mesh, or the cell count per side of a unit-cube box mesh.
    levels : int
        Number of refinements; ``levels + 1`` rows are produced.
    amg : {"classical", "sa"}
    repeats : int
        AMG setup and solve are timed this many times; the minimum is kept.
    min_time : float
        Keep repeating (up to 100 times) until the timed runs of a level add
        up to at least this many seconds, so that millisecond-scale levels
        are sampled as densely as the large ones.

    Returns
    -------
    list of BenchRow
    """
    if amg not in ("classical", "sa"):
        raise ValueError(f"unknown AMG type {amg!r}")
    mesh = build_box_mesh(base, base, base) if isinstance(base, (int, np.integer)) else base
    rows = []
    for level in range(levels + 1):
        if level:
            mesh = uniform_refine(mesh)
        A, b = poisson_system(mesh)
        n = A.shape[0]
        cg_its, cg_sec = -1, float("nan")
        if unpreconditioned:
            t0 = time.perf_counter()
            _, rep = cg(A, b, None, rtol=rtol, maxit=maxit, norm="unpreconditioned")
            cg_sec = time.perf_counter() - t0
            cg_its = rep.iterations if rep.converged else -1
        setup = solve = np.inf
        count, spent = 0, 0.0
        while count < max(1, repeats) or (spent < min_time and count < 100):
            t0 = time.perf_counter()
            if amg == "classical":
                H = build_classical(A)
            else:
                H = build_smoothed_aggregation(A, np.ones((n, 1)), block_size=1)
            t1 = time.perf_counter()
            _, rep = cg(A, b, H.aspreconditioner(), rtol=rtol, maxit=maxit)
            t2 = time.perf_counter()
            setup, solve = min(setup, t1 - t0), min(solve, t2 - t1)
            count, spent = count + 1, spent + (t2 - t0)
        row = BenchRow(level, n, cg_its, rep.iterations if rep.converged else -1,
                       cg_sec, setup, solve, H.operator_complexity(), len(H.levels))
        rows.append(row)
        if on_row is not None:
            on_row(row)
    return rows


def format_table(rows, header=True):
    """Tab-separated table with fixed columns."""
    lines = ["\t".join(TABLE_COLUMNS)] if header else []
    for r in rows:
        d = asdict(r)
        lines.append("\t".join(
            f"{d[c]:.4f}" if isinstance(d[c], float) else str(d[c]) for c in TABLE_COLUMNS))
    return "\n".join(lines) + "\n"
