"""Thermoelastic finite elements on tetrahedral meshes with AMG-preconditioned Krylov solvers.

Modules
-------
mesh
    Tetrahedral meshes, uniform refinement, dihedral-angle quality.
fem
    P1/P2 Lagrange spaces, quadrature and batched element kernels.
krylov
    CG, BiCGSTAB, smoothers and Dirichlet elimination on CSR matrices.
amg
    Classical (Ruge-Stuben) and smoothed-aggregation multigrid.
sim
    Materials, boundary schedules, Newton thermal and elastic solves,
    adaptive time stepping.
io, config, cli, bench
    File formats, YAML configuration, command line and benchmark table.
"""

__version__ = "0.1.0"
