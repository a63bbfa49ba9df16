"""Algebraic multigrid preconditioners.

Two hierarchies are provided: classical Ruge-Stuben coarsening with direct
interpolation for scalar operators, and smoothed aggregation driven by a
near-nullspace for vector (elastic) operators. Both are applied as one
symmetric V(1,1) cycle per preconditioner call.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from . import _kernels
from .krylov import as_csr, chebyshev_smoother, estimate_lambda_max

__all__ = [
    "AmgError",
    "Level",
    "AmgHierarchy",
    "rigid_body_modes",
    "classical_strength",
    "build_classical",
    "build_smoothed_aggregation",
    "vcycle",
]


class AmgError(RuntimeError):
    """Hierarchy construction failed."""


@dataclass
class Level:
    A: sp.csr_matrix
    P: sp.csr_matrix = None
    R: sp.csr_matrix = None
    smoother: str = "sgs"
    dinv: np.ndarray = None
    lmax: float = None
    degree: int = 2


class _CoarseSolver:
    """Dense Cholesky for symmetric matrices, otherwise pivoted LU, then least squares."""

    def __init__(self, A):
        A = as_csr(A)
        self.kind = "diagonal"
        if A.nnz == np.count_nonzero(A.diagonal()) and A.nnz == A.shape[0]:
            self.d = A.diagonal()
            return
        Ad = A.toarray()
        # Cholesky reads one triangle only, so it is limited to symmetric matrices
        if np.abs(Ad - Ad.T).max() <= 1e-14 * np.abs(Ad).max():
            try:
                self.f = la.cho_factor(Ad)
                self.kind = "cholesky"
                return
            except la.LinAlgError:
                pass
        lu = la.lu_factor(Ad, check_finite=False)
        if np.all(np.abs(np.diag(lu[0])) > 1e-13 * np.abs(Ad).max()):
            self.f = lu
            self.kind = "lu"
        else:
            self.f = np.linalg.pinv(Ad)
            self.kind = "pinv"

    def __call__(self, b):
        if self.kind == "diagonal":
            return b / self.d
        if self.kind == "cholesky":
            return la.cho_solve(self.f, b)
        if self.kind == "lu":
            return la.lu_solve(self.f, b)
        return self.f @ b


@dataclass
class AmgHierarchy:
    levels: list
    coarse_size_threshold: int
    strength_threshold: float
    kind: str
    build_info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coarse_solver = _CoarseSolver(self.levels[-1].A)

    @property
    def sizes(self):
        return [lv.A.shape[0] for lv in self.levels]

    def operator_complexity(self):
        return sum(lv.A.nnz for lv in self.levels) / self.levels[0].A.nnz

    def grid_complexity(self):
        return sum(self.sizes) / self.sizes[0]

    def aspreconditioner(self):
        return lambda r: vcycle(self, r)

    def diagnostics(self):
        """Per-level sizes and complexities as structured text."""
        lines = [f"amg {self.kind}", f"levels {len(self.levels)}",
                 f"strength_threshold {self.strength_threshold:g}",
                 f"coarse_size_threshold {self.coarse_size_threshold}",
                 "level\tsize\tnnz"]
        for i, lv in enumerate(self.levels):
            lines.append(f"{i}\t{lv.A.shape[0]}\t{lv.A.nnz}")
        lines.append(f"grid_complexity {self.grid_complexity():.4f}")
        lines.append(f"operator_complexity {self.operator_complexity():.4f}")
        lines.append(f"coarse_solver {self.coarse_solver.kind}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- near-nullspace


def rigid_body_modes(coords, dofmap=None, orthonormalize=True):
    """The 6 rigid body modes of 3D elasticity at nodes ``coords``.

    Columns are x, y, z translations followed by rotations about the x, y
    and z axes through the centroid. ``dofmap`` (optional) must have block
    size 3; its node coordinates replace ``coords``.
    """
    if dofmap is not None:
        if dofmap.block_size != 3:
            raise ValueError("rigid body modes need a 3-vector space")
        coords = dofmap.node_coords
    X = np.asarray(coords, dtype=float)
    if X.ndim != 2 or X.shape[1] != 3:
        raise ValueError("coords must have shape (N, 3)")
    N = X.shape[0]
    d = X - X.mean(axis=0)
    B = np.zeros((N, 3, 6))
    for c in range(3):
        B[:, c, c] = 1.0
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    B[:, 1, 3], B[:, 2, 3] = -z, y
    B[:, 0, 4], B[:, 2, 4] = z, -x
    B[:, 0, 5], B[:, 1, 5] = -y, x
    B = B.reshape(3 * N, 6)
    if orthonormalize:
        B, _ = np.linalg.qr(B)
    return B


# ---------------------------------------------------------------- classical AMG


def _galerkin(R, A, P):
    """Coarse operator ``R A P`` with sorted column indices."""
    Ac = (R @ (A @ P)).tocsr()
    Ac.sort_indices()
    return Ac



def classical_strength(A, theta, measure="negative"):
    """Strong couplings of each row as a CSR matrix of ones.

    ``measure="negative"`` marks ``-a_ij >= theta * max_k (-a_ik)``, the
    Ruge-Stuben definition for M-matrix-like operators; ``"abs"`` compares
    magnitudes ``|a_ij| >= theta * max_k |a_ik|``. Diagonal entries are
    never strong.
    """
    if measure not in ("negative", "abs"):
        raise ValueError(f"unknown strength measure {measure!r}")
    A = as_csr(A)
    ip, ix = _kernels.classical_strength(A.indptr, A.indices, A.data, float(theta),
                                         measure == "negative")
    return sp.csr_matrix((np.ones(len(ix)), ix, ip), shape=A.shape)


def build_classical(A, strength_threshold=0.25, coarse_size_threshold=200,
                    max_levels=25, block_size=1, second_pass=True, measure="negative"):
    """Ruge-Stuben hierarchy with direct interpolation and Galerkin coarse operators.

    Coarsening stops at ``coarse_size_threshold`` unknowns, or when no
    strong couplings remain. A level shrinking by less than 10% raises
    :class:`AmgError`.
    """
    if block_size != 1:
        raise ValueError("classical AMG needs a scalar operator (block size 1)")
    A = as_csr(A)
    levels = []
    while True:
        n = A.shape[0]
        lv = Level(A=A, smoother="sgs")
        levels.append(lv)
        if n <= coarse_size_threshold or len(levels) >= max_levels:
            break
        S = classical_strength(A, strength_threshold, measure)
        if S.nnz == 0:
            break
        T = S.T.tocsr()
        splitting = _kernels.rs_cf_splitting(S.indptr, S.indices, T.indptr, T.indices)
        if second_pass:
            splitting = _kernels.rs_second_pass(S.indptr, S.indices, splitting)
        ip, ix, data, nc = _kernels.direct_interpolation(
            A.indptr, A.indices, A.data, S.indptr, S.indices, splitting)
        if nc == 0:
            break
        if nc > 0.9 * n:
            sizes = [lv.A.shape[0] for lv in levels]
            raise AmgError(f"coarsening stagnated at level {len(levels) - 1}: "
                           f"{n} -> {nc} points (level sizes {sizes})")
        P = sp.csr_matrix((data, ix, ip), shape=(n, nc))
        lv.P = P
        lv.R = P.T.tocsr()
        A = _galerkin(lv.R, A, P)
    return AmgHierarchy(levels, coarse_size_threshold, strength_threshold, "classical",
                        {"splitting": "rs", "interpolation": "direct", "measure": measure})


# ---------------------------------------------------------------- smoothed aggregation


def _condensed(A, bs):
    """Node matrix of Frobenius norms of the bs x bs blocks of A."""
    if bs == 1:
        C = abs(A)
    else:
        Ab = A.tobsr(blocksize=(bs, bs))
        norms = np.sqrt((Ab.data**2).sum(axis=(1, 2)))
        C = sp.csr_matrix((norms, Ab.indices, Ab.indptr),
                          shape=(A.shape[0] // bs, A.shape[1] // bs))
    C = as_csr(C)
    return C


def _sa_strength(A, bs, theta):
    C = _condensed(A, bs)
    d = C.diagonal()
    n = C.shape[0]
    rows = np.repeat(np.arange(n), np.diff(C.indptr))
    cols = C.indices
    with np.errstate(divide="ignore", invalid="ignore"):
        s = C.data / np.sqrt(d[rows] * d[cols])
    keep = (rows == cols) | ((s >= theta) & (C.data > 0))
    S = sp.csr_matrix((s[keep], cols[keep],
                       np.concatenate([[0], np.cumsum(np.bincount(rows[keep], minlength=n))])),
                      shape=C.shape)
    return S


def _tentative(agg, n_agg, B, bs):
    """Tentative prolongator from local QR of the near-nullspace per aggregate."""
    n, k = B.shape
    nodes = np.flatnonzero(agg >= 0)
    order = nodes[np.argsort(agg[nodes], kind="stable")]
    sizes = np.bincount(agg[nodes], minlength=n_agg)
    ptr = np.concatenate([[0], np.cumsum(sizes)])
    rows, cols, vals = [], [], []
    Bc = np.zeros((n_agg, k, k))
    for s in np.unique(sizes):
        ids = np.flatnonzero(sizes == s)
        node_mat = order[ptr[ids][:, None] + np.arange(s)]           # (g, s)
        dofs = (bs * node_mat[:, :, None] + np.arange(bs)).reshape(len(ids), s * bs)
        Q, R = np.linalg.qr(B[dofs])                                  # (g, m, r), (g, r, k)
        r = Q.shape[2]
        rows.append(np.repeat(dofs, r, axis=1).ravel())
        cols.append(np.tile(np.tile(np.arange(r), s * bs), (len(ids), 1))
                    + k * ids[:, None])
        vals.append(Q.ravel())
        Bc[ids, :r] = R
    rows = np.concatenate(rows)
    cols = np.concatenate([c.ravel() for c in cols])
    vals = np.concatenate(vals)
    T = sp.csr_matrix((vals, (rows, cols)), shape=(n, n_agg * k))
    return T, Bc.reshape(n_agg * k, k)


def build_smoothed_aggregation(A, nullspace, strength_threshold=0.04,
                               coarse_size_threshold=200, block_size=3,
                               max_levels=25, degree=2, eig_iters=30,
                               cheb_ratio=30.0):
    """Smoothed-aggregation hierarchy with Chebyshev smoothing.

    Parameters
    ----------
    A : sparse matrix
        Symmetric positive definite operator, dofs interleaved in blocks of
        ``block_size``.
    nullspace : (n, k) array
        Near-nullspace vectors (e.g. :func:`rigid_body_modes`).
    """
    A = as_csr(A)
    B = np.asarray(nullspace, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n = A.shape[0]
    if B.shape[0] != n:
        raise ValueError(f"nullspace has {B.shape[0]} rows, operator has {n}")
    if n % block_size:
        raise ValueError("operator size is not a multiple of the block size")
    k = B.shape[1]
    bs = block_size
    levels = []
    while True:
        n = A.shape[0]
        d = A.diagonal()
        dinv = np.where(d != 0, 1.0 / np.where(d != 0, d, 1.0), 0.0)
        lmax = estimate_lambda_max(A, dinv, iters=eig_iters)
        lv = Level(A=A, smoother="chebyshev", dinv=dinv, lmax=lmax, degree=degree)
        levels.append(lv)
        if n <= coarse_size_threshold or len(levels) >= max_levels:
            break
        S = _sa_strength(A, bs, strength_threshold)
        agg, n_agg = _kernels.standard_aggregation(S.indptr, S.indices, S.data)
        if n_agg == 0:
            break
        if n_agg * k > 0.9 * n:
            raise AmgError(f"aggregation stagnated at level {len(levels) - 1}: "
                           f"{n} dofs -> {n_agg} aggregates x {k} modes")
        T, B = _tentative(agg, n_agg, B, bs)
        omega = 4.0 / (3.0 * lmax)
        P = as_csr(T - omega * sp.diags(dinv) @ (A @ T))
        lv.P = P
        lv.R = P.T.tocsr()
        lv.cheb_ratio = cheb_ratio
        A = _galerkin(lv.R, A, P)
        bs = k
    for lv in levels:
        lv.cheb_ratio = cheb_ratio
    return AmgHierarchy(levels, coarse_size_threshold, strength_threshold,
                        "smoothed_aggregation", {"nullspace_dim": k})


# ---------------------------------------------------------------- cycle


def _smooth(lv, x, b, pre):
    if lv.smoother == "sgs":
        A = lv.A
        n = A.shape[0]
        if pre:
            _kernels.gauss_seidel_sweep(A.indptr, A.indices, A.data, x, b, 0, n, 1)
        else:
            _kernels.gauss_seidel_sweep(A.indptr, A.indices, A.data, x, b, n - 1, -1, -1)
        return x
    return chebyshev_smoother(lv.A, lv.dinv, lv.lmax, lv.degree, x, b,
                              ratio=getattr(lv, "cheb_ratio", 30.0))


def vcycle(H, r):
    """Apply one V(1,1) cycle to residual ``r`` starting from a zero guess."""
    r = np.asarray(r, dtype=float)
    if r.shape[0] != H.levels[0].A.shape[0]:
        raise ValueError(f"residual length {r.shape[0]} does not match "
                         f"operator size {H.levels[0].A.shape[0]}")
    return _cycle(H, 0, r)


def _cycle(H, l, b):
    lv = H.levels[l]
    if l == len(H.levels) - 1:
        return H.coarse_solver(b)
    x = _smooth(lv, np.zeros_like(b), b, pre=True)
    res = b - lv.A @ x
    x += lv.P @ _cycle(H, l + 1, lv.R @ res)
    return _smooth(lv, x, b, pre=False)
