"""Sparse operators, Krylov solvers, relaxation and Dirichlet elimination.

Matrices are ``scipy.sparse.csr_matrix`` with sorted, duplicate-free column
indices. Preconditioners are callables mapping a residual to a correction.
"""

from dataclasses import dataclass
import logging

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import _kernels

__all__ = [
    "SolveReport",
    "as_csr",
    "spmv",
    "cg",
    "bicgstab",
    "jacobi_smoother",
    "gauss_seidel_smoother",
    "chebyshev_smoother",
    "estimate_lambda_max",
    "apply_dirichlet",
    "write_matrix_market",
    "read_matrix_market",
]

log = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-30


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    breakdown_reason: str = None
    history: list = None

    def __post_init__(self):
        if self.history is None:
            self.history = []


def as_csr(A):
    """Canonical CSR copy-free view where possible (sorted, summed indices)."""
    if not sp.issparse(A):
        A = sp.csr_matrix(np.asarray(A, dtype=float))
    A = A.tocsr()
    if not A.has_canonical_format:
        A = A.copy()
        A.sum_duplicates()
        A.sort_indices()
    return A


def spmv(A, x):
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {x.shape}")
    return A @ x


def _identity(r):
    return r.copy()


def cg(A, b, P=None, rtol=1e-6, maxit=1000, x0=None, norm="preconditioned"):
    """Preconditioned conjugate gradients.

    Convergence is declared when the residual norm relative to the initial
    one drops below ``rtol``. With ``norm="preconditioned"`` the norm of
    ``P(r)`` is used, with ``"unpreconditioned"`` that of ``r``.

    Returns
    -------
    x : ndarray
    report : SolveReport
        ``breakdown_reason`` is set when ``p.Ap`` or ``r.P(r)`` is
        non-positive (loss of definiteness).
    """
    if norm not in ("preconditioned", "unpreconditioned"):
        raise ValueError(f"unknown norm type {norm!r}")
    P = P or _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x if x0 is not None else b.copy()
    z = P(r)
    rz = r @ z

    def rnorm(r, z):
        return np.sqrt(abs(z @ z)) if norm == "preconditioned" else np.linalg.norm(r)

    r0 = rnorm(r, z)
    history = [1.0]
    if r0 == 0.0:
        return x, SolveReport(0, 0.0, True, None, history)
    if rz <= 0:
        return x, SolveReport(0, 1.0, False, "indefinite preconditioner", history)
    p = z.copy()
    rel = 1.0
    for it in range(1, maxit + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0 or abs(pAp) < BREAKDOWN_TOL:
            return x, SolveReport(it - 1, rel, False,
                                  f"indefinite operator (p.Ap = {pAp:.3e})", history)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = P(r)
        rz_new = r @ z
        rel = rnorm(r, z) / r0
        history.append(rel)
        if rel <= rtol:
            return x, SolveReport(it, rel, True, None, history)
        if rz_new <= 0:
            return x, SolveReport(it, rel, False,
                                  f"indefinite preconditioner (r.z = {rz_new:.3e})", history)
        p *= rz_new / rz
        p += z
        rz = rz_new
    return x, SolveReport(maxit, rel, False, None, history)


def bicgstab(A, b, P=None, rtol=1e-6, maxit=1000, x0=None):
    """Right-preconditioned BiCGSTAB; converged when ``|r| / |r0| <= rtol``."""
    P = P or _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    r0n = np.linalg.norm(r)
    history = [1.0]
    if r0n == 0.0:
        return x, SolveReport(0, 0.0, True, None, history)
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    rel = 1.0
    for it in range(1, maxit + 1):
        rho_new = rhat @ r
        if abs(rho_new) < BREAKDOWN_TOL * r0n**2:
            return x, SolveReport(it - 1, rel, False, "rho breakdown", history)
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        phat = P(p)
        v = A @ phat
        denom = rhat @ v
        if abs(denom) < BREAKDOWN_TOL:
            return x, SolveReport(it - 1, rel, False, "rhat.v breakdown", history)
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) / r0n <= rtol:
            x += alpha * phat
            rel = np.linalg.norm(s) / r0n
            history.append(rel)
            return x, SolveReport(it, rel, True, None, history)
        shat = P(s)
        t = A @ shat
        tt = t @ t
        if tt == 0.0:
            return x, SolveReport(it, rel, False, "t = 0 breakdown", history)
        omega = (t @ s) / tt
        x += alpha * phat + omega * shat
        r = s - omega * t
        rel = np.linalg.norm(r) / r0n
        history.append(rel)
        if rel <= rtol:
            return x, SolveReport(it, rel, True, None, history)
        if omega == 0.0:
            return x, SolveReport(it, rel, False, "omega breakdown", history)
    return x, SolveReport(maxit, rel, False, None, history)


# ---------------------------------------------------------------- smoothers


def _diagonal(A):
    d = A.diagonal()
    if np.any(d == 0):
        raise ZeroDivisionError(f"zero diagonal entry at row {int(np.flatnonzero(d == 0)[0])}")
    return d


def jacobi_smoother(A, x, b, sweeps=1, omega=1.0):
    d = _diagonal(A)
    x = np.array(x, dtype=float)
    for _ in range(sweeps):
        x += omega * (b - A @ x) / d
    return x


def gauss_seidel_smoother(A, x, b, sweeps=1, direction="forward"):
    """Gauss-Seidel sweeps; ``direction`` is forward, backward or symmetric."""
    A = as_csr(A)
    _diagonal(A)
    x = np.array(x, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    for _ in range(sweeps):
        if direction in ("forward", "symmetric"):
            _kernels.gauss_seidel_sweep(A.indptr, A.indices, A.data, x, b, 0, n, 1)
        if direction in ("backward", "symmetric"):
            _kernels.gauss_seidel_sweep(A.indptr, A.indices, A.data, x, b, n - 1, -1, -1)
        if direction not in ("forward", "backward", "symmetric"):
            raise ValueError(f"unknown sweep direction {direction!r}")
    return x


def chebyshev_smoother(A, dinv, lmax, degree, x, b, ratio=10.0):
    """Chebyshev smoothing on the diagonally scaled operator ``D^-1 A``.

    Targets the eigenvalue interval ``[lmax / ratio, lmax]``. The update is
    ``x + q(D^-1 A) D^-1 r`` with ``q`` of the given degree, so the error is
    multiplied by the shifted Chebyshev polynomial of degree ``degree + 1``;
    degree 0 is a damped Jacobi (Richardson) step with weight
    ``2 / (lmin + lmax)``.
    """
    if not lmax > 0:
        raise ValueError(f"eigenvalue estimate must be positive, got {lmax}")
    lmin = lmax / ratio
    theta = 0.5 * (lmax + lmin)
    delta = 0.5 * (lmax - lmin)
    sigma = theta / delta
    x = np.array(x, dtype=float)
    r = b - A @ x
    d = dinv * r / theta
    x += d
    rho = 1.0 / sigma
    for _ in range(degree):
        r -= A @ d
        rho_new = 1.0 / (2.0 * sigma - rho)
        d *= rho_new * rho
        d += (2.0 * rho_new / delta) * (dinv * r)
        x += d
        rho = rho_new
    return x


def estimate_lambda_max(A, dinv=None, iters=30, safety=1.1, seed=0):
    """Largest eigenvalue of ``D^-1 A`` from ``iters`` Lanczos steps, times ``safety``.

    ``A`` must be symmetric positive definite and ``dinv`` positive (the
    Lanczos recurrence runs on the symmetric ``D^-1/2 A D^-1/2``).
    """
    n = A.shape[0]
    s = np.ones(n) if dinv is None else np.sqrt(np.asarray(dinv, dtype=float))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    v_old = np.zeros(n)
    alphas, betas = [], []
    beta = 0.0
    for _ in range(min(iters, n)):
        w = s * (A @ (s * v))
        a = w @ v
        w -= a * v + beta * v_old
        alphas.append(a)
        beta = np.linalg.norm(w)
        if beta <= 1e-12 * abs(a):
            break
        betas.append(beta)
        v_old, v = v, w / beta
    k = len(alphas)
    T = np.diag(alphas) + np.diag(betas[:k - 1], 1) + np.diag(betas[:k - 1], -1)
    return float(np.linalg.eigvalsh(T)[-1]) * safety


# ---------------------------------------------------------------- boundary conditions


def apply_dirichlet(A, b, dofs, values):
    """Symmetric elimination of prescribed dofs.

    Rows and columns of ``dofs`` are zeroed, their diagonal set to one and
    ``b`` lifted so the constrained solution equals ``values`` there.
    """
    A = as_csr(A)
    n = A.shape[0]
    dofs = np.asarray(dofs, dtype=np.int64).ravel()
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    if dofs.size and (dofs.min() < 0 or dofs.max() >= n):
        raise IndexError("Dirichlet dof out of range")
    order = np.lexsort((values, dofs))
    d_s, v_s = dofs[order], values[order]
    same = d_s[1:] == d_s[:-1]
    if np.any(same & (v_s[1:] != v_s[:-1])):
        bad = int(d_s[1:][same & (v_s[1:] != v_s[:-1])][0])
        raise ValueError(f"conflicting Dirichlet values for dof {bad}")
    g = np.zeros(n)
    g[d_s] = v_s
    mask = np.zeros(n, dtype=bool)
    mask[d_s] = True
    b = np.asarray(b, dtype=float) - A @ g
    keep = sp.diags((~mask).astype(float))
    A = (keep @ A @ keep + sp.diags(mask.astype(float))).tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    b[mask] = g[mask]
    return A, b


# ---------------------------------------------------------------- matrix market


def write_matrix_market(path, A):
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), symmetry="general")


def read_matrix_market(path):
    return as_csr(scipy.io.mmread(str(path)))
