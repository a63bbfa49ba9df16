"""Lagrange P1/P2 spaces on tetrahedra, quadrature and element kernels.

Element kernels come in two flavours: batched functions working on stacks of
cells (``(m, 4, 3)`` corner coordinates, coefficients sampled at quadrature
points ``(m, Q)``) used by global assembly, and single-element wrappers
named after the corresponding weak-form terms.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .mesh import LOCAL_EDGES, inverse_jacobian

__all__ = [
    "FunctionSpace",
    "DofMap",
    "QuadratureRule",
    "ElasticModuli",
    "build_dofmap",
    "quadrature",
    "facet_quadrature",
    "tet_basis",
    "tri_basis",
    "cell_geometry",
    "thermal_element_matrices",
    "robin_element_matrices",
    "elastic_element_system",
    "body_load_vectors",
    "pressure_load_vectors",
    "element_thermal_matrices",
    "element_robin_matrices",
    "element_elastic_system",
    "element_body_and_pressure_loads",
    "interpolate",
    "evaluate",
    "assemble_matrix",
    "assemble_vector",
    "facet_dofs",
    "facet_normals",
]

CHUNK = 1 << 17


# ---------------------------------------------------------------- quadrature


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (Q, dim) reference coordinates
    weights: np.ndarray  # (Q,), sum = reference measure
    degree: int


def _sym_tet_points():
    rules = {}
    rules[1] = (np.array([[0.25, 0.25, 0.25]]), np.array([1.0 / 6.0]))
    a, b = 0.5854101966249685, 0.1381966011250105
    pts = np.array([[b, b, b], [a, b, b], [b, a, b], [b, b, a]])
    rules[2] = (pts, np.full(4, 1.0 / 24.0))
    # 14-point positive-weight rule, exact to degree 5
    pts, wts = [], []
    for a, w in ((0.0927352503108912, 0.01224884051939366),
                 (0.3108859192633006, 0.01878132095300264)):
        c = 1.0 - 3.0 * a
        for bary in ((c, a, a, a), (a, c, a, a), (a, a, c, a), (a, a, a, c)):
            pts.append(bary[1:])
            wts.append(w)
    b = 0.0455037041256496
    c = 0.5 - b
    for bary in ((b, b, c, c), (b, c, b, c), (b, c, c, b),
                 (c, b, b, c), (c, b, c, b), (c, c, b, b)):
        pts.append(bary[1:])
        wts.append(0.007091003462846911)
    rules[5] = (np.array(pts), np.array(wts))
    return rules


_TET_RULES = _sym_tet_points()


@lru_cache(maxsize=None)
def quadrature(degree):
    """Quadrature on the reference tetrahedron exact to ``degree`` (1..4)."""
    if degree not in (1, 2, 3, 4):
        raise ValueError(f"unsupported quadrature degree {degree}")
    key = {1: 1, 2: 2, 3: 5, 4: 5}[degree]
    p, w = _TET_RULES[key]
    return QuadratureRule(p, w, key)


@lru_cache(maxsize=None)
def facet_quadrature(degree):
    """Quadrature on the reference triangle (area 1/2) exact to ``degree``."""
    if degree == 1:
        return QuadratureRule(np.array([[1 / 3, 1 / 3]]), np.array([0.5]), 1)
    if degree == 2:
        p = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return QuadratureRule(p, np.full(3, 1 / 6), 2)
    if degree in (3, 4):
        a, wa = 0.445948490915965, 0.223381589678011
        b, wb = 0.091576213509771, 0.109951743655322
        p = np.array([[a, a], [1 - 2 * a, a], [a, 1 - 2 * a],
                      [b, b], [1 - 2 * b, b], [b, 1 - 2 * b]])
        w = 0.5 * np.array([wa, wa, wa, wb, wb, wb])
        return QuadratureRule(p, w, 4)
    raise ValueError(f"unsupported facet quadrature degree {degree}")


# ---------------------------------------------------------------- basis


def tet_basis(degree, points):
    """Values (Q, k) and reference gradients (Q, k, 3) of the Lagrange basis.

    Local order: the 4 vertices, then (P2) the 6 edges in ``LOCAL_EDGES`` order.
    """
    x = np.atleast_2d(points)
    lam = np.column_stack([1.0 - x.sum(axis=1), x[:, 0], x[:, 1], x[:, 2]])
    dlam = np.array([[-1.0, -1.0, -1.0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    q = x.shape[0]
    if degree == 1:
        return lam, np.broadcast_to(dlam, (q, 4, 3)).copy()
    if degree != 2:
        raise ValueError(f"unsupported degree {degree}")
    vals = np.empty((q, 10))
    grads = np.empty((q, 10, 3))
    vals[:, :4] = lam * (2 * lam - 1)
    grads[:, :4] = (4 * lam - 1)[:, :, None] * dlam[None]
    for e, (a, b) in enumerate(LOCAL_EDGES):
        vals[:, 4 + e] = 4 * lam[:, a] * lam[:, b]
        grads[:, 4 + e] = 4 * (lam[:, a, None] * dlam[b] + lam[:, b, None] * dlam[a])
    return vals, grads


_TRI_EDGES = np.array([(0, 1), (0, 2), (1, 2)])


def tri_basis(degree, points):
    """Values (Q, k) of the Lagrange basis on the reference triangle."""
    x = np.atleast_2d(points)
    lam = np.column_stack([1.0 - x.sum(axis=1), x[:, 0], x[:, 1]])
    if degree == 1:
        return lam
    vals = np.empty((x.shape[0], 6))
    vals[:, :3] = lam * (2 * lam - 1)
    for e, (a, b) in enumerate(_TRI_EDGES):
        vals[:, 3 + e] = 4 * lam[:, a] * lam[:, b]
    return vals


def cell_geometry(p):
    """Determinants and inverse Jacobians for stacked cells ``p`` (m, 4, 3)."""
    det, Jinv = inverse_jacobian(p)
    scale = np.abs(p[:, 1:] - p[:, :1]).max(axis=(1, 2)) ** 3
    if np.any(np.abs(det) <= 1e-14 * scale):
        raise ValueError("degenerate cell Jacobian")
    return det, Jinv


def _phys_gradients(p, degree, rule):
    """Physical basis gradients, (m, k, 3) for P1 or (m, Q, k, 3) for P2."""
    det, Jinv = cell_geometry(p)
    if degree == 1:
        _, ref = tet_basis(1, rule.points[:1])
        return np.matmul(ref[0], Jinv), np.abs(det)
    _, ref = tet_basis(degree, rule.points)
    return np.matmul(ref[None], Jinv[:, None]), np.abs(det)


def _gram(G, wq):
    """sum_q wq * G_q G_q^T for G (m, k, 3) (constant) or (m, Q, k, 3)."""
    if G.ndim == 3:
        return wq.sum(axis=1)[:, None, None] * np.matmul(G, G.transpose(0, 2, 1))
    m, Q, k, _ = G.shape
    Gt = G.transpose(0, 2, 1, 3).reshape(m, k, 3 * Q)
    Gw = (G * wq[:, :, None, None]).transpose(0, 2, 1, 3).reshape(m, k, 3 * Q)
    return np.matmul(Gw, Gt.transpose(0, 2, 1))


# ---------------------------------------------------------------- spaces


@dataclass(frozen=True)
class ElasticModuli:
    """Isotropic elastic moduli; ``E`` may be an array (per quadrature point)."""

    E: object
    nu: float

    def __post_init__(self):
        if np.any(np.asarray(self.E) <= 0):
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio {self.nu} outside (-1, 0.5)")

    @property
    def lame(self):
        E, nu = np.asarray(self.E, dtype=float), self.nu
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        return lam, mu


@dataclass
class DofMap:
    cell_nodes: np.ndarray  # (M, k) node ids
    n_nodes: int
    block_size: int
    node_coords: np.ndarray

    @property
    def n(self):
        return self.n_nodes * self.block_size

    @property
    def cell_dofs(self):
        bs = self.block_size
        if bs == 1:
            return self.cell_nodes
        m, k = self.cell_nodes.shape
        return (bs * self.cell_nodes[:, :, None] + np.arange(bs)).reshape(m, k * bs)


class FunctionSpace:
    """Continuous Lagrange space of degree 1 or 2, scalar or 3-vector valued."""

    def __init__(self, mesh, degree=1, value_size=1):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        if value_size not in (1, 3):
            raise ValueError("value_size must be 1 or 3")
        self.mesh = mesh
        self.degree = degree
        self.value_size = value_size
        self.dofmap = build_dofmap(self)
        self._pattern = None

    @property
    def n(self):
        return self.dofmap.n

    @property
    def nodes_per_cell(self):
        return 4 if self.degree == 1 else 10

    def pattern(self):
        """CSR sparsity (indptr, indices) of the assembled operator, cached."""
        if self._pattern is None:
            dm = self.dofmap
            ip, ix = _kernels.build_pattern(dm.cell_nodes, dm.n_nodes)
            if dm.block_size > 1:
                S = sp.csr_matrix((np.ones(len(ix)), ix, ip),
                                  shape=(dm.n_nodes, dm.n_nodes))
                B = sp.kron(S, np.ones((3, 3)), format="csr")
                B.sort_indices()
                ip, ix = B.indptr.astype(np.int64), B.indices.astype(np.int32)
            self._pattern = (ip, ix)
        return self._pattern

    def __repr__(self):
        return f"FunctionSpace(P{self.degree}, value_size={self.value_size}, n={self.n})"


def build_dofmap(space):
    """Conforming numbering: vertex nodes first, then edge nodes; vector
    components interleaved per node."""
    mesh = space.mesh
    nv = mesh.n_vertices
    if space.degree == 1:
        nodes = mesh.cells
        coords = mesh.vertices
        n_nodes = nv
    else:
        edges, cell_edges = mesh.edges()
        nodes = np.concatenate([mesh.cells, cell_edges + nv], axis=1)
        coords = np.concatenate(
            [mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
        n_nodes = nv + len(edges)
    return DofMap(np.ascontiguousarray(nodes, dtype=np.int64), n_nodes,
                  space.value_size, coords)


def facet_dofs(space, facets):
    """Global dofs (K, kf * value_size) of boundary facets (sorted triples).

    Local facet order: the 3 vertices, then (P2) edges (0,1), (0,2), (1,2).
    """
    facets = np.asarray(facets, dtype=np.int64)
    nodes = facets
    if space.degree == 2:
        mesh = space.mesh
        edges, _ = mesh.edges()
        nv = mesh.n_vertices
        ekeys = edges[:, 0] * nv + edges[:, 1]
        cols = []
        for a, b in _TRI_EDGES:
            lo = np.minimum(facets[:, a], facets[:, b])
            hi = np.maximum(facets[:, a], facets[:, b])
            cols.append(np.searchsorted(ekeys, lo * nv + hi) + nv)
        nodes = np.concatenate([facets, np.column_stack(cols)], axis=1)
    bs = space.value_size
    if bs == 1:
        return nodes
    k = nodes.shape[1]
    return (bs * nodes[:, :, None] + np.arange(bs)).reshape(len(nodes), k * bs)


def facet_normals(mesh, facets):
    """Outward unit normals and areas of boundary facets."""
    facets = np.asarray(facets, dtype=np.int64)
    cells, local = mesh.facet_owners(facets)
    p = mesh.vertices[facets]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area = 0.5 * np.linalg.norm(n, axis=1)
    opp = mesh.vertices[mesh.cells[cells, local]]
    sign = np.sign(np.einsum("ij,ij->i", n, p[:, 0] - opp))
    return n * (sign / (2 * area))[:, None], area


# ---------------------------------------------------------------- batched kernels


def thermal_element_matrices(p, degree, kappa_q, rhoc_q, rule=None):
    """Diffusion stiffness and heat-capacity mass matrices for stacked cells.

    ``kappa_q`` and ``rhoc_q`` are (m, Q) samples at the quadrature points
    (or anything broadcastable to that shape).
    """
    rule = rule or quadrature(2 * degree)
    G, vol6 = _phys_gradients(p, degree, rule)
    vals, _ = tet_basis(degree, rule.points)
    w = rule.weights[None, :] * vol6[:, None]
    m, Q = p.shape[0], len(rule.weights)
    K = _gram(G, np.broadcast_to(kappa_q, (m, Q)) * w)
    rq = np.broadcast_to(rhoc_q, (m, Q)) * w
    M = np.matmul(rq[:, None, :] * vals.T[None], vals[None])
    return K, M


def robin_element_matrices(fp, degree, beta_q, tbc_q, rule=None):
    """Facet matrices ``int beta phi_a phi_b`` and vectors ``int beta T_bc phi_a``.

    ``fp`` holds stacked triangle corners (K, 3, 3).
    """
    rule = rule or facet_quadrature(2 * degree)
    vals = tri_basis(degree, rule.points)
    area2 = np.linalg.norm(np.cross(fp[:, 1] - fp[:, 0], fp[:, 2] - fp[:, 0]), axis=1)
    K = fp.shape[0]
    w = rule.weights[None, :] * area2[:, None]
    bq = np.broadcast_to(beta_q, (K, len(rule.weights))) * w
    tq = np.broadcast_to(tbc_q, (K, len(rule.weights)))
    Mf = np.einsum("kq,qa,qb->kab", bq, vals, vals)
    vf = np.einsum("kq,qa->ka", bq * tq, vals)
    return Mf, vf


def elastic_element_system(p, degree, lam_q, mu_q, eps_t_q, rule=None):
    """Isotropic elastic stiffness and thermal-stress load for stacked cells.

    Dofs are interleaved per node (``3 * a + i``). ``eps_t_q`` is the
    thermal strain tensor per quadrature point, (m, Q, 3, 3), or a scalar
    multiple of the identity, (m, Q).
    """
    rule = rule or quadrature(2 * degree)
    G, vol6 = _phys_gradients(p, degree, rule)
    m, Q = p.shape[0], len(rule.weights)
    w = rule.weights[None, :] * vol6[:, None]
    lam_q = np.broadcast_to(lam_q, (m, Q))
    mu_q = np.broadcast_to(mu_q, (m, Q))
    eps = np.asarray(eps_t_q, dtype=float)
    if eps.ndim <= 2:
        eps = np.broadcast_to(eps, (m, Q))[..., None, None] * np.eye(3)
    tr = np.trace(eps, axis1=2, axis2=3)
    sig = (lam_q * tr)[..., None, None] * np.eye(3) + 2.0 * mu_q[..., None, None] * eps
    lw, mw = lam_q * w, mu_q * w
    if G.ndim == 3:
        # constant gradients: fold the quadrature sums into the coefficients
        G = G[:, None]
        sig = np.einsum("mq,mqij->mij", w, sig)[:, None]
        lw, mw = lw.sum(axis=1, keepdims=True), mw.sum(axis=1, keepdims=True)
        wf = np.ones((m, 1))
    else:
        wf = w
    k = G.shape[2]
    Ke = (np.einsum("mq,mqai,mqbj->maibj", lw, G, G, optimize=True)
          + np.einsum("mq,mqaj,mqbi->maibj", mw, G, G, optimize=True))
    lap = _gram(G[:, 0], mw) if G.shape[1] == 1 else _gram(G, mw)
    for i in range(3):
        Ke[:, :, i, :, i] += lap
    fe = np.einsum("mq,mqij,mqaj->mai", wf, sig, G, optimize=True).reshape(m, 3 * k)
    return Ke.reshape(m, 3 * k, 3 * k), fe


def body_load_vectors(p, degree, f_q, rule=None):
    """Consistent loads ``int f . v`` (m, 3k) for body force samples f_q (m, Q, 3)."""
    rule = rule or quadrature(2 * degree)
    vals, _ = tet_basis(degree, rule.points)
    det, _ = cell_geometry(p)
    w = rule.weights[None, :] * np.abs(det)[:, None]
    m, Q = p.shape[0], len(rule.weights)
    f = np.broadcast_to(f_q, (m, Q, 3))
    return np.einsum("mq,qa,mqi->mai", w, vals, f).reshape(m, -1)


def pressure_load_vectors(fp, normals, degree, p_q, rule=None):
    """Loads ``int p n . v`` (K, 3kf) over boundary triangles."""
    rule = rule or facet_quadrature(2 * degree)
    vals = tri_basis(degree, rule.points)
    area2 = np.linalg.norm(np.cross(fp[:, 1] - fp[:, 0], fp[:, 2] - fp[:, 0]), axis=1)
    K, Q = fp.shape[0], len(rule.weights)
    w = rule.weights[None, :] * area2[:, None] * np.broadcast_to(p_q, (K, Q))
    return np.einsum("kq,qa,ki->kai", w, vals, normals).reshape(K, -1)


def scalar_load_vectors(p, degree, f_q, rule=None):
    """Loads ``int f s`` (m, k) for scalar source samples f_q (m, Q)."""
    rule = rule or quadrature(2 * degree)
    vals, _ = tet_basis(degree, rule.points)
    det, _ = cell_geometry(p)
    w = rule.weights[None, :] * np.abs(det)[:, None]
    return np.einsum("mq,qa->ma", w * f_q, vals)


def quadrature_points(p, rule):
    """Physical coordinates (m, Q, 3) of reference quadrature points."""
    lam = np.column_stack([1.0 - rule.points.sum(axis=1), rule.points])
    return np.einsum("qa,mad->mqd", lam, p)


def facet_quadrature_points(fp, rule):
    lam = np.column_stack([1.0 - rule.points.sum(axis=1), rule.points])
    return np.einsum("qa,kad->kqd", lam, fp)


# ---------------------------------------------------------------- single element


def element_thermal_matrices(points, kappa_q, rhoc_q, degree=1):
    """Diffusion stiffness and heat-capacity mass matrix of one cell."""
    K, M = thermal_element_matrices(np.asarray(points, float)[None], degree,
                                    np.atleast_1d(kappa_q)[None], np.atleast_1d(rhoc_q)[None])
    return K[0], M[0]


def element_robin_matrices(facet_points, beta_q, tbc_q, degree=1):
    Mf, vf = robin_element_matrices(np.asarray(facet_points, float)[None], degree,
                                    np.atleast_1d(beta_q)[None], np.atleast_1d(tbc_q)[None])
    return Mf[0], vf[0]


def element_elastic_system(points, moduli, eps_t_q, degree=1):
    """Stiffness and thermal-stress load of one cell for :class:`ElasticModuli`."""
    lam, mu = moduli.lame
    Ke, fe = elastic_element_system(np.asarray(points, float)[None], degree,
                                    np.atleast_1d(lam)[None], np.atleast_1d(mu)[None],
                                    np.asarray(eps_t_q, float)[None])
    return Ke[0], fe[0]


def element_body_and_pressure_loads(points, f_q=None, p_q=None, normal=None, degree=1):
    """Body-force load of a cell (4 corner points) or pressure load of a facet
    (3 corner points plus outward ``normal``)."""
    points = np.asarray(points, float)
    if points.shape == (4, 3):
        return body_load_vectors(points[None], degree, np.asarray(f_q, float)[None])[0]
    if points.shape == (3, 3):
        if normal is None:
            raise ValueError("pressure load needs the outward facet normal")
        return pressure_load_vectors(points[None], np.asarray(normal, float)[None],
                                     degree, np.atleast_1d(p_q)[None])[0]
    raise ValueError("expected 4 cell corners or 3 facet corners")


# ---------------------------------------------------------------- interpolation


def interpolate(space, func):
    """Nodal interpolant of ``func(x)`` with ``x`` of shape (N, 3)."""
    vals = np.asarray(func(space.dofmap.node_coords), dtype=float)
    n_nodes = space.dofmap.n_nodes
    if space.value_size == 1:
        return np.broadcast_to(vals, (n_nodes,)).copy()
    return np.broadcast_to(vals, (n_nodes, 3)).reshape(-1).copy()


def evaluate(space, coeffs, cell, local_point, tol=1e-12):
    """Value of a finite element function at reference coordinates in ``cell``."""
    x = np.asarray(local_point, float).reshape(1, 3)
    if np.any(x < -tol) or x.sum() > 1 + tol:
        raise ValueError(f"point {local_point} outside the reference cell")
    vals, _ = tet_basis(space.degree, x)
    nodes = space.dofmap.cell_nodes[cell]
    c = np.asarray(coeffs)
    if space.value_size == 1:
        return float(vals[0] @ c[nodes])
    return vals[0] @ c.reshape(-1, 3)[nodes]


# ---------------------------------------------------------------- global assembly


def assemble_matrix(space, element_fn, extra=()):
    """Assemble a global CSR matrix on ``space``'s sparsity pattern.

    ``element_fn(start, stop)`` returns element matrices for cells
    ``start:stop``; ``extra`` is an iterable of ``(dofs, matrices)`` pairs
    (e.g. facet terms) whose dofs lie within single cells.
    """
    ip, ix = space.pattern()
    data = np.zeros(len(ix))
    cd = space.dofmap.cell_dofs
    M = space.mesh.n_cells
    for s in range(0, M, CHUNK):
        e = min(s + CHUNK, M)
        ke = np.ascontiguousarray(element_fn(s, e))
        _kernels.scatter_matrix(ip, ix, data, np.ascontiguousarray(cd[s:e]), ke)
    for dofs, mats in extra:
        if len(dofs):
            _kernels.scatter_matrix(ip, ix, data, np.ascontiguousarray(dofs),
                                    np.ascontiguousarray(mats))
    return sp.csr_matrix((data, ix, ip), shape=(space.n, space.n))


def assemble_vector(n, dofs, vals):
    """Sum element vectors ``vals`` (m, k) into a length-``n`` vector."""
    return np.bincount(np.asarray(dofs).ravel(), weights=np.asarray(vals).ravel(),
                       minlength=n)
