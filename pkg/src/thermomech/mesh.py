"""Tetrahedral meshes: storage, box generation, uniform refinement, quality.

Cells are stored as an ``(M, 4)`` integer array with positive orientation,
facets are identified by their sorted vertex triple.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Mesh",
    "MeshError",
    "QualityReport",
    "LOCAL_EDGES",
    "LOCAL_FACES",
    "build_box_mesh",
    "uniform_refine",
    "unique_edges",
    "boundary_facets",
    "dihedral_angles",
    "tet_dihedral_angles",
    "all_dihedral_angles",
    "quality_report",
]

# local edge numbering, shared with the P2 dof layout in fem
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
# face i is opposite vertex i
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])
# for each local edge, the two vertices not on it
_OPPOSITE_EDGE_VERTS = np.array([(2, 3), (1, 3), (1, 2), (0, 3), (0, 2), (0, 1)])

DEGENERACY_TOL = 1e-14


class MeshError(ValueError):
    """Invalid mesh data."""


def _encode(sorted_idx, n):
    """Encode sorted index tuples (rows) into unique int64 keys."""
    sorted_idx = np.asarray(sorted_idx, dtype=np.int64)
    k = sorted_idx.shape[1]
    if float(n) ** k < 2.0**62:
        key = np.zeros(sorted_idx.shape[0], dtype=np.int64)
        for c in range(k):
            key = key * n + sorted_idx[:, c]
        return key
    # fall back to a void view for huge vertex counts
    a = np.ascontiguousarray(sorted_idx)
    return a.view(np.dtype((np.void, a.dtype.itemsize * k))).ravel()


def _signed_volumes(vertices, cells):
    p = vertices[cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    d3 = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", d1, np.cross(d2, d3)) / 6.0


def unique_edges(cells, n_vertices):
    """Unique edges of a tetrahedral cell array.

    Returns
    -------
    edges : (E, 2) int array
        Sorted vertex pairs, lexicographically ordered.
    cell_edges : (M, 6) int array
        Global edge id of each local edge (``LOCAL_EDGES`` order).
    """
    cells = np.asarray(cells)
    pairs = cells[:, LOCAL_EDGES].reshape(-1, 2)
    pairs = np.sort(pairs, axis=1)
    keys = pairs[:, 0].astype(np.int64) * n_vertices + pairs[:, 1]
    ukeys, inverse = np.unique(keys, return_inverse=True)
    edges = np.column_stack([ukeys // n_vertices, ukeys % n_vertices])
    return edges, inverse.reshape(-1, 6)


class Mesh:
    """Immutable tetrahedral mesh.

    Parameters
    ----------
    vertices : (N, 3) array_like
    cells : (M, 4) array_like of int
    cell_region : (M,) array_like of int, optional
        Material region id per cell, defaults to 0.
    facet_tags : dict, optional
        Maps a boundary facet (any vertex order) to an integer tag.
    validate : bool
        Check facet tags lie on the boundary. Index, distinctness,
        orientation and degeneracy checks always run.
    """

    def __init__(self, vertices, cells, cell_region=None, facet_tags=None,
                 validate=True):
        vertices = np.array(vertices, dtype=np.float64)
        cells = np.array(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (N, 3)")
        if cells.ndim != 2 or cells.shape[1] != 4:
            raise MeshError("cells must have shape (M, 4)")
        nv = vertices.shape[0]
        if cells.size and (cells.min() < 0 or cells.max() >= nv):
            raise MeshError("cell vertex index out of range")
        s = np.sort(cells, axis=1)
        if np.any(s[:, 1:] == s[:, :-1]):
            raise MeshError("cell with repeated vertex")

        vol = _signed_volumes(vertices, cells) if cells.size else np.zeros(0)
        if cells.size:
            diag = np.linalg.norm(vertices.max(axis=0) - vertices.min(axis=0))
            bad = np.abs(vol) < DEGENERACY_TOL * diag**3
            if np.any(bad):
                raise MeshError(
                    f"degenerate cell {int(np.flatnonzero(bad)[0])} "
                    f"(volume {vol[bad][0]:.3e})")
        flip = vol < 0
        if np.any(flip):
            cells[flip] = cells[flip][:, [0, 1, 3, 2]]
            vol = np.abs(vol)

        if cell_region is None:
            cell_region = np.zeros(cells.shape[0], dtype=np.int64)
        cell_region = np.array(cell_region, dtype=np.int64).reshape(-1)
        if cell_region.shape[0] != cells.shape[0]:
            raise MeshError("cell_region length does not match cells")

        tags = {}
        for facet, tag in (facet_tags or {}).items():
            key = tuple(sorted(int(v) for v in facet))
            if len(key) != 3 or len(set(key)) != 3:
                raise MeshError(f"invalid facet {facet!r}")
            tags[key] = int(tag)

        for a in (vertices, cells, cell_region, vol):
            a.setflags(write=False)
        self.vertices = vertices
        self.cells = cells
        self.cell_region = cell_region
        self.facet_tags = tags
        self._volumes = vol
        self._cache = {}

        if validate and tags:
            bf = _encode(boundary_facets(self), nv)
            tf, _ = self.tagged_facets()
            hit = np.isin(_encode(tf, nv), bf)
            if not np.all(hit):
                raise MeshError(
                    f"tagged facet {tuple(tf[~hit][0])} is not a boundary facet")

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def volumes(self):
        return self._volumes

    def edges(self):
        """``(edges, cell_edges)`` as returned by :func:`unique_edges`, cached."""
        if "edges" not in self._cache:
            self._cache["edges"] = unique_edges(self.cells, self.n_vertices)
        return self._cache["edges"]

    @property
    def n_edges(self):
        return self.edges()[0].shape[0]

    def tagged_facets(self):
        """Tagged facets as arrays ``(facets (K, 3), tags (K,))``, sorted by facet."""
        if "tagged" not in self._cache:
            if self.facet_tags:
                items = sorted(self.facet_tags.items())
                f = np.array([k for k, _ in items], dtype=np.int64)
                t = np.array([v for _, v in items], dtype=np.int64)
            else:
                f = np.zeros((0, 3), dtype=np.int64)
                t = np.zeros(0, dtype=np.int64)
            self._cache["tagged"] = (f, t)
        return self._cache["tagged"]

    def tags(self):
        return sorted(set(self.facet_tags.values()))

    def facet_owners(self, facets):
        """Owning cell and local face index of each boundary facet.

        Raises
        ------
        MeshError
            If a facet is not a boundary facet of the mesh.
        """
        if "faces" not in self._cache:
            faces = np.sort(self.cells[:, LOCAL_FACES].reshape(-1, 3), axis=1)
            keys = _encode(faces, self.n_vertices)
            order = np.argsort(keys, kind="stable")
            skeys = keys[order]
            counts = np.ones(len(skeys), dtype=bool)
            if len(skeys) > 1:
                dup = skeys[1:] == skeys[:-1]
                counts[1:] &= ~dup
                counts[:-1] &= ~dup
            self._cache["faces"] = (skeys[counts], order[counts])
        bkeys, bidx = self._cache["faces"]
        facets = np.sort(np.asarray(facets, dtype=np.int64).reshape(-1, 3), axis=1)
        q = _encode(facets, self.n_vertices)
        pos = np.searchsorted(bkeys, q)
        pos = np.minimum(pos, len(bkeys) - 1)
        ok = bkeys[pos] == q if len(bkeys) else np.zeros(len(q), bool)
        if not np.all(ok):
            raise MeshError(
                f"facet {tuple(facets[~ok][0])} is not on the boundary")
        flat = bidx[pos]
        return flat // 4, flat % 4

    def __repr__(self):
        return (f"Mesh(n_vertices={self.n_vertices}, n_cells={self.n_cells}, "
                f"n_tagged_facets={len(self.facet_tags)})")


def build_box_mesh(nx, ny, nz, extents=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))):
    """Structured box mesh, each hexahedron split into 6 Kuhn tetrahedra.

    The faces x=min, x=max, y=min, y=max, z=min, z=max carry tags 1..6.
    """
    for n in (nx, ny, nz):
        if int(n) != n or n < 1:
            raise MeshError(f"subdivision counts must be >= 1, got {(nx, ny, nz)}")
    nx, ny, nz = int(nx), int(ny), int(nz)
    lo = np.asarray(extents[0], dtype=float)
    hi = np.asarray(extents[1], dtype=float)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(hi - lo <= 0):
        raise MeshError("degenerate box extents")

    xs = [np.linspace(lo[d], hi[d], n + 1) for d, n in enumerate((nx, ny, nz))]
    X, Y, Z = np.meshgrid(*xs, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    corner = {}
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                corner[(a, b, c)] = vid(i + a, j + b, k + c)
    # Kuhn split along the main diagonal: one tet per axis permutation
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    cells = []
    for p in perms:
        path = [(0, 0, 0)]
        cur = [0, 0, 0]
        for axis in p:
            cur[axis] = 1
            path.append(tuple(cur))
        cells.append(np.column_stack([corner[c] for c in path]))
    cells = np.stack(cells, axis=1).reshape(-1, 4)

    facet_tags = {}
    quads = {
        1: [(0, b, c) for b in (0, 1) for c in (0, 1)],
        2: [(1, b, c) for b in (0, 1) for c in (0, 1)],
        3: [(a, 0, c) for a in (0, 1) for c in (0, 1)],
        4: [(a, 1, c) for a in (0, 1) for c in (0, 1)],
        5: [(a, b, 0) for a in (0, 1) for b in (0, 1)],
        6: [(a, b, 1) for a in (0, 1) for b in (0, 1)],
    }
    face_axis = {1: (0, 0), 2: (0, nx - 1), 3: (1, 0), 4: (1, ny - 1),
                 5: (2, 0), 6: (2, nz - 1)}
    idx = np.column_stack([i, j, k])
    for tag, q in quads.items():
        axis, val = face_axis[tag]
        sel = idx[:, axis] == val
        # each boundary quad is split along the diagonal through the
        # lowest and highest corners, matching the Kuhn cells
        c00, c01, c10, c11 = (corner[c][sel] for c in q)
        tris = np.concatenate([np.column_stack([c00, c01, c11]),
                               np.column_stack([c00, c10, c11])])
        for t in np.sort(tris, axis=1):
            facet_tags[tuple(int(v) for v in t)] = tag

    return Mesh(vertices, cells, None, facet_tags, validate=False)


def _refine_children(cells, cell_edges, vertices, n_old):
    """Eight children per cell, interior octahedron cut along its shortest diagonal."""
    v = [cells[:, a] for a in range(4)]
    m = {tuple(LOCAL_EDGES[e]): cell_edges[:, e] + n_old for e in range(6)}
    m01, m02, m03 = m[(0, 1)], m[(0, 2)], m[(0, 3)]
    m12, m13, m23 = m[(1, 2)], m[(1, 3)], m[(2, 3)]
    corners = [
        (v[0], m01, m02, m03),
        (m01, v[1], m12, m13),
        (m02, m12, v[2], m23),
        (m03, m13, m23, v[3]),
    ]
    # diagonal (a, b) with the equatorial cycle around it
    options = [
        (m01, m23, (m02, m03, m13, m12)),
        (m02, m13, (m01, m03, m23, m12)),
        (m03, m12, (m01, m02, m23, m13)),
    ]
    lengths = np.stack([
        np.linalg.norm(vertices[a] - vertices[b], axis=1) for a, b, _ in options
    ], axis=1)
    # near-ties (common on structured meshes) go to the split whose worst
    # dihedral angle is smallest
    tie = lengths <= lengths.min(axis=1, keepdims=True) * (1 + 1e-8)
    score = np.where(tie, 0.0, np.inf)
    rows = np.flatnonzero(tie.sum(axis=1) > 1)
    for c, (a, b, ring) in enumerate(options):
        sel = rows[tie[rows, c]]
        if len(sel) == 0:
            continue
        worst = np.zeros(len(sel))
        for t in range(4):
            quad = np.column_stack([a[sel], b[sel], ring[t][sel], ring[(t + 1) % 4][sel]])
            worst = np.maximum(worst, _angles_from_points(vertices[quad]).max(axis=1))
        score[sel, c] = worst
    choice = np.argmin(score, axis=1)
    inner = []
    for t in range(4):
        cols = []
        for slot in range(4):
            val = np.empty(len(cells), dtype=np.int64)
            for c, (a, b, ring) in enumerate(options):
                sel = choice == c
                quad = (a, b, ring[t], ring[(t + 1) % 4])
                val[sel] = quad[slot][sel]
            cols.append(val)
        inner.append(tuple(cols))
    children = np.stack([np.column_stack(c) for c in corners + inner], axis=1)
    return children.reshape(-1, 4)


def uniform_refine(mesh):
    """Split every cell into 8 through its edge midpoints.

    Children inherit the parent's region; each tagged boundary triangle is
    split into 4 triangles carrying the parent's tag. New vertices are
    numbered after the old ones in global edge order.
    """
    edges, cell_edges = mesh.edges()
    n_old = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.concatenate([mesh.vertices, mids])
    cells = _refine_children(mesh.cells, cell_edges, vertices, n_old)
    region = np.repeat(mesh.cell_region, 8)

    facet_tags = {}
    tf, tt = mesh.tagged_facets()
    if len(tf):
        ekeys = edges[:, 0] * n_old + edges[:, 1]

        def mid(a, b):
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            pos = np.searchsorted(ekeys, lo * n_old + hi)
            return pos + n_old

        a, b, c = tf[:, 0], tf[:, 1], tf[:, 2]
        mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
        kids = np.stack([
            np.column_stack([a, mab, mca]),
            np.column_stack([mab, b, mbc]),
            np.column_stack([mca, mbc, c]),
            np.column_stack([mab, mbc, mca]),
        ], axis=1).reshape(-1, 3)
        kids = np.sort(kids, axis=1)
        ktags = np.repeat(tt, 4)
        facet_tags = dict(zip(map(tuple, kids.tolist()), ktags.tolist()))

    return Mesh(vertices, cells, region, facet_tags, validate=False)


def boundary_facets(mesh):
    """Facets belonging to exactly one cell, as sorted rows of a (K, 3) array."""
    faces = np.sort(mesh.cells[:, LOCAL_FACES].reshape(-1, 3), axis=1)
    keys = _encode(faces, mesh.n_vertices)
    _, first, counts = np.unique(keys, return_index=True, return_counts=True)
    out = faces[first[counts == 1]]
    order = np.lexsort(out.T[::-1])
    return out[order]


def inverse_jacobian(p):
    """Determinants and inverses of the edge Jacobians of stacked tets (m, 4, 3).

    Rows of the inverse are the gradients of barycentric coordinates 1..3.
    """
    c1 = p[:, 1] - p[:, 0]
    c2 = p[:, 2] - p[:, 0]
    c3 = p[:, 3] - p[:, 0]
    r1 = np.cross(c2, c3)
    det = np.einsum("ij,ij->i", c1, r1)
    inv = np.stack([r1, np.cross(c3, c1), np.cross(c1, c2)], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv /= det[:, None, None]
    return det, inv


def _barycentric_gradients(p):
    """Gradients of the 4 barycentric coordinates for stacked tets ``p`` (M, 4, 3)."""
    _, Jinv = inverse_jacobian(p)
    g = np.empty((p.shape[0], 4, 3))
    g[:, 1:] = Jinv
    g[:, 0] = -Jinv.sum(axis=1)
    return g


def all_dihedral_angles(mesh):
    """(M, 6) interior dihedral angles in degrees, one per local edge."""
    out = np.empty((mesh.n_cells, 6))
    chunk = 1 << 18
    for s in range(0, mesh.n_cells, chunk):
        p = mesh.vertices[mesh.cells[s:s + chunk]]
        out[s:s + chunk] = _angles_from_points(p)
    return out


def _angles_from_points(p):
    g = _barycentric_gradients(p)
    gk = g[:, _OPPOSITE_EDGE_VERTS[:, 0]]
    gl = g[:, _OPPOSITE_EDGE_VERTS[:, 1]]
    cos = -np.einsum("mei,mei->me", gk, gl) / (
        np.linalg.norm(gk, axis=2) * np.linalg.norm(gl, axis=2))
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def tet_dihedral_angles(points):
    """Six dihedral angles (degrees) of the tetrahedron with corner ``points``."""
    p = np.asarray(points, dtype=float).reshape(1, 4, 3)
    vol = abs(_signed_volumes(p[0], np.arange(4)[None])[0])
    scale = np.linalg.norm(p[0].max(axis=0) - p[0].min(axis=0))
    if vol < DEGENERACY_TOL * scale**3 or scale == 0:
        raise MeshError("degenerate tetrahedron")
    return _angles_from_points(p)[0]


def dihedral_angles(mesh, cell):
    if not 0 <= cell < mesh.n_cells:
        raise IndexError(f"cell index {cell} out of range")
    return tet_dihedral_angles(mesh.vertices[mesh.cells[cell]])


@dataclass(frozen=True)
class QualityReport:
    bin_edges: np.ndarray
    counts: np.ndarray
    min_angle: float
    max_angle: float
    cell_count: int
    vertex_count: int

    def to_text(self):
        lines = [f"cells {self.cell_count}", f"vertices {self.vertex_count}",
                 f"min_angle {self.min_angle:.6f}",
                 f"max_angle {self.max_angle:.6f}",
                 "bin_lo\tbin_hi\tcount"]
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            lines.append(f"{lo:.4f}\t{hi:.4f}\t{int(c)}")
        return "\n".join(lines) + "\n"


def quality_report(mesh, n_bins=18):
    """Histogram of all dihedral angles over [0, 180] degrees."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if mesh.n_cells == 0:
        raise MeshError("empty mesh")
    angles = all_dihedral_angles(mesh)
    counts, edges = np.histogram(angles, bins=n_bins, range=(0.0, 180.0))
    return QualityReport(edges, counts, float(angles.min()), float(angles.max()),
                         mesh.n_cells, mesh.n_vertices)
