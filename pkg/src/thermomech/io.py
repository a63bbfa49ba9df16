"""Text file formats: the ``tfmesh`` mesh format and legacy VTK output.

tfmesh layout (whitespace separated, one record per line)::

    tfmesh 1
    vertices N
    x y z                 (N lines)
    cells M
    v0 v1 v2 v3 region    (M lines)
    facets K
    v0 v1 v2 tag          (K lines)

Floats are written with ``repr`` so that reading back reproduces every
coordinate bit for bit. Blank lines and lines starting with ``#`` are
ignored by the reader.
"""

import numpy as np

from .mesh import Mesh, MeshError

__all__ = [
    "MeshFormatError", "MeshHeaderError", "MeshVersionError", "MeshIndexError",
    "MeshTruncatedError", "FieldSizeError", "TFMESH_VERSION",
    "read_mesh", "write_mesh", "write_fields", "read_vtk", "VtkData",
]

TFMESH_VERSION = 1


class MeshFormatError(ValueError):
    """Base class of tfmesh parse errors; ``line`` is 1-based or None."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MeshHeaderError(MeshFormatError):
    """Missing or malformed ``tfmesh`` header or section header."""


class MeshVersionError(MeshFormatError):
    """Header names a format version this reader does not support."""


class MeshIndexError(MeshFormatError):
    """A cell or facet references a vertex that does not exist."""


class MeshTruncatedError(MeshFormatError):
    """The file ends before all announced records were read."""


class FieldSizeError(ValueError):
    """Field length does not match the mesh or function space."""


def write_mesh(mesh, path):
    """Write ``mesh`` in tfmesh format."""
    lines = [f"tfmesh {TFMESH_VERSION}", f"vertices {mesh.n_vertices}"]
    lines.extend(f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
    lines.append(f"cells {mesh.n_cells}")
    lines.extend(f"{a} {b} {c} {d} {r}" for (a, b, c, d), r in
                 zip(mesh.cells.tolist(), mesh.cell_region.tolist()))
    tf, tt = mesh.tagged_facets()
    lines.append(f"facets {len(tt)}")
    lines.extend(f"{a} {b} {c} {t}" for (a, b, c), t in zip(tf.tolist(), tt.tolist()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _records(path):
    with open(path) as fh:
        for no, raw in enumerate(fh, start=1):
            s = raw.strip()
            if s and not s.startswith("#"):
                yield no, s.split()


def read_mesh(path):
    """Read a tfmesh file.

    Raises
    ------
    MeshHeaderError, MeshVersionError, MeshIndexError, MeshTruncatedError
        For the corresponding format violations; all carry the line number.
    MeshError
        If the data parses but does not form a valid mesh.
    """
    recs = _records(path)
    last = [0]

    def take(what):
        try:
            no, tok = next(recs)
        except StopIteration:
            raise MeshTruncatedError(f"file ends while expecting {what}", last[0] + 1) from None
        last[0] = no
        return no, tok

    no, tok = take("the tfmesh header")
    if len(tok) != 2 or tok[0] != "tfmesh":
        raise MeshHeaderError("expected header 'tfmesh <version>'", no)
    try:
        version = int(tok[1])
    except ValueError:
        raise MeshHeaderError(f"malformed version {tok[1]!r}", no) from None
    if version != TFMESH_VERSION:
        raise MeshVersionError(f"unsupported tfmesh version {version}", no)

    def section(name, width, kind):
        no, tok = take(f"section '{name}'")
        if len(tok) != 2 or tok[0] != name:
            raise MeshHeaderError(f"expected '{name} <count>'", no)
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshHeaderError(f"malformed count {tok[1]!r}", no) from None
        if count < 0:
            raise MeshHeaderError(f"negative count {count}", no)
        rows, lines = [], []
        for i in range(count):
            no, tok = take(f"{name} record {i + 1} of {count}")
            if len(tok) != width:
                raise MeshFormatError(f"expected {width} fields, got {len(tok)}", no)
            try:
                rows.append([kind(t) for t in tok])
            except ValueError:
                raise MeshFormatError(f"malformed {name} record", no) from None
            lines.append(no)
        return rows, lines

    verts, _ = section("vertices", 3, float)
    cells, cell_lines = section("cells", 5, int)
    facets, facet_lines = section("facets", 4, int)
    extra = next(recs, None)
    if extra is not None:
        raise MeshFormatError("unexpected content after the facets section", extra[0])

    nv = len(verts)
    for rows, lines, k, what in ((cells, cell_lines, 4, "cell"), (facets, facet_lines, 3, "facet")):
        for row, no in zip(rows, lines):
            for v in row[:k]:
                if not 0 <= v < nv:
                    raise MeshIndexError(
                        f"{what} references vertex {v}, mesh has {nv} vertices", no)

    V = np.array(verts, dtype=np.float64).reshape(-1, 3)
    C = np.array(cells, dtype=np.int64).reshape(-1, 5)
    F = np.array(facets, dtype=np.int64).reshape(-1, 4)
    tags = {tuple(f[:3]): int(f[3]) for f in F.tolist()}
    if len(tags) != len(F):
        raise MeshError("duplicate facet in facets section")
    return Mesh(V, C[:, :4], C[:, 4], tags)


def _vertex_values(field, mesh, components, name):
    """Vertex part of a nodal field (P1 or P2), shape (nv,) or (nv, 3)."""
    a = np.asarray(field, dtype=np.float64).reshape(-1)
    nv = mesh.n_vertices
    n_p2 = nv + mesh.n_edges
    if a.size not in (components * nv, components * n_p2):
        raise FieldSizeError(
            f"{name} has {a.size} values; expected {components * nv} (P1) "
            f"or {components * n_p2} (P2)")
    # P2 numbers vertices first, so the vertex values are a prefix
    a = a[:components * nv]
    return a if components == 1 else a.reshape(nv, 3)


def write_fields(path, mesh, T=None, u=None, cell_region=None, title="thermomech fields"):
    """Write a legacy ASCII VTK unstructured grid.

    Temperature is written as ``SCALARS temperature`` and displacement as
    ``VECTORS displacement`` in the POINT_DATA block, cell regions as
    ``SCALARS region int`` in CELL_DATA. P2 fields are exported on the
    vertex subset only; edge midpoint values are dropped.

    Parameters
    ----------
    T : (n,) array, optional
        P1 or P2 temperature.
    u : (3 n,) array, optional
        Interleaved displacement.
    cell_region : (M,) array, optional
        Defaults to ``mesh.cell_region``.

    Raises
    ------
    FieldSizeError
    """
    region = mesh.cell_region if cell_region is None else np.asarray(cell_region)
    if region.shape != (mesh.n_cells,):
        raise FieldSizeError(f"cell_region has {region.size} values, mesh has {mesh.n_cells} cells")
    Tv = None if T is None else _vertex_values(T, mesh, 1, "T")
    uv = None if u is None else _vertex_values(u, mesh, 3, "u")

    nv, nc = mesh.n_vertices, mesh.n_cells
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    out.extend(f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
    out.append(f"CELLS {nc} {5 * nc}")
    out.extend(f"4 {a} {b} {c} {d}" for a, b, c, d in mesh.cells.tolist())
    out.append(f"CELL_TYPES {nc}")
    out.extend(["10"] * nc)
    out.append(f"CELL_DATA {nc}")
    out.extend(["SCALARS region int 1", "LOOKUP_TABLE default"])
    out.extend(str(r) for r in region.tolist())
    if Tv is not None or uv is not None:
        out.append(f"POINT_DATA {nv}")
    if Tv is not None:
        out.extend(["SCALARS temperature double 1", "LOOKUP_TABLE default"])
        out.extend(repr(t) for t in Tv.tolist())
    if uv is not None:
        out.append("VECTORS displacement double")
        out.extend(f"{a!r} {b!r} {c!r}" for a, b, c in uv.tolist())
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


class VtkData:
    """Contents of a legacy VTK unstructured grid file."""

    def __init__(self, points, cells, cell_types, point_data, cell_data):
        self.points = points
        self.cells = cells
        self.cell_types = cell_types
        self.point_data = point_data
        self.cell_data = cell_data


def read_vtk(path):
    """Minimal reader for the legacy ASCII files written by :func:`write_fields`.

    Understands POINTS, CELLS, CELL_TYPES and SCALARS / VECTORS blocks under
    POINT_DATA and CELL_DATA.

    Returns
    -------
    VtkData
    """
    with open(path) as fh:
        lines = fh.read().split("\n")
    if not lines[0].startswith("# vtk DataFile Version"):
        raise ValueError("not a legacy VTK file")
    if lines[2].strip() != "ASCII":
        raise ValueError("only ASCII VTK files are supported")
    if lines[3].split() != ["DATASET", "UNSTRUCTURED_GRID"]:
        raise ValueError("only UNSTRUCTURED_GRID datasets are supported")
    tokens = " ".join(lines[4:]).split()
    pos = 0

    def nxt(k=1):
        nonlocal pos
        if pos + k > len(tokens):
            raise ValueError("truncated VTK file")
        out = tokens[pos:pos + k]
        pos += k
        return out

    points = cells = types = None
    data = {"POINT_DATA": {}, "CELL_DATA": {}}
    target = None
    count = 0
    while pos < len(tokens):
        key = nxt()[0]
        if key == "POINTS":
            n, _ = nxt(2)
            points = np.array(nxt(3 * int(n)), dtype=float).reshape(-1, 3)
        elif key == "CELLS":
            n, size = (int(t) for t in nxt(2))
            flat = np.array(nxt(size), dtype=np.int64)
            if np.any(flat.reshape(n, -1)[:, 0] != 4):
                raise ValueError("only tetrahedral cells are supported")
            cells = flat.reshape(n, 5)[:, 1:]
        elif key == "CELL_TYPES":
            n = int(nxt()[0])
            types = np.array(nxt(n), dtype=np.int64)
        elif key in data:
            target = key
            count = int(nxt()[0])
        elif key == "SCALARS":
            name, dtype, ncomp = nxt(3)
            if nxt()[0] != "LOOKUP_TABLE":
                raise ValueError("SCALARS block without LOOKUP_TABLE")
            nxt()
            vals = np.array(nxt(count * int(ncomp)), dtype=int if dtype == "int" else float)
            data[target][name] = vals if int(ncomp) == 1 else vals.reshape(count, -1)
        elif key == "VECTORS":
            name, _ = nxt(2)
            data[target][name] = np.array(nxt(3 * count), dtype=float).reshape(count, 3)
        else:
            raise ValueError(f"unsupported VTK keyword {key!r}")
    return VtkData(points, cells, types, data["POINT_DATA"], data["CELL_DATA"])
