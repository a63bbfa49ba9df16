"""YAML run configuration: parsing, validation, defaults and problem setup.

The schema is documented in ``docs/config.md``. Every key is checked; an
unknown key, a value of the wrong type or out of range, a missing mesh or a
boundary tag absent from the mesh raises :class:`ConfigError` naming the
offending key path.
"""

from dataclasses import dataclass, field, fields, asdict
import math
import os

import numpy as np
import yaml

from .mesh import build_box_mesh, uniform_refine, MeshError
from .sim import (BoundaryCondition, BoundarySchedule, MaterialRegion, MaterialTable,
                  SolverSettings, ThermoelasticProblem, TimeController, TimeFunction,
                  MaterialError)

__all__ = ["ConfigError", "SimulationConfig", "read_config", "parse_config",
           "load_mesh", "build_problem", "build_controller"]


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the key path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


DEFAULT_TIME = {"theta": 1.0, "dt": 1.0, "dT_max": 10.0, "eps": 0.8, "t_end": math.inf,
                "dt_max": math.inf, "max_halvings": 20, "max_steps": None}
DEFAULT_STEADY = {"initial_guess": 400.0, "time": 0.0}
DEFAULT_OUTPUT = {"directory": "out", "every": 1}
SOLVER_KEYS = {f.name: f.default for f in fields(SolverSettings)}
REGION_KEYS = ("temperatures", "alpha", "E", "kappa", "cv", "rho", "nu", "T_ref")
BC_KEYS = {"robin": ("beta", "T_bc"), "pressure": ("p",), "displacement": ("u",)}


@dataclass
class SimulationConfig:
    """Validated run configuration with defaults applied.

    ``mesh`` is either an absolute path to a tfmesh file or a dict
    ``{"box": {...}}`` describing a generated box mesh; ``refine`` uniform
    refinements are applied after loading.
    """

    mesh: object
    refine: int = 0
    degree: int = 1
    materials: dict = field(default_factory=dict)
    extrapolation: str = "clamp"
    boundary: list = field(default_factory=list)
    body_force: list = None
    source: object = None
    robin_convention: str = "loss"
    initial_temperature: float = 293.0
    steady: dict = field(default_factory=lambda: dict(DEFAULT_STEADY))
    time: dict = field(default_factory=lambda: dict(DEFAULT_TIME))
    solver: dict = field(default_factory=dict)
    output: dict = field(default_factory=lambda: dict(DEFAULT_OUTPUT))

    def to_dict(self):
        """Plain nested dict in the schema's layout, all defaults filled in."""
        d = asdict(self)
        mesh = {"refine": d.pop("refine")}
        if isinstance(self.mesh, dict):
            mesh["box"] = self.mesh["box"]
        else:
            mesh["path"] = self.mesh
        d["mesh"] = mesh
        d["materials"] = {"extrapolation": d.pop("extrapolation"),
                          "regions": {int(k): v for k, v in self.materials.items()}}
        d["solver"] = {**SOLVER_KEYS, **self.solver}
        return d

    def echo(self):
        """YAML text of the resolved configuration (fixed key order)."""
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------- validation helpers


def _check_keys(d, allowed, path):
    if not isinstance(d, dict):
        raise ConfigError(path, f"expected a mapping, got {type(d).__name__}")
    unknown = [k for k in d if k not in allowed]
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else str(unknown[0]),
                          f"unknown key (allowed: {', '.join(map(str, allowed))})")


def _number(v, path, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False, integer=False):
    if isinstance(v, str):
        # YAML 1.1 reads exponents without a sign ("2e11") as strings
        try:
            v = math.inf if v.strip().lower() == ".inf" else float(v)
        except ValueError:
            raise ConfigError(path, f"expected a number, got {v!r}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and (not float(v).is_integer() or math.isinf(v)):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    bad = (v < lo or v > hi or (lo_open and v == lo) or (hi_open and v == hi)
           or (isinstance(v, float) and math.isnan(v)))
    if bad:
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigError(path, f"value {v!r} out of range {lb}{lo:g}, {hi:g}{rb}")
    return int(v) if integer else float(v)


def _choice(v, path, options):
    if v not in options:
        raise ConfigError(path, f"expected one of {', '.join(map(str, options))}, got {v!r}")
    return v


def _time_table(v, path):
    """A number or ``[[t, value], ...]``, returned with floats throughout."""
    try:
        TimeFunction.parse(v)
        a = np.asarray(v, dtype=float)
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None
    return float(a) if a.ndim == 0 else a.tolist()


def _table(v, path, positive=False):
    arr = np.atleast_1d(np.asarray(v, dtype=object))
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError(path, "expected a number or a list of numbers")
    out = [_number(x, f"{path}[{i}]", lo=0.0, lo_open=True) if positive
           else _number(x, f"{path}[{i}]") for i, x in enumerate(arr.tolist())]
    return out[0] if np.ndim(v) == 0 else out


# ---------------------------------------------------------------- sections


def _parse_mesh(raw, base_dir):
    if raw is None:
        raise ConfigError("mesh", "missing mesh (a tfmesh path or a box description)")
    if isinstance(raw, str):
        raw = {"path": raw}
    _check_keys(raw, ("path", "box", "refine"), "mesh")
    refine = _number(raw.get("refine", 0), "mesh.refine", lo=0, integer=True)
    if ("path" in raw) == ("box" in raw):
        raise ConfigError("mesh", "give exactly one of 'path' and 'box'")
    if "path" in raw:
        p = raw["path"]
        if not isinstance(p, str):
            raise ConfigError("mesh.path", "expected a file path")
        p = p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))
        if not os.path.isfile(p):
            raise ConfigError("mesh.path", f"mesh file {p!r} does not exist")
        return p, refine
    box = raw["box"]
    _check_keys(box, ("cells", "extents"), "mesh.box")
    cells = box.get("cells", [4, 4, 4])
    if not isinstance(cells, list) or len(cells) != 3:
        raise ConfigError("mesh.box.cells", "expected three cell counts")
    cells = [_number(c, f"mesh.box.cells[{i}]", lo=1, integer=True) for i, c in enumerate(cells)]
    ext = box.get("extents", [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    if not (isinstance(ext, list) and len(ext) == 2 and all(
            isinstance(e, list) and len(e) == 3 for e in ext)):
        raise ConfigError("mesh.box.extents", "expected [[x0, y0, z0], [x1, y1, z1]]")
    ext = [[_number(c, f"mesh.box.extents[{i}][{j}]") for j, c in enumerate(e)]
           for i, e in enumerate(ext)]
    if any(b <= a for a, b in zip(*ext)):
        raise ConfigError("mesh.box.extents", "upper corner must exceed lower corner")
    return {"box": {"cells": cells, "extents": ext}}, refine


def _parse_materials(raw):
    if raw is None:
        raise ConfigError("materials", "missing materials section")
    _check_keys(raw, ("extrapolation", "regions"), "materials")
    extrap = _choice(raw.get("extrapolation", "clamp"), "materials.extrapolation",
                     ("clamp", "linear"))
    regions = raw.get("regions")
    if not isinstance(regions, dict) or not regions:
        raise ConfigError("materials.regions", "expected a non-empty mapping of region id to material")
    out = {}
    for rid, mat in regions.items():
        path = f"materials.regions.{rid}"
        try:
            rid = int(rid)
        except (TypeError, ValueError):
            raise ConfigError(path, "region ids must be integers") from None
        _check_keys(mat, REGION_KEYS, path)
        for k in REGION_KEYS:
            if k not in mat and k not in ("temperatures", "T_ref"):
                raise ConfigError(f"{path}.{k}", "missing material property")
        m = {"T_ref": _number(mat.get("T_ref", 293.0), f"{path}.T_ref", lo=0.0, lo_open=True)}
        m["temperatures"] = _table(mat.get("temperatures", [m["T_ref"]]), f"{path}.temperatures",
                                   positive=True)
        m["alpha"] = _table(mat["alpha"], f"{path}.alpha")
        for k in ("E", "kappa", "cv"):
            m[k] = _table(mat[k], f"{path}.{k}", positive=True)
        m["rho"] = _number(mat["rho"], f"{path}.rho", lo=0.0, lo_open=True)
        m["nu"] = _number(mat["nu"], f"{path}.nu", lo=-1.0, hi=0.5, lo_open=True, hi_open=True)
        try:
            _region(m)
        except MaterialError as exc:
            raise ConfigError(path, str(exc)) from None
        out[rid] = {k: m[k] for k in REGION_KEYS}
    return extrap, out


def _region(m):
    return MaterialRegion(np.atleast_1d(m["temperatures"]), m["alpha"], m["E"], m["kappa"],
                          m["cv"], m["rho"], m["nu"], m["T_ref"])


def _parse_boundary(raw):
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ConfigError("boundary", "expected a list of conditions")
    out = []
    for i, bc in enumerate(raw):
        path = f"boundary[{i}]"
        if not isinstance(bc, dict):
            raise ConfigError(path, "expected a mapping")
        kind = _choice(bc.get("kind"), f"{path}.kind", tuple(BC_KEYS))
        _check_keys(bc, ("tag", "kind") + BC_KEYS[kind], path)
        if "tag" not in bc:
            raise ConfigError(f"{path}.tag", "missing facet tag")
        item = {"tag": _number(bc["tag"], f"{path}.tag", integer=True), "kind": kind}
        for k in BC_KEYS[kind]:
            if k not in bc:
                raise ConfigError(f"{path}.{k}", f"missing for a {kind} condition")
            if k == "u":
                u = bc["u"]
                if not isinstance(u, list) or len(u) != 3:
                    raise ConfigError(f"{path}.u", "expected three components (null = free)")
                if all(c is None for c in u):
                    raise ConfigError(f"{path}.u", "at least one component must be fixed")
                item["u"] = [None if c is None else _time_table(c, f"{path}.u[{j}]")
                             for j, c in enumerate(u)]
            else:
                item[k] = _time_table(bc[k], f"{path}.{k}")
        out.append(item)
    try:
        _schedule(out)
    except ValueError as exc:
        raise ConfigError("boundary", str(exc)) from None
    return out


def _schedule(items):
    conds = []
    for b in items:
        kw = {k: TimeFunction.parse(v) for k, v in b.items() if k in ("beta", "T_bc", "p")}
        if "u" in b:
            kw["u"] = tuple(None if c is None else TimeFunction.parse(c) for c in b["u"])
        conds.append(BoundaryCondition(b["tag"], b["kind"], **kw))
    return BoundarySchedule(conds)


def _parse_section(raw, defaults, path, checks):
    raw = {} if raw is None else raw
    _check_keys(raw, tuple(defaults), path)
    out = dict(defaults)
    for k, v in raw.items():
        out[k] = checks[k](v, f"{path}.{k}") if k in checks else v
    return out


def _parse_solver(raw):
    raw = {} if raw is None else raw
    _check_keys(raw, tuple(SOLVER_KEYS), "solver")
    out = {}
    for k, v in raw.items():
        p = f"solver.{k}"
        if k in ("newton_rtol", "linear_rtol", "elastic_rtol"):
            out[k] = _number(v, p, 0.0, 1.0, lo_open=True, hi_open=True)
        elif k in ("max_newton", "maxit", "coarse_size", "spike_window"):
            out[k] = _number(v, p, lo=1, integer=True)
        elif k == "chebyshev_degree":
            out[k] = _number(v, p, lo=0, integer=True)
        elif k in ("classical_threshold",):
            out[k] = _number(v, p, 0.0, 1.0, hi_open=True)
        elif k == "sa_threshold":
            out[k] = None if v is None else _number(v, p, 0.0, 1.0, hi_open=True)
        elif k == "spike_factor":
            out[k] = _number(v, p, lo=1.0)
        elif k == "thermal_krylov":
            out[k] = _choice(v, p, ("cg", "bicgstab"))
        elif k in ("thermal_amg", "elastic_amg"):
            out[k] = _choice(v, p, ("classical", "sa", "none"))
        elif k in ("rotations", "newton_backtracking"):
            if not isinstance(v, bool):
                raise ConfigError(p, f"expected true or false, got {v!r}")
            out[k] = v
    return out


def parse_config(data, base_dir="."):
    """Validate a config mapping (as loaded from YAML).

    Relative mesh paths are resolved against ``base_dir``.

    Returns
    -------
    SimulationConfig

    Raises
    ------
    ConfigError
    """
    if data is None:
        data = {}
    top = ("mesh", "degree", "materials", "boundary", "body_force", "source",
           "robin_convention", "initial_temperature", "steady", "time", "solver", "output")
    _check_keys(data, top, "")
    mesh, refine = _parse_mesh(data.get("mesh"), base_dir)
    extrap, regions = _parse_materials(data.get("materials"))
    cfg = SimulationConfig(mesh=mesh, refine=refine, materials=regions, extrapolation=extrap)
    cfg.degree = int(_choice(data.get("degree", 1), "degree", (1, 2)))
    cfg.boundary = _parse_boundary(data.get("boundary"))
    bf = data.get("body_force")
    if bf is not None:
        if not isinstance(bf, list) or len(bf) != 3:
            raise ConfigError("body_force", "expected three components")
        cfg.body_force = [_time_table(c, f"body_force[{i}]") for i, c in enumerate(bf)]
    if data.get("source") is not None:
        cfg.source = _time_table(data["source"], "source")
    cfg.robin_convention = _choice(data.get("robin_convention", "loss"), "robin_convention",
                                   ("loss", "gain"))
    cfg.initial_temperature = _number(data.get("initial_temperature", 293.0),
                                      "initial_temperature", lo=0.0, lo_open=True)
    cfg.steady = _parse_section(data.get("steady"), DEFAULT_STEADY, "steady", {
        "initial_guess": lambda v, p: _number(v, p, lo=0.0, lo_open=True),
        "time": lambda v, p: _number(v, p)})
    cfg.time = _parse_section(data.get("time"), DEFAULT_TIME, "time", {
        "theta": lambda v, p: _number(v, p, 0.0, 1.0),
        "dt": lambda v, p: _number(v, p, lo=0.0, lo_open=True),
        "dT_max": lambda v, p: _number(v, p, lo=0.0, lo_open=True),
        "eps": lambda v, p: _number(v, p, 0.0, 1.0, lo_open=True),
        "t_end": lambda v, p: _number(v, p, lo=0.0, lo_open=True),
        "dt_max": lambda v, p: _number(v, p, lo=0.0, lo_open=True),
        "max_halvings": lambda v, p: _number(v, p, lo=0, integer=True),
        "max_steps": lambda v, p: None if v is None else _number(v, p, lo=1, integer=True)})
    cfg.solver = _parse_solver(data.get("solver"))
    cfg.output = _parse_section(data.get("output"), DEFAULT_OUTPUT, "output", {
        "directory": lambda v, p: v if isinstance(v, str) else _bad(p, "expected a path"),
        "every": lambda v, p: _number(v, p, lo=1, integer=True)})
    return cfg


def _bad(path, msg):
    raise ConfigError(path, msg)


def read_config(path, check_mesh=True):
    """Read and validate a YAML config file.

    With ``check_mesh`` the config is checked against its mesh too, so
    boundary tags missing from the mesh and region ids without a material
    are reported here rather than by :func:`build_problem`.

    Returns
    -------
    SimulationConfig
    """
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError("", f"config file {path!r} does not exist") from None
    except yaml.YAMLError as exc:
        raise ConfigError("", f"malformed YAML in {path!r}: {exc}") from None
    cfg = parse_config(data, os.path.dirname(os.path.abspath(path)))
    if check_mesh:
        check_against_mesh(cfg, load_mesh(cfg))
    return cfg


def load_mesh(cfg):
    """Mesh named by ``cfg`` with its refinements applied."""
    from .io import read_mesh, MeshFormatError
    if isinstance(cfg.mesh, dict):
        box = cfg.mesh["box"]
        mesh = build_box_mesh(*box["cells"], extents=box["extents"])
    else:
        try:
            mesh = read_mesh(cfg.mesh)
        except (MeshFormatError, MeshError) as exc:
            raise ConfigError("mesh.path", str(exc)) from None
    for _ in range(cfg.refine):
        mesh = uniform_refine(mesh)
    return mesh


def check_against_mesh(cfg, mesh):
    known = set(mesh.tags())
    for i, bc in enumerate(cfg.boundary):
        if bc["tag"] not in known:
            raise ConfigError(f"boundary[{i}].tag",
                              f"tag {bc['tag']} does not exist in the mesh (tags: {sorted(known)})")
    missing = sorted(set(np.unique(mesh.cell_region).tolist()) - set(cfg.materials))
    if missing:
        raise ConfigError("materials.regions", f"no material for mesh region(s) {missing}")


def build_controller(cfg):
    t = cfg.time
    return TimeController(t["theta"], t["dt"], t["dT_max"], t["eps"], t["t_end"],
                          t["dt_max"], t["max_halvings"])


def build_problem(cfg, mesh=None, overrides=None):
    """Problem described by ``cfg``; ``overrides`` update solver settings.

    Returns
    -------
    ThermoelasticProblem
    """
    mesh = load_mesh(cfg) if mesh is None else mesh
    check_against_mesh(cfg, mesh)
    table = MaterialTable({k: _region(m) for k, m in cfg.materials.items()}, cfg.extrapolation)
    settings = SolverSettings(**{**cfg.solver, **(overrides or {})})
    source = None
    if cfg.source is not None:
        f = TimeFunction.parse(cfg.source)
        source = lambda x, t: np.full(np.shape(x)[:-1], f(t))  # noqa: E731
    return ThermoelasticProblem(mesh, table, _schedule(cfg.boundary), cfg.degree,
                                source=source, body_force=cfg.body_force,
                                robin_convention=cfg.robin_convention, settings=settings,
                                steady_time=cfg.steady["time"])
