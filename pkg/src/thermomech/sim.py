"""Thermoelastic problem definition and solution drivers.

The temperature solve is nonlinear (temperature-dependent conductivity and
heat capacity) and is done by Newton's method. The mechanical solve is
linear given the temperature. Because the heat equation does not involve the
displacement, one thermal solve followed by one elastic solve per time level
is exact.

Time stepping uses the theta-method. After each accepted step the next step
size is chosen so that the largest nodal temperature change approaches
``eps * dT_max``; a step whose change exceeds ``dT_max`` is repeated with
half the step size.
"""

from dataclasses import dataclass, field
import logging
import math
import time

import numpy as np
import scipy.sparse as sp

from . import _kernels, fem
from .amg import build_classical, build_smoothed_aggregation, rigid_body_modes
from .krylov import apply_dirichlet, bicgstab, cg
from .timing import TimingReport

__all__ = [
    "MaterialError",
    "PhysicalRangeError",
    "ConstraintError",
    "SolverError",
    "NewtonError",
    "StepRejectionError",
    "MaterialRegion",
    "MaterialTable",
    "eval_material",
    "TimeFunction",
    "BoundaryCondition",
    "BoundarySchedule",
    "eval_schedule",
    "TimeController",
    "SolverSettings",
    "ThermoelasticProblem",
    "PreconditionerCache",
    "State",
    "NewtonReport",
    "ElasticReport",
    "StepReport",
    "SteadyResult",
    "RebuildDecision",
    "assemble_thermal",
    "newton_thermal",
    "assemble_elastic",
    "solve_elastic",
    "coupled_steady_solve",
    "initial_state",
    "advance_transient",
    "run_transient",
    "preconditioner_policy",
    "RIGID_MODE_NAMES",
]

log = logging.getLogger(__name__)

RIGID_MODE_NAMES = ("translation x", "translation y", "translation z",
                    "rotation about x", "rotation about y", "rotation about z")


class MaterialError(ValueError):
    """Invalid or unknown material data."""


class PhysicalRangeError(ValueError):
    """A material coefficient left its physically valid range."""


class ConstraintError(ValueError):
    """Displacement constraints leave rigid body motions free."""


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed."""


class NewtonError(SolverError):
    """Newton's method did not converge; ``history`` holds residual norms."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class StepRejectionError(SolverError):
    """The time step was halved the maximum number of times."""


# ---------------------------------------------------------------- materials


def _as_table(x, name):
    a = np.atleast_1d(np.asarray(x, dtype=float))
    if a.ndim != 1:
        raise MaterialError(f"{name} must be a 1D table")
    return a


@dataclass(frozen=True)
class MaterialRegion:
    """Temperature tables of one material.

    ``alpha``, ``E``, ``kappa`` and ``cv`` are sampled at ``temperatures``
    (strictly increasing, K); a scalar stands for a constant.
    """

    temperatures: np.ndarray
    alpha: np.ndarray
    E: np.ndarray
    kappa: np.ndarray
    cv: np.ndarray
    rho: float
    nu: float
    T_ref: float = 293.0

    def __post_init__(self):
        tp = _as_table(self.temperatures, "temperatures")
        if tp.size > 1 and np.any(np.diff(tp) <= 0):
            raise MaterialError("table temperatures must be strictly increasing")
        object.__setattr__(self, "temperatures", tp)
        for name in ("alpha", "E", "kappa", "cv"):
            v = _as_table(getattr(self, name), name)
            if v.size == 1:
                v = np.full(tp.size, v[0])
            if v.size != tp.size:
                raise MaterialError(f"{name} has {v.size} samples, expected {tp.size}")
            object.__setattr__(self, name, v)
        for name in ("E", "kappa", "cv"):
            if np.any(getattr(self, name) <= 0):
                raise MaterialError(f"{name} must be positive at every sample")
        if not self.rho > 0:
            raise MaterialError("density must be positive")
        if not -1.0 < self.nu < 0.5:
            raise MaterialError(f"Poisson ratio {self.nu} outside (-1, 0.5)")

    @classmethod
    def constant(cls, alpha, E, kappa, cv, rho, nu, T_ref=293.0):
        return cls(np.array([T_ref]), alpha, E, kappa, cv, rho, nu, T_ref)


class MaterialTable:
    """Material regions keyed by the mesh's cell region ids.

    Parameters
    ----------
    regions : dict
        Region id to :class:`MaterialRegion`.
    extrapolation : {"clamp", "linear"}
        Outside the sampled range values are held at the end samples
        (``"clamp"``) or continued along the end segments (``"linear"``).
    """

    def __init__(self, regions, extrapolation="clamp"):
        if extrapolation not in ("clamp", "linear"):
            raise MaterialError(f"unknown extrapolation {extrapolation!r}")
        self.regions = {int(k): v for k, v in regions.items()}
        self.extrapolation = extrapolation

    def region(self, region):
        try:
            return self.regions[int(region)]
        except KeyError:
            raise MaterialError(f"unknown material region {region}") from None

    def _interp(self, tp, fp, T):
        T = np.asarray(T, dtype=float)
        if tp.size == 1:
            return np.full(T.shape, fp[0]), np.zeros(T.shape)
        val = np.interp(T, tp, fp)
        slopes = np.diff(fp) / np.diff(tp)
        seg = np.clip(np.searchsorted(tp, T, side="right") - 1, 0, tp.size - 2)
        der = slopes[seg]
        if self.extrapolation == "clamp":
            der = np.where((T < tp[0]) | (T > tp[-1]), 0.0, der)
        else:
            val = np.where(T < tp[0], fp[0] + slopes[0] * (T - tp[0]), val)
            val = np.where(T > tp[-1], fp[-1] + slopes[-1] * (T - tp[-1]), val)
        return val, der

    def evaluate(self, region, T, derivative=False):
        """``(alpha, E, kappa, cv)`` at temperatures ``T``; with ``derivative``
        a second tuple of temperature derivatives is returned too."""
        mat = self.region(region)
        pairs = [self._interp(mat.temperatures, getattr(mat, n), T)
                 for n in ("alpha", "E", "kappa", "cv")]
        vals = tuple(p[0] for p in pairs)
        if derivative:
            return vals, tuple(p[1] for p in pairs)
        return vals


def eval_material(table, region, T):
    """Interpolated ``(alpha_L, E, kappa, c_v)`` of ``region`` at ``T``.

    Examples
    --------
    >>> mat = MaterialRegion([300.0, 400.0], 1e-5, 1.0, [1.0, 1.2], 1.0, 1.0, 0.3)
    >>> float(eval_material(MaterialTable({0: mat}), 0, 350.0)[2])
    1.1
    """
    vals = table.evaluate(region, T)
    if np.ndim(T) == 0:
        return tuple(float(v) for v in vals)
    return vals


# ---------------------------------------------------------------- boundary data


@dataclass(frozen=True)
class TimeFunction:
    """Piecewise-linear function of time, held constant outside its table."""

    times: tuple
    values: tuple

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if t.shape != v.shape or t.ndim != 1 or t.size == 0:
            raise ValueError("time table needs matching 1D times and values")
        if np.any(np.diff(t) < 0):
            raise ValueError("schedule times must be non-decreasing")
        object.__setattr__(self, "times", tuple(t.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))

    @classmethod
    def constant(cls, value):
        return cls((0.0,), (float(value),))

    @classmethod
    def parse(cls, spec):
        """A number, or a list of ``[t, value]`` pairs."""
        if isinstance(spec, TimeFunction):
            return spec
        if np.ndim(spec) == 0:
            return cls.constant(float(spec))
        arr = np.asarray(spec, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("time table must be a list of [t, value] pairs")
        return cls(tuple(arr[:, 0]), tuple(arr[:, 1]))

    def __call__(self, t):
        if len(self.times) == 1:
            return self.values[0]
        return float(np.interp(t, self.times, self.values))


KINDS = ("robin", "pressure", "displacement")


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary data on the facets carrying ``tag``.

    ``robin`` uses ``beta`` and ``T_bc``, ``pressure`` uses ``p`` (traction
    ``p n`` along the outward normal ``n``), ``displacement`` uses ``u``, a
    3-tuple whose ``None`` entries leave that component free.
    """

    tag: int
    kind: str
    beta: TimeFunction = None
    T_bc: TimeFunction = None
    p: TimeFunction = None
    u: tuple = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")
        need = {"robin": ("beta", "T_bc"), "pressure": ("p",), "displacement": ("u",)}
        for name in need[self.kind]:
            if getattr(self, name) is None:
                raise ValueError(f"{self.kind} condition on tag {self.tag} needs {name!r}")
        if self.kind == "displacement":
            if len(self.u) != 3 or all(c is None for c in self.u):
                raise ValueError("displacement condition needs 3 components, not all free")


class BoundarySchedule:
    """Time-dependent boundary conditions keyed by facet tag.

    A tag carries at most one thermal condition (robin) and one mechanical
    condition (pressure or displacement).
    """

    def __init__(self, conditions=()):
        self.conditions = list(conditions)
        seen = set()
        for bc in self.conditions:
            field_ = "thermal" if bc.kind == "robin" else "mechanical"
            if (bc.tag, field_) in seen:
                raise ValueError(f"tag {bc.tag} has two {field_} conditions")
            seen.add((bc.tag, field_))

    def of_kind(self, kind):
        return [bc for bc in self.conditions if bc.kind == kind]

    def tags(self):
        return sorted({bc.tag for bc in self.conditions})

    def validate(self, mesh):
        known = set(int(t) for t in mesh.tags())
        missing = [t for t in self.tags() if t not in known]
        if missing:
            raise ValueError(f"boundary tags {missing} do not exist in the mesh "
                             f"(mesh tags: {sorted(known)})")


def eval_schedule(schedule, tag, t):
    """Boundary values on ``tag`` at time ``t``.

    Returns a dict with keys among ``"robin"`` (``(beta, T_bc)``),
    ``"pressure"`` (``p``) and ``"displacement"`` (3 components, ``None``
    for free ones).
    """
    out = {}
    for bc in schedule.conditions:
        if bc.tag != tag:
            continue
        if bc.kind == "robin":
            out["robin"] = (bc.beta(t), bc.T_bc(t))
        elif bc.kind == "pressure":
            out["pressure"] = bc.p(t)
        else:
            out["displacement"] = tuple(None if c is None else c(t) for c in bc.u)
    if not out:
        raise ValueError(f"no boundary condition on tag {tag}")
    return out


# ---------------------------------------------------------------- controls


@dataclass
class TimeController:
    """Theta-method and step-size control parameters.

    ``dt`` is the step size to try next and is updated in place by
    :func:`advance_transient`. ``dt_max`` caps the growth; steps are
    truncated so that the run ends exactly at ``t_end``.
    """

    theta: float = 1.0
    dt: float = 1.0
    dT_max: float = 10.0
    eps: float = 0.8
    t_end: float = math.inf
    dt_max: float = math.inf
    max_halvings: int = 20

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta = {self.theta} outside [0, 1]")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if not 0.0 < self.eps <= 1.0:
            raise ValueError(f"eps = {self.eps} outside (0, 1]")
        if not self.dT_max > 0:
            raise ValueError("dT_max must be positive")
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")

    def next_dt(self, dt, max_change):
        """``eps * dT_max / max_change * dt``, capped at ``dt_max``."""
        if max_change <= 0:
            return self.dt_max if math.isfinite(self.dt_max) else 2.0 * dt
        return min(self.eps * self.dT_max / max_change * dt, self.dt_max)


@dataclass
class SolverSettings:
    """Tolerances and preconditioner options.

    ``sa_threshold=None`` selects 0.04 for P1 and 0.08 for P2.
    ``newton_backtracking`` halves a Newton update (up to 10 times) until
    the residual norm decreases; plain Newton is the default.
    """

    newton_rtol: float = 1e-9
    max_newton: int = 25
    linear_rtol: float = 1e-12
    thermal_krylov: str = "cg"
    elastic_rtol: float = 1e-6
    maxit: int = 2000
    thermal_amg: str = "classical"
    elastic_amg: str = "sa"
    rotations: bool = True
    classical_threshold: float = 0.25
    sa_threshold: float = None
    coarse_size: int = 200
    chebyshev_degree: int = 2
    spike_factor: float = 1.5
    spike_window: int = 5
    newton_backtracking: bool = False

    def __post_init__(self):
        if self.thermal_krylov not in ("cg", "bicgstab"):
            raise ValueError(f"unknown Krylov solver {self.thermal_krylov!r}")
        for name in ("thermal_amg", "elastic_amg"):
            if getattr(self, name) not in ("classical", "sa", "none"):
                raise ValueError(f"{name} must be classical, sa or none")
        for name in ("newton_rtol", "linear_rtol", "elastic_rtol"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")


class ThermoelasticProblem:
    """Mesh, discretisation degree, materials and boundary data.

    Parameters
    ----------
    mesh : Mesh
    degree : {1, 2}
    materials : MaterialTable
        Must cover every region id in ``mesh.cell_region``.
    schedule : BoundarySchedule
    source : callable, optional
        Volumetric heat source ``f(x, t)`` (W/m^3), ``x`` of shape (..., 3).
    body_force : sequence of 3 TimeFunction, optional
    robin_convention : {"loss", "gain"}
        With ``"loss"`` a positive ``beta`` and ``T > T_bc`` remove heat
        (convective cooling). ``"gain"`` flips the sign of the boundary term.
    """

    def __init__(self, mesh, materials, schedule, degree=1, source=None,
                 body_force=None, robin_convention="loss", settings=None,
                 steady_time=0.0):
        if robin_convention not in ("loss", "gain"):
            raise ValueError(f"robin_convention must be 'loss' or 'gain', got {robin_convention!r}")
        schedule.validate(mesh)
        for r in np.unique(mesh.cell_region):
            materials.region(r)
        self.mesh = mesh
        self.degree = degree
        self.materials = materials
        self.schedule = schedule
        self.source = source
        self.body_force = None if body_force is None else tuple(
            TimeFunction.parse(c) for c in body_force)
        self.robin_sign = 1.0 if robin_convention == "loss" else -1.0
        self.settings = settings or SolverSettings()
        self.steady_time = steady_time
        self.V = fem.FunctionSpace(mesh, degree, 1)
        self.W = fem.FunctionSpace(mesh, degree, 3)
        self.rule = fem.quadrature(2 * degree)
        self.facet_rule = fem.facet_quadrature(2 * degree)
        self._facets = {}

    @property
    def sa_threshold(self):
        s = self.settings.sa_threshold
        return s if s is not None else (0.04 if self.degree == 1 else 0.08)

    def facets(self, tag):
        """Sorted facet triples, their scalar dofs and corner points."""
        if tag not in self._facets:
            tf, tt = self.mesh.tagged_facets()
            f = tf[tt == tag]
            self._facets[tag] = (f, fem.facet_dofs(self.V, f), self.mesh.vertices[f])
        return self._facets[tag]


@dataclass
class PreconditionerCache:
    hierarchy: object
    built_at_step: int
    build_seconds: float
    build_count: int = 1


@dataclass
class State:
    """Fields at time ``t`` plus cached preconditioners and policy history."""

    t: float
    T: np.ndarray
    u: np.ndarray
    step: int = 0
    thermal_pc: PreconditionerCache = None
    elastic_pc: PreconditionerCache = None
    thermal_history: list = field(default_factory=list)
    rebuild_thermal: bool = False
    thermal_builds: int = 0
    elastic_builds: int = 0

    def check(self, problem):
        if self.T.shape != (problem.V.n,):
            raise ValueError(f"temperature has {self.T.shape[0]} entries, space has {problem.V.n}")
        if self.u.shape != (problem.W.n,):
            raise ValueError(f"displacement has {self.u.shape[0]} entries, space has {problem.W.n}")


# ---------------------------------------------------------------- assembly


def _assemble(space, chunks, extra=()):
    """Global matrix and vector from ``(Ke, fe)`` pairs yielded per cell chunk."""
    ip, ix = space.pattern()
    data = np.zeros(len(ix))
    b = np.zeros(space.n)
    cd = space.dofmap.cell_dofs
    for s, e, Ke, fe in chunks:
        dofs = np.ascontiguousarray(cd[s:e])
        _kernels.scatter_matrix(ip, ix, data, dofs, np.ascontiguousarray(Ke))
        b += np.bincount(dofs.ravel(), weights=fe.ravel(), minlength=space.n)
    for dofs, mats, vecs in extra:
        if len(dofs):
            dofs = np.ascontiguousarray(dofs)
            _kernels.scatter_matrix(ip, ix, data, dofs, np.ascontiguousarray(mats))
            b += np.bincount(dofs.ravel(), weights=vecs.ravel(), minlength=space.n)
    return sp.csr_matrix((data, ix, ip), shape=(space.n, space.n)), b


def _region_coefficients(problem, regions, Tq, derivative):
    """Per-quadrature-point material values for cells with ``regions``."""
    mats = problem.materials
    shape = Tq.shape
    names = ("alpha", "E", "kappa", "cv", "rho", "nu", "T_ref")
    out = {n: np.empty(shape) for n in names}
    if derivative:
        for n in ("dalpha", "dE", "dkappa", "dcv"):
            out[n] = np.empty(shape)
    for r in np.unique(regions):
        sel = regions == r
        mat = mats.region(r)
        res = mats.evaluate(r, Tq[sel], derivative=derivative)
        vals, ders = res if derivative else (res, None)
        for n, v in zip(names[:4], vals):
            out[n][sel] = v
        if derivative:
            for n, v in zip(("dalpha", "dE", "dkappa", "dcv"), ders):
                out[n][sel] = v
        out["rho"][sel] = mat.rho
        out["nu"][sel] = mat.nu
        out["T_ref"][sel] = mat.T_ref
    return out


def _check_physical(coef, regions):
    for name, label in (("kappa", "conductivity"), ("cv", "specific heat")):
        bad = coef[name] <= 0
        if np.any(bad):
            c = int(np.flatnonzero(bad.any(axis=1))[0])
            raise PhysicalRangeError(
                f"non-positive {label} {coef[name][bad].min():.6g} in material region "
                f"{int(regions[c])}")


def assemble_thermal(problem, state, T_new, controller=None, t_new=None):
    """Residual and Jacobian of the discrete heat equation at ``T_new``.

    With a ``controller`` the theta-method step from ``state`` with step size
    ``controller.dt`` is assembled: coefficients ``w_theta = (1 - theta) w(T_m)
    + theta w(T_new)``, temperature ``T_theta`` likewise. Without one the
    steady problem (no heat-capacity term, ``theta = 1``) at time
    ``t_new`` (default ``state.t``) is assembled.

    Returns
    -------
    F : ndarray
        Residual vector.
    J : csr_matrix
        Jacobian ``dF/dT_new`` including the conductivity and heat-capacity
        derivative terms.
    """
    V = problem.V
    mesh = problem.mesh
    T_new = np.asarray(T_new, dtype=float)
    if T_new.shape != (V.n,):
        raise ValueError(f"temperature has {T_new.shape[0]} entries, space has {V.n}")
    steady = controller is None
    if steady:
        theta, dt = 1.0, None
        t_old = t1 = state.t if t_new is None else t_new
        T_old = T_new
    else:
        theta, dt = controller.theta, controller.dt
        t_old = state.t
        t1 = state.t + dt if t_new is None else t_new
        T_old = state.T
    rule = problem.rule
    vals, _ = fem.tet_basis(problem.degree, rule.points)
    cn = V.dofmap.cell_nodes
    regions = mesh.cell_region

    def chunks():
        for s in range(0, mesh.n_cells, fem.CHUNK):
            e = min(s + fem.CHUNK, mesh.n_cells)
            p = mesh.vertices[mesh.cells[s:e]]
            G, det = fem._phys_gradients(p, problem.degree, rule)
            w = rule.weights[None, :] * det[:, None]
            Tn, To = T_new[cn[s:e]], T_old[cn[s:e]]
            Tq = Tn @ vals.T
            cn_ = _region_coefficients(problem, regions[s:e], Tq, True)
            _check_physical(cn_, regions[s:e])
            if steady:
                kap_t, Tth = cn_["kappa"], Tn
            else:
                Toq = To @ vals.T
                co = _region_coefficients(problem, regions[s:e], Toq, False)
                _check_physical(co, regions[s:e])
                kap_t = (1 - theta) * co["kappa"] + theta * cn_["kappa"]
                Tth = (1 - theta) * To + theta * Tn
            Gq = G[:, None] if G.ndim == 3 else G
            grad = np.einsum("mqka,mk->mqa", Gq, Tth)
            wk = w * kap_t
            if G.ndim == 3:
                fe = np.einsum("ma,mka->mk", (wk[..., None] * grad).sum(axis=1), G)
            else:
                fe = np.einsum("mq,mqa,mqka->mk", wk, grad, G)
            Ke = fem._gram(G, theta * wk)
            # conductivity derivative: d kappa/dT phi_b (grad T_theta . grad phi_a)
            dgr = np.einsum("mqa,mqka->mqk", grad, Gq)
            if dgr.shape[1] == 1:
                dgr = np.broadcast_to(dgr, (dgr.shape[0], len(rule.weights), dgr.shape[2]))
            Ke = Ke + np.einsum("mq,mqa,qb->mab", w * theta * cn_["dkappa"], dgr, vals)
            if not steady:
                rc_t = cn_["rho"] * ((1 - theta) * co["cv"] + theta * cn_["cv"])
                dT = (Tq - Toq) / dt
                fe = fe + np.einsum("mq,qa->ma", w * rc_t * dT, vals)
                cm = w * (rc_t / dt + cn_["rho"] * theta * cn_["dcv"] * dT)
                Ke = Ke + np.einsum("mq,qa,qb->mab", cm, vals, vals)
            if problem.source is not None:
                xq = fem.quadrature_points(p, rule)
                f = problem.source(xq, t1)
                if not steady and theta != 1.0:
                    f = (1 - theta) * problem.source(xq, t_old) + theta * f
                fe = fe - np.einsum("mq,qa->ma", w * f, vals)
            yield s, e, Ke, fe

    extra = []
    for bc in problem.schedule.of_kind("robin"):
        facets, fdofs, fp = problem.facets(bc.tag)
        if not len(facets):
            continue
        beta = (1 - theta) * bc.beta(t_old) + theta * bc.beta(t1)
        tbc = (1 - theta) * bc.T_bc(t_old) + theta * bc.T_bc(t1)
        Mf, vf = fem.robin_element_matrices(fp, problem.degree, beta, tbc, problem.facet_rule)
        Tth_f = (1 - theta) * T_old[fdofs] + theta * T_new[fdofs]
        sgn = problem.robin_sign
        res = sgn * (np.einsum("kab,kb->ka", Mf, Tth_f) - vf)
        extra.append((fdofs, sgn * theta * Mf, res))
    J, F = _assemble(V, chunks(), extra)
    return F, J


# ---------------------------------------------------------------- linear solves


def _build_thermal_pc(problem, J):
    s = problem.settings
    if s.thermal_amg == "classical":
        return build_classical(J, strength_threshold=s.classical_threshold,
                               coarse_size_threshold=s.coarse_size)
    if s.thermal_amg == "sa":
        return build_smoothed_aggregation(J, np.ones((J.shape[0], 1)), block_size=1,
                                          strength_threshold=problem.sa_threshold,
                                          coarse_size_threshold=s.coarse_size,
                                          degree=s.chebyshev_degree)
    return None


def _krylov(A, b, P, rtol, maxit, first):
    """Solve with ``first`` (cg or bicgstab); cg failures fall back to bicgstab."""
    solver = cg if first == "cg" else bicgstab
    x, rep = solver(A, b, P, rtol=rtol, maxit=maxit)
    used = first
    if not rep.converged and first == "cg":
        reason = rep.breakdown_reason or "iteration limit"
        log.info("cg failed (%s), retrying with bicgstab", reason)
        x, rep2 = bicgstab(A, b, P, rtol=rtol, maxit=maxit)
        rep2.breakdown_reason = rep2.breakdown_reason or (f"cg: {reason}" if not rep2.converged else None)
        rep, used = rep2, "bicgstab"
    return x, rep, used


@dataclass
class NewtonReport:
    iterations: int
    residuals: list
    converged: bool
    linear_iterations: list
    solvers: list
    preconditioner_built: bool = False

    @property
    def last_linear_iterations(self):
        return self.linear_iterations[-1] if self.linear_iterations else 0


def newton_thermal(problem, state, T_init=None, controller=None, rtol=None,
                   max_newton=None, pc=None, rebuild=False, timer=None, step=0):
    """Solve the heat equation by Newton's method.

    Each Newton system is solved by AMG-preconditioned Krylov iterations (cg,
    falling back to bicgstab on breakdown). The preconditioner is taken from
    ``pc`` unless it is ``None`` or ``rebuild`` is set, in which case it is
    built from the first Jacobian.

    Returns
    -------
    T : ndarray
    report : NewtonReport
    pc : PreconditionerCache
        The preconditioner used (new or reused).

    Raises
    ------
    NewtonError
        If ``||F|| / ||F(T_init)|| > rtol`` after ``max_newton`` iterations.
    """
    s = problem.settings
    rtol = s.newton_rtol if rtol is None else rtol
    max_newton = s.max_newton if max_newton is None else max_newton
    timer = timer or TimingReport()
    T = np.array(state.T if T_init is None else T_init, dtype=float)
    history, lin_its, solvers = [], [], []
    built = False
    r0 = None
    for k in range(max_newton + 1):
        with timer.phase("assembly"):
            F, J = assemble_thermal(problem, state, T, controller)
        rn = float(np.linalg.norm(F))
        history.append(rn)
        if r0 is None:
            r0 = rn
        if rn == 0.0 or rn <= rtol * r0:
            return T, NewtonReport(k, history, True, lin_its, solvers, built), pc
        if k == max_newton:
            break
        if s.thermal_amg != "none" and (pc is None or rebuild):
            t0 = time.perf_counter()
            with timer.phase("precond build"):
                H = _build_thermal_pc(problem, J)
            pc = PreconditionerCache(H, step, time.perf_counter() - t0)
            built, rebuild = True, False
        P = pc.hierarchy.aspreconditioner() if pc is not None else None
        with timer.phase("thermal solve"):
            dT, rep, used = _krylov(J, -F, P, s.linear_rtol, s.maxit, s.thermal_krylov)
        lin_its.append(rep.iterations)
        solvers.append(used)
        if not rep.converged:
            raise NewtonError(f"linear solve failed in Newton iteration {k + 1}: "
                              f"{rep.breakdown_reason or 'no convergence'}", history)
        if s.newton_backtracking:
            lam = 1.0
            for _ in range(10):
                with timer.phase("assembly"):
                    F_try, _ = assemble_thermal(problem, state, T + lam * dT, controller)
                if np.linalg.norm(F_try) < rn:
                    break
                lam *= 0.5
            dT = lam * dT
        T += dT
        if not np.all(np.isfinite(T)):
            raise NewtonError("non-finite temperature in Newton iteration", history)
    raise NewtonError(f"Newton did not reach relative residual {rtol:g} in {max_newton} "
                      f"iterations (history {', '.join(f'{h:.3e}' for h in history)})",
                      history)


# ---------------------------------------------------------------- elasticity


def _constrained_dofs(problem, t):
    """Dirichlet dofs and values of the vector space at time ``t``."""
    dofs, vals = [], []
    for bc in problem.schedule.of_kind("displacement"):
        _, fdofs, _ = problem.facets(bc.tag)
        nodes = np.unique(fdofs)
        for c, fn in enumerate(bc.u):
            if fn is None:
                continue
            dofs.append(3 * nodes + c)
            vals.append(np.full(nodes.size, fn(t)))
    if not dofs:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate(dofs), np.concatenate(vals)


def check_rigid_constraints(problem, dofs):
    """Raise :class:`ConstraintError` unless ``dofs`` fix all 6 rigid motions."""
    B = rigid_body_modes(None, problem.W.dofmap, orthonormalize=False)
    B = B / np.linalg.norm(B, axis=0)
    Bc = B[np.unique(dofs)]
    if Bc.shape[0] == 0:
        free = np.eye(6)
    else:
        _, sv, vt = np.linalg.svd(Bc, full_matrices=True)
        sv = np.concatenate([sv, np.zeros(6 - sv.size)]) if sv.size < 6 else sv
        tol = 1e-8 * max(sv[0], 1.0) if sv.size else 0.0
        free = vt[sv <= tol]
    if len(free):
        names = sorted({RIGID_MODE_NAMES[i] for v in free
                        for i in np.flatnonzero(np.abs(v) > 0.1 * np.abs(v).max())},
                       key=RIGID_MODE_NAMES.index)
        raise ConstraintError(
            f"displacement constraints leave {len(free)} rigid body mode(s) free "
            f"(involving {', '.join(names)}); add displacement conditions")


def assemble_elastic(problem, T, t):
    """Stiffness matrix and load vector (thermal stress, body force, pressure)."""
    W, mesh, rule = problem.W, problem.mesh, problem.rule
    vals, _ = fem.tet_basis(problem.degree, rule.points)
    cn = problem.V.dofmap.cell_nodes
    regions = mesh.cell_region
    f_body = None
    if problem.body_force is not None:
        f_body = np.array([c(t) for c in problem.body_force])

    def chunks():
        for s in range(0, mesh.n_cells, fem.CHUNK):
            e = min(s + fem.CHUNK, mesh.n_cells)
            p = mesh.vertices[mesh.cells[s:e]]
            Tq = T[cn[s:e]] @ vals.T
            c = _region_coefficients(problem, regions[s:e], Tq, False)
            nu = c["nu"]
            lam = c["E"] * nu / ((1 + nu) * (1 - 2 * nu))
            mu = c["E"] / (2 * (1 + nu))
            eps = c["alpha"] * (Tq - c["T_ref"])
            Ke, fe = fem.elastic_element_system(p, problem.degree, lam, mu, eps, rule)
            if f_body is not None and np.any(f_body):
                fe = fe + fem.body_load_vectors(p, problem.degree, f_body, rule)
            yield s, e, Ke, fe

    extra = []
    for bc in problem.schedule.of_kind("pressure"):
        facets, _, fp = problem.facets(bc.tag)
        pv = bc.p(t)
        if not len(facets) or pv == 0:
            continue
        normals, _ = fem.facet_normals(mesh, facets)
        fe = fem.pressure_load_vectors(fp, normals, problem.degree, pv, problem.facet_rule)
        fd = fem.facet_dofs(W, facets)
        extra.append((fd, np.zeros((len(fd), fd.shape[1], fd.shape[1])), fe))
    return _assemble(W, chunks(), extra)


@dataclass
class ElasticReport:
    iterations: int
    residual: float
    converged: bool
    preconditioner_built: bool
    n_constrained: int


def solve_elastic(problem, state, T_new, t_new, pc=None, rebuild=False, rtol=None,
                  timer=None, step=0):
    """Displacement at temperature ``T_new`` and time ``t_new``.

    CG with smoothed-aggregation AMG built on the rigid body modes (zeroed
    at constrained dofs; translations only when ``settings.rotations`` is
    off). ``pc`` is reused unless ``None`` or ``rebuild``.

    Returns
    -------
    u : ndarray
    report : ElasticReport
    pc : PreconditionerCache
    """
    s = problem.settings
    rtol = s.elastic_rtol if rtol is None else rtol
    timer = timer or TimingReport()
    with timer.phase("assembly"):
        dofs, values = _constrained_dofs(problem, t_new)
        check_rigid_constraints(problem, dofs)
        A, b = assemble_elastic(problem, T_new, t_new)
        A, b = apply_dirichlet(A, b, dofs, values)
    built = False
    if s.elastic_amg != "none" and (pc is None or rebuild):
        t0 = time.perf_counter()
        with timer.phase("precond build"):
            if s.elastic_amg == "sa":
                B = rigid_body_modes(None, problem.W.dofmap)
                if not s.rotations:
                    B = B[:, :3]
                B[dofs] = 0.0
                H = build_smoothed_aggregation(A, B, strength_threshold=problem.sa_threshold,
                                               coarse_size_threshold=s.coarse_size,
                                               degree=s.chebyshev_degree)
            else:
                H = build_classical(A, strength_threshold=s.classical_threshold,
                                    coarse_size_threshold=s.coarse_size)
        pc = PreconditionerCache(H, step, time.perf_counter() - t0)
        built = True
    P = pc.hierarchy.aspreconditioner() if pc is not None else None
    with timer.phase("elastic solve"):
        u, rep = cg(A, b, P, rtol=rtol, maxit=s.maxit, x0=None)
    if not rep.converged:
        raise SolverError(f"elastic solve failed after {rep.iterations} iterations: "
                          f"{rep.breakdown_reason or 'no convergence'}")
    return u, ElasticReport(rep.iterations, rep.residual, True, built, len(np.unique(dofs))), pc


# ---------------------------------------------------------------- drivers


@dataclass
class SteadyResult:
    T: np.ndarray
    u: np.ndarray
    thermal: NewtonReport
    elastic: ElasticReport
    timing: TimingReport
    order: list
    wall: float


def coupled_steady_solve(problem, T_guess=400.0, timer=None):
    """One thermal Newton solve, then one elastic solve with that temperature.

    ``T_guess`` is the uniform initial Newton iterate. The returned
    ``order`` lists the sub-solves in execution order.
    """
    t0 = time.perf_counter()
    timer = timer or TimingReport()
    t = problem.steady_time
    with timer.phase("setup"):
        state = State(t, np.full(problem.V.n, float(T_guess)), np.zeros(problem.W.n))
    order = []
    T, nrep, _ = newton_thermal(problem, state, timer=timer)
    order.append("thermal")
    u, erep, _ = solve_elastic(problem, state, T, t, timer=timer)
    order.append("elastic")
    return SteadyResult(T, u, nrep, erep, timer, order, time.perf_counter() - t0)


def initial_state(problem, T0=293.0, t0=0.0):
    """State with uniform (or callable) initial temperature and zero displacement."""
    if callable(T0):
        T = fem.interpolate(problem.V, T0)
    else:
        T = np.full(problem.V.n, float(T0))
    return State(t0, T, np.zeros(problem.W.n))


@dataclass
class RebuildDecision:
    thermal: bool
    elastic: bool
    reason: str = ""


def preconditioner_policy(state, report, spike_factor=1.5, window=5):
    """Which preconditioners to rebuild before the next step.

    The elastic preconditioner is built once. The thermal one is rebuilt
    after a rejected attempt (:func:`advance_transient` does so for the
    retry itself, so a report whose retries already rebuilt asks for
    nothing more), or when the last thermal Krylov solve took more than
    ``spike_factor`` times the rolling mean of the previous ``window``
    steps.
    """
    elastic = state.elastic_pc is None
    if report is None:
        return RebuildDecision(state.thermal_pc is None, elastic, "initial build")
    if report.rejections > 0 and report.thermal_rebuilds == 0:
        return RebuildDecision(True, elastic, f"{report.rejections} rejected attempt(s)")
    hist = state.thermal_history[-window - 1:-1]
    last = report.thermal_last_iterations
    if hist:
        mean = float(np.mean(hist))
        if last > spike_factor * mean:
            return RebuildDecision(True, elastic,
                                   f"iteration spike {last} > {spike_factor:g} x {mean:.2f}")
    return RebuildDecision(False, elastic, "")


@dataclass
class StepReport:
    step: int
    t: float
    dt: float
    next_dt: float
    max_change: float
    rejections: int
    newton_iterations: int
    thermal_iterations: int
    thermal_last_iterations: int
    elastic_iterations: int
    thermal_rebuilds: int
    elastic_rebuild: bool
    thermal_seconds: float
    elastic_seconds: float
    events: list = field(default_factory=list)

    def record(self):
        """Flat dict for line-delimited output (fixed key order)."""
        return {"step": self.step, "t": self.t, "dt": self.dt, "next_dt": self.next_dt,
                "max_dT": self.max_change, "rejections": self.rejections,
                "newton_iterations": self.newton_iterations,
                "thermal_krylov_iterations": self.thermal_iterations,
                "elastic_krylov_iterations": self.elastic_iterations,
                "thermal_rebuilds": self.thermal_rebuilds,
                "elastic_rebuild": self.elastic_rebuild,
                "thermal_seconds": self.thermal_seconds,
                "elastic_seconds": self.elastic_seconds,
                "events": list(self.events)}


def advance_transient(problem, state, controller, timer=None):
    """Take one accepted time step from ``state``.

    The step is attempted with ``controller.dt`` (truncated at
    ``controller.t_end``); while the largest nodal temperature change
    exceeds ``controller.dT_max`` the step is halved and repeated. On
    acceptance the displacement is computed and ``controller.dt`` is set
    to the next step size.

    Returns
    -------
    state : State
    report : StepReport

    Raises
    ------
    StepRejectionError
        After ``controller.max_halvings`` halvings.
    """
    state.check(problem)
    timer = timer or TimingReport()
    s = problem.settings
    step = state.step + 1
    events = []
    thermal_pc = state.thermal_pc
    rebuild = state.rebuild_thermal or thermal_pc is None
    if state.rebuild_thermal and thermal_pc is not None:
        events.append(f"step {step}: thermal preconditioner rebuild scheduled")
    dt = controller.dt
    if math.isfinite(controller.t_end):
        dt = min(dt, controller.t_end - state.t)
    if not dt > 0:
        raise ValueError(f"no time left to step: t = {state.t}, t_end = {controller.t_end}")
    rejections = thermal_builds = 0
    newton_its = lin_total = lin_last = 0
    th = TimingReport()
    while True:
        attempt = TimeController(controller.theta, dt, controller.dT_max, controller.eps,
                                 controller.t_end, controller.dt_max, controller.max_halvings)
        try:
            T_new, nrep, thermal_pc = newton_thermal(problem, state, state.T, attempt,
                                                     pc=thermal_pc, rebuild=rebuild,
                                                     timer=th, step=step)
            change = float(np.max(np.abs(T_new - state.T)))
            failure = None
        except NewtonError as exc:
            nrep, change, failure = None, math.inf, str(exc)
        if nrep is not None:
            newton_its += nrep.iterations
            lin_total += sum(nrep.linear_iterations)
            lin_last = nrep.last_linear_iterations
            if nrep.preconditioner_built:
                thermal_builds += 1
                events.append(f"step {step}: thermal preconditioner rebuilt")
        if change <= controller.dT_max:
            break
        rejections += 1
        why = failure or f"max |dT| = {change:.4g} K > {controller.dT_max:g} K"
        events.append(f"step {step}: rejected dt = {dt:.6g} s ({why}); retrying with dt/2")
        if rejections > controller.max_halvings:
            raise StepRejectionError(
                f"step {step} at t = {state.t:.6g} s rejected {rejections} times; "
                f"last attempt dt = {dt:.6g} s ({why})")
        dt *= 0.5
        rebuild = s.thermal_amg != "none"
    t_new = state.t + dt
    eh = TimingReport()
    elastic_rebuild = state.elastic_pc is None
    u_new, erep, elastic_pc = solve_elastic(problem, state, T_new, t_new, pc=state.elastic_pc,
                                            rebuild=elastic_rebuild, timer=eh, step=step)
    if elastic_rebuild:
        events.append(f"step {step}: elastic preconditioner built")
    next_dt = controller.next_dt(dt, change)
    controller.dt = next_dt
    timer.merge(th)
    timer.merge(eh)
    report = StepReport(step, t_new, dt, next_dt, change, rejections, newton_its, lin_total,
                        lin_last, erep.iterations, thermal_builds, elastic_rebuild,
                        th.total(), eh.total(), events)
    new = State(t_new, T_new, u_new, step, thermal_pc, elastic_pc,
                state.thermal_history + [lin_last], False,
                state.thermal_builds + thermal_builds,
                state.elastic_builds + int(elastic_rebuild))
    decision = preconditioner_policy(new, report, s.spike_factor, s.spike_window)
    new.rebuild_thermal = decision.thermal and s.thermal_amg != "none"
    if decision.thermal and decision.reason:
        events.append(f"step {step}: thermal rebuild requested for next step ({decision.reason})")
    for ev in events:
        log.info(ev)
    return new, report


def run_transient(problem, state, controller, max_steps=None, timer=None, on_step=None):
    """Step until ``controller.t_end`` (or ``max_steps``); returns final state and reports."""
    reports = []
    timer = timer or TimingReport()
    while state.t < controller.t_end * (1 - 1e-12) and (max_steps is None or len(reports) < max_steps):
        state, rep = advance_transient(problem, state, controller, timer)
        reports.append(rep)
        if on_step is not None:
            on_step(state, rep)
    return state, reports
