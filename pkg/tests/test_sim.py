import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermomech import fem
from thermomech.mesh import build_box_mesh
from thermomech.sim import (BoundaryCondition, BoundarySchedule, ConstraintError, MaterialError,
                            MaterialRegion, MaterialTable, NewtonError, PhysicalRangeError,
                            SolverSettings, State, StepRejectionError, StepReport, ThermoelasticProblem,
                            TimeController, TimeFunction, advance_transient, assemble_elastic,
                            assemble_thermal, coupled_steady_solve, eval_material,
                            eval_schedule, initial_state, newton_thermal,
                            preconditioner_policy, run_transient, solve_elastic)

C = TimeFunction.constant


def robin(tag, beta, T_bc):
    return BoundaryCondition(tag, "robin", beta=C(beta), T_bc=C(T_bc))


def fixed(tag, u=(0.0, 0.0, 0.0)):
    return BoundaryCondition(tag, "displacement",
                             u=tuple(None if c is None else C(c) for c in u))


def steel(kappa=1.0, cv=1.0, rho=1.0, alpha=1e-5, E=1.0, nu=0.3, T_ref=293.0):
    return MaterialTable({0: MaterialRegion.constant(alpha, E, kappa, cv, rho, nu, T_ref)})


def nonlinear_table(extrapolation="clamp"):
    reg = MaterialRegion([250.0, 400.0, 600.0], [1e-5, 1.2e-5, 1.5e-5], [1.0, 2.0, 1.5],
                         [1.0, 1.3, 2.0], [2.0, 1.5, 1.0], 1.5, 0.3)
    return MaterialTable({0: reg}, extrapolation)


def problem(mesh, materials=None, conditions=(), degree=1, **kw):
    return ThermoelasticProblem(mesh, materials or steel(), BoundarySchedule(conditions),
                                degree, **kw)


def state(pr, T, t=0.0):
    T = np.full(pr.V.n, float(T)) if np.ndim(T) == 0 else np.asarray(T, dtype=float)
    return State(t, T, np.zeros(pr.W.n))


# ---------------------------------------------------------------- materials and schedules


def test_eval_material_examples():
    mat = MaterialRegion([300.0, 400.0], 1e-5, 1.0, [1.0, 1.2], 1.0, 1.0, 0.3)
    table = MaterialTable({0: mat})
    assert eval_material(table, 0, 350.0)[2] == pytest.approx(1.1, abs=1e-15)
    assert eval_material(table, 0, 250.0)[2] == 1.0
    assert eval_material(table, 0, 450.0)[2] == 1.2
    assert eval_material(table, 0, 400.0)[2] == 1.2
    assert eval_material(table, 0, 300.0)[2] == 1.0


def test_eval_material_vectorised_and_unknown_region():
    table = nonlinear_table()
    alpha, E, kappa, cv = eval_material(table, 0, np.array([250.0, 325.0, 700.0]))
    assert np.allclose(kappa, [1.0, 1.15, 2.0])
    with pytest.raises(MaterialError, match="region 3"):
        eval_material(table, 3, 300.0)


def test_linear_extrapolation():
    table = nonlinear_table("linear")
    kappa = eval_material(table, 0, 800.0)[2]
    assert kappa == pytest.approx(2.0 + 0.7 / 200.0 * 200.0)


@pytest.mark.parametrize("kw", [
    dict(temperatures=[300.0, 300.0]),
    dict(E=[1.0, -1.0]),
    dict(kappa=[1.0, 0.0]),
    dict(cv=[1.0, 2.0, 3.0]),
])
def test_material_validation(kw):
    args = dict(temperatures=[300.0, 400.0], alpha=1e-5, E=1.0, kappa=1.0, cv=1.0,
                rho=1.0, nu=0.3)
    args.update(kw)
    with pytest.raises(MaterialError):
        MaterialRegion(**args)


def test_eval_schedule_examples():
    bc = BoundaryCondition(1, "robin", beta=TimeFunction.parse([[0.0, 1.0], [10.0, 1.2]]),
                           T_bc=C(300.0))
    sched = BoundarySchedule([bc, BoundaryCondition(2, "pressure", p=TimeFunction.parse(5.0))])
    assert eval_schedule(sched, 1, 5.0)["robin"][0] == pytest.approx(1.1, abs=1e-15)
    assert eval_schedule(sched, 1, -1.0)["robin"][0] == 1.0
    assert eval_schedule(sched, 1, 10.0)["robin"][0] == 1.2
    assert eval_schedule(sched, 2, 3.0) == {"pressure": 5.0}
    with pytest.raises(ValueError, match="tag 4"):
        eval_schedule(sched, 4, 0.0)


def test_schedule_validation(cube):
    with pytest.raises(ValueError, match="non-decreasing"):
        TimeFunction((0.0, 2.0, 1.0), (0.0, 1.0, 2.0))
    with pytest.raises(ValueError, match="two thermal"):
        BoundarySchedule([robin(1, 1.0, 300.0), robin(1, 2.0, 300.0)])
    with pytest.raises(ValueError, match=r"\[7\]"):
        BoundarySchedule([robin(7, 1.0, 300.0)]).validate(cube)
    with pytest.raises(ValueError):
        BoundaryCondition(1, "displacement", u=(None, None, None))


def test_time_controller_validation():
    for kw in (dict(theta=1.5), dict(dt=0.0), dict(eps=0.0), dict(eps=1.2)):
        with pytest.raises(ValueError):
            TimeController(**kw)


# ---------------------------------------------------------------- thermal assembly


def test_residual_zero_at_boundary_temperature(cube48):
    pr = problem(cube48, conditions=[robin(t, 3.7 * t, 321.0) for t in range(1, 7)])
    F, _ = assemble_thermal(pr, state(pr, 0.0), np.full(pr.V.n, 321.0))
    assert np.abs(F).max() <= 1e-12 * 321.0


@pytest.mark.parametrize("degree", [1, 2])
@pytest.mark.parametrize("transient", [False, True])
def test_jacobian_symmetric_for_constant_kappa(cube48, degree, transient, rng):
    pr = problem(cube48, conditions=[robin(1, 5.0, 300.0), robin(4, 2.0, 400.0)], degree=degree)
    st_ = state(pr, 300.0 + 50 * rng.random(pr.V.n))
    ctrl = TimeController(theta=0.5, dt=0.3) if transient else None
    _, J = assemble_thermal(pr, st_, st_.T + rng.random(pr.V.n), ctrl)
    assert abs(J - J.T).max() <= 1e-12 * abs(J).max()


def fd_jacobian(pr, st_, T, ctrl, rel=1e-6):
    F0, J = assemble_thermal(pr, st_, T, ctrl)
    Jfd = np.zeros((pr.V.n, pr.V.n))
    for j in range(pr.V.n):
        h = rel * abs(T[j])
        Tp, Tm = T.copy(), T.copy()
        Tp[j] += h
        Tm[j] -= h
        Jfd[:, j] = (assemble_thermal(pr, st_, Tp, ctrl)[0]
                     - assemble_thermal(pr, st_, Tm, ctrl)[0]) / (2 * h)
    return J.toarray(), Jfd


@pytest.mark.parametrize("degree,mesh_cells", [(1, (2, 2, 2)), (2, (1, 1, 2))])
@pytest.mark.parametrize("theta", [None, 0.5, 1.0])
def test_jacobian_matches_finite_differences(degree, mesh_cells, theta, rng):
    mesh = build_box_mesh(*mesh_cells)
    pr = problem(mesh, nonlinear_table(), [robin(1, 3.0, 350.0), robin(6, 1.5, 500.0)],
                 degree=degree, source=lambda x, t: 10.0 * x[..., 0])
    assert pr.V.n <= 200
    st_ = state(pr, 300.0 + 250.0 * rng.random(pr.V.n))
    ctrl = None if theta is None else TimeController(theta=theta, dt=0.7)
    T = 300.0 + 250.0 * rng.random(pr.V.n)
    J, Jfd = fd_jacobian(pr, st_, T, ctrl)
    assert np.abs(J - Jfd).max() <= 1e-5 * np.abs(J).max()
    if theta is not None:
        # heat capacity and conductivity both vary: the Jacobian is not symmetric
        assert np.abs(J - J.T).max() > 1e-8 * np.abs(J).max()


def test_physical_range_guard(cube):
    reg = MaterialRegion([300.0, 400.0], 1e-5, 1.0, [1.0, 0.5], 1.0, 1.0, 0.3)
    pr = problem(cube, MaterialTable({0: reg}, "linear"), [robin(1, 1.0, 300.0)])
    with pytest.raises(PhysicalRangeError, match="conductivity"):
        assemble_thermal(pr, state(pr, 700.0), np.full(pr.V.n, 700.0))


def test_temperature_length_checked(cube):
    pr = problem(cube, conditions=[robin(1, 1.0, 300.0)])
    with pytest.raises(ValueError, match="entries"):
        assemble_thermal(pr, state(pr, 300.0), np.zeros(3))


# ---------------------------------------------------------------- Newton


def test_newton_linear_problem_one_iteration(cube48):
    pr = problem(cube48, conditions=[robin(1, 10.0, 300.0), robin(2, 10.0, 500.0)],
                 source=lambda x, t: 100.0 + 0 * x[..., 0])
    T, rep, pc = newton_thermal(pr, state(pr, 400.0))
    assert rep.converged and rep.iterations == 1
    assert rep.residuals[-1] <= 1e-9 * rep.residuals[0]
    assert pc is not None


def test_newton_quadratic_convergence():
    mesh = build_box_mesh(4, 4, 4)
    c = 0.01
    # kappa = 1 + c T exactly (linear table, linear extrapolation)
    reg = MaterialRegion([0.0, 100.0], 0.0, 1.0, [1.0, 1.0 + 100.0 * c], 1.0, 1.0, 0.3)
    pr = problem(mesh, MaterialTable({0: reg}, "linear"),
                 [robin(1, 50.0, 100.0), robin(2, 50.0, 10.0)],
                 source=lambda x, t: 2000.0 + 0 * x[..., 0],
                 settings=SolverSettings(newton_rtol=1e-13))
    T, rep, _ = newton_thermal(pr, state(pr, 400.0))
    r = np.array(rep.residuals)
    assert rep.converged and rep.iterations <= 8
    # quadratic phase: r_{k+1} / r_k^2 stays bounded while r_k falls by orders of
    # magnitude (linear convergence would make the ratio grow like 1 / r_k)
    k = np.flatnonzero(r[1:] > 1e-10 * r[0])[1:]
    ratios = r[k + 1] / r[k] ** 2
    assert len(ratios) >= 3
    assert r[k[0]] / r[k[-1] + 1] > 1e4
    assert ratios.max() <= 10.0 * ratios.min()
    assert r[-1] / r[-2] < 1e-3


def test_newton_failure_carries_history(cube48):
    reg = MaterialRegion([0.0, 100.0], 0.0, 1.0, [1.0, 3.0], 1.0, 1.0, 0.3)
    pr = problem(cube48, MaterialTable({0: reg}, "linear"), [robin(1, 50.0, 100.0)],
                 source=lambda x, t: 1e4 + 0 * x[..., 0],
                 settings=SolverSettings(max_newton=1))
    with pytest.raises(NewtonError) as err:
        newton_thermal(pr, state(pr, 400.0))
    assert len(err.value.history) == 2


def test_newton_backtracking_option(cube48):
    reg = MaterialRegion([0.0, 100.0], 0.0, 1.0, [1.0, 3.0], 1.0, 1.0, 0.3)
    pr = problem(cube48, MaterialTable({0: reg}, "linear"), [robin(1, 50.0, 100.0)],
                 source=lambda x, t: 500.0 + 0 * x[..., 0],
                 settings=SolverSettings(newton_backtracking=True))
    T, rep, _ = newton_thermal(pr, state(pr, 400.0))
    assert rep.converged
    assert all(b < a for a, b in zip(rep.residuals, rep.residuals[1:]))


def test_maximum_principle_stiff_robin():
    mesh = build_box_mesh(4, 4, 4)
    pr = problem(mesh, conditions=[robin(1, 1e8, 300.0), robin(2, 1e8, 500.0)])
    T, rep, _ = newton_thermal(pr, state(pr, 400.0))
    assert rep.converged
    assert T.min() >= 300.0 - 1e-6 and T.max() <= 500.0 + 1e-6
    x = mesh.vertices[:, 0]
    order = np.lexsort((T, x))
    xs, Ts = x[order], T[order]
    later = xs[1:] > xs[:-1] + 1e-12
    # temperature is nondecreasing from the cold face to the hot face
    assert np.all(Ts[1:][later] >= Ts[:-1][later] - 1e-8)


def test_cg_falls_back_to_bicgstab(cube48):
    pr = problem(cube48, conditions=[robin(1, 10.0, 300.0)],
                 settings=SolverSettings(thermal_krylov="bicgstab"))
    T, rep, _ = newton_thermal(pr, state(pr, 400.0))
    assert rep.converged and rep.solvers == ["bicgstab"]


# ---------------------------------------------------------------- elasticity


def test_elastic_zero_at_reference_temperature(cube48):
    pr = problem(cube48, conditions=[fixed(1)])
    u, rep, _ = solve_elastic(pr, state(pr, 293.0), np.full(pr.V.n, 293.0), 0.0)
    assert np.array_equal(u, np.zeros(pr.W.n))


def p1_stress(mesh, u, E, nu, eps_t):
    """Cell stresses from a P1 displacement, via the affine fit on each tet."""
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    out = []
    U = u.reshape(-1, 3)
    for cell in mesh.cells:
        M = np.column_stack([np.ones(4), mesh.vertices[cell]])
        grad = np.linalg.solve(M, U[cell])[1:].T        # du_i/dx_j
        eps = 0.5 * (grad + grad.T) - eps_t * np.eye(3)
        out.append(2 * mu * eps + lam * np.trace(eps) * np.eye(3))
    return np.array(out)


@pytest.mark.parametrize("degree", [1, 2])
def test_free_thermal_expansion(degree):
    mesh = build_box_mesh(3, 3, 3)
    E, nu, alpha, dT = 2.1e11, 0.3, 1e-5, 200.0
    # symmetry planes x = 0, y = 0, z = 0 remove the rigid motions without restraint
    conds = [fixed(1, (0.0, None, None)), fixed(3, (None, 0.0, None)), fixed(5, (None, None, 0.0))]
    pr = problem(mesh, steel(alpha=alpha, E=E, nu=nu), conds, degree=degree,
                 settings=SolverSettings(elastic_rtol=1e-12))
    u, rep, _ = solve_elastic(pr, state(pr, 293.0), np.full(pr.V.n, 293.0 + dT), 0.0)
    X = pr.W.dofmap.node_coords
    exact = (alpha * dT * X).ravel()
    assert np.abs(u - exact).max() <= 1e-8 * np.abs(exact).max()
    sig = p1_stress(mesh, u[:3 * mesh.n_vertices], E, nu, alpha * dT)
    assert np.linalg.norm(sig, axis=(1, 2)).max() <= 1e-6 * E


def test_pressure_reaction_resultant(cube48):
    p = 3.5e6
    pr = problem(cube48, conditions=[fixed(1), BoundaryCondition(2, "pressure", p=C(p))],
                 settings=SolverSettings(elastic_rtol=1e-12))
    T = np.full(pr.V.n, 293.0)
    u, _, _ = solve_elastic(pr, state(pr, 293.0), T, 0.0)
    K, f = assemble_elastic(pr, T, 0.0)
    # traction p n on the x = 1 face (unit area, n = +x)
    applied = f.reshape(-1, 3).sum(axis=0)
    assert np.allclose(applied, [p, 0.0, 0.0], rtol=1e-12, atol=1e-12 * p)
    reactions = (K @ u - f).reshape(-1, 3)
    nodes = np.unique(cube48.tagged_facets()[0][cube48.tagged_facets()[1] == 1])
    R = reactions[nodes].sum(axis=0)
    assert np.allclose(R + applied, 0.0, atol=1e-8 * p)


def test_translation_invariance(cube48):
    shift = (1e-3, -2e-3, 5e-4)
    out = []
    for s in ((0.0, 0.0, 0.0), shift):
        pr = problem(cube48, conditions=[fixed(1, s), BoundaryCondition(2, "pressure", p=C(0.1))],
                     settings=SolverSettings(elastic_rtol=1e-13))
        u, _, _ = solve_elastic(pr, state(pr, 293.0), np.full(pr.V.n, 350.0), 0.0)
        out.append(u.reshape(-1, 3))
    assert np.abs(out[1] - out[0] - np.array(shift)).max() <= 1e-10


def test_insufficient_constraints_named(cube48):
    pr = problem(cube48, conditions=[fixed(1, (0.0, None, None))])
    with pytest.raises(ConstraintError, match="translation y") as err:
        solve_elastic(pr, state(pr, 293.0), np.full(pr.V.n, 300.0), 0.0)
    assert "rotation about x" in str(err.value)
    assert "translation x" not in str(err.value)


def test_no_constraints_named(cube48):
    pr = problem(cube48, conditions=[robin(1, 1.0, 300.0)])
    with pytest.raises(ConstraintError, match="6 rigid body mode"):
        solve_elastic(pr, state(pr, 293.0), np.full(pr.V.n, 300.0), 0.0)


# ---------------------------------------------------------------- coupling and conservation


@given(seed=st.integers(0, 1000))
def test_one_way_coupling_bitwise(seed):
    rng = np.random.default_rng(seed)
    mesh = build_box_mesh(2, 2, 2)
    pr = problem(mesh, nonlinear_table(), [robin(1, 5.0, 600.0), fixed(2)])
    st_ = initial_state(pr, 293.0)
    ctrl = TimeController(dt=2.0)
    T1, _, _ = newton_thermal(pr, st_, controller=ctrl)
    st_.u = rng.standard_normal(pr.W.n)
    T2, _, _ = newton_thermal(pr, st_, controller=ctrl)
    assert np.array_equal(T1, T2)


def p1_heat_content(mesh, T):
    """Integral of a P1 field: each vertex value weighted by a quarter cell volume."""
    p = mesh.vertices[mesh.cells]
    vol = np.abs(np.linalg.det(p[:, 1:] - p[:, :1])) / 6.0
    return float(np.sum(vol[:, None] / 4.0 * T[mesh.cells]))


def test_energy_conserved_insulated():
    mesh = build_box_mesh(3, 3, 3)
    pr = problem(mesh, steel(kappa=2.0, cv=3.0, rho=1.5),
                 [robin(1, 0.0, 1000.0), fixed(2)],
                 settings=SolverSettings(newton_rtol=1e-12))
    st_ = initial_state(pr, lambda x: 300.0 + 100.0 * x[..., 0] * x[..., 1] + 50.0 * x[..., 2])
    ctrl = TimeController(dt=0.05, dT_max=1e3)
    new, _ = advance_transient(pr, st_, ctrl)
    e0, e1 = p1_heat_content(mesh, st_.T), p1_heat_content(mesh, new.T)
    assert not np.allclose(st_.T, new.T)
    assert abs(e1 - e0) <= 1e-10 * abs(e0)


# ---------------------------------------------------------------- time stepping


def test_dt_fixed_point_and_formula():
    ctrl = TimeController(dT_max=10.0, eps=0.8)
    assert ctrl.next_dt(1.0, 8.0) == 1.0
    assert ctrl.next_dt(1.0, 4.0) == 2.0
    assert TimeController(dt_max=1.5).next_dt(1.0, 4.0) == 1.5
    assert TimeController().next_dt(1.0, 0.0) == 2.0


def uniform_heating(rate, mesh=None):
    mesh = mesh or build_box_mesh(2, 2, 2)
    return problem(mesh, steel(), [robin(1, 0.0, 293.0), fixed(1)],
                   source=lambda x, t: rate + 0 * x[..., 0])


def test_step_rejection_and_retry():
    pr = uniform_heating(20.0)
    ctrl = TimeController(dt=1.0, dT_max=10.0, eps=0.8)
    new, rep = advance_transient(pr, initial_state(pr, 293.0), ctrl)
    assert rep.rejections >= 1
    assert any("rejected dt = 1 s" in ev for ev in rep.events)
    assert rep.dt == 0.5 ** rep.rejections
    assert rep.max_change <= 10.0
    assert new.t == rep.dt
    assert ctrl.dt == pytest.approx(0.8 * 10.0 / rep.max_change * rep.dt)


def test_step_accepted_at_fixed_point():
    pr = uniform_heating(8.0)
    ctrl = TimeController(dt=1.0, dT_max=10.0, eps=0.8)
    _, rep = advance_transient(pr, initial_state(pr, 293.0), ctrl)
    assert rep.rejections == 0
    assert rep.max_change == pytest.approx(8.0, rel=1e-9)
    assert ctrl.dt == pytest.approx(1.0, rel=1e-9)


def test_step_truncated_at_end_time():
    pr = uniform_heating(1.0)
    ctrl = TimeController(dt=3.0, t_end=2.0)
    new, rep = advance_transient(pr, initial_state(pr, 293.0), ctrl)
    assert rep.dt == 2.0 and new.t == 2.0
    with pytest.raises(ValueError, match="no time left"):
        advance_transient(pr, new, ctrl)


def test_retry_limit():
    pr = uniform_heating(1e4)
    ctrl = TimeController(dt=1.0, dT_max=10.0, max_halvings=3)
    with pytest.raises(StepRejectionError, match="rejected 4 times"):
        advance_transient(pr, initial_state(pr, 293.0), ctrl)


def test_transient_accepted_steps_respect_cap():
    mesh = build_box_mesh(3, 3, 3)
    ramp = TimeFunction.parse([[0.0, 293.0], [50.0, 900.0]])
    pr = problem(mesh, nonlinear_table(),
                 [BoundaryCondition(1, "robin", beta=C(50.0), T_bc=ramp), fixed(1)])
    ctrl = TimeController(dt=5.0, dT_max=10.0, t_end=60.0)
    final, reports = run_transient(pr, initial_state(pr, 293.0), ctrl)
    assert final.t == pytest.approx(60.0)
    assert all(r.max_change <= 10.0 for r in reports)
    assert sum(r.elastic_rebuild for r in reports) == 1
    assert final.elastic_builds == 1


# ---------------------------------------------------------------- preconditioner policy


def report(last, rejections=0, thermal_rebuilds=0):
    return StepReport(1, 1.0, 1.0, 1.0, 1.0, rejections, 1, last, last, 5, thermal_rebuilds,
                      False, 0.0, 0.0)


def test_policy_definitions():
    st_ = State(0.0, np.zeros(1), np.zeros(3), elastic_pc=object(), thermal_pc=object())
    st_.thermal_history = [10, 10, 10, 10, 10, 10]
    assert not preconditioner_policy(st_, report(10)).thermal
    st_.thermal_history = [10, 10, 10, 10, 10, 16]
    d = preconditioner_policy(st_, report(16))
    assert d.thermal and "spike" in d.reason and not d.elastic
    st_.thermal_history = [10, 10, 10, 10, 10, 15]
    assert not preconditioner_policy(st_, report(15)).thermal
    assert preconditioner_policy(st_, report(10, rejections=1)).thermal
    assert not preconditioner_policy(st_, report(10, rejections=1, thermal_rebuilds=1)).thermal


def test_forced_spike_gives_one_rebuild():
    mesh = build_box_mesh(3, 3, 3)
    pr = problem(mesh, nonlinear_table(), [robin(1, 20.0, 500.0), fixed(1)])
    ctrl = TimeController(dt=1.0, dT_max=500.0)
    st_, reps = run_transient(pr, initial_state(pr, 293.0), ctrl, max_steps=3)
    assert [r.thermal_rebuilds for r in reps] == [1, 0, 0]
    # synthetic spike in the last recorded thermal solve
    st_.thermal_history[-1] = 10 * max(st_.thermal_history[:-1])
    fake = report(st_.thermal_history[-1])
    decision = preconditioner_policy(st_, fake)
    assert decision.thermal
    st_.rebuild_thermal = decision.thermal
    st_, rep = advance_transient(pr, st_, ctrl)
    assert rep.thermal_rebuilds == 1
    assert any(f"step {rep.step}: thermal preconditioner rebuilt" in e for e in rep.events)
    st_, rep = advance_transient(pr, st_, ctrl)
    assert rep.thermal_rebuilds == 0
    assert st_.elastic_builds == 1


def test_step_record_fields():
    pr = uniform_heating(1.0)
    _, rep = advance_transient(pr, initial_state(pr, 293.0), TimeController())
    rec = rep.record()
    assert list(rec)[:5] == ["step", "t", "dt", "next_dt", "max_dT"]
    assert rec["elastic_rebuild"] is True


# ---------------------------------------------------------------- steady driver


def test_coupled_steady_order_and_timing():
    mesh = build_box_mesh(4, 4, 4)
    pr = problem(mesh, nonlinear_table(), [robin(1, 20.0, 300.0), robin(2, 20.0, 500.0), fixed(1)])
    res = coupled_steady_solve(pr, 400.0)
    assert res.order == ["thermal", "elastic"]
    assert res.thermal.converged
    phases = res.timing.phases
    assert "thermal solve" in phases and "elastic solve" in phases
    assert all(res.timing.seconds(p) >= 0 for p in phases)
    assert res.timing.total() >= 0.95 * res.wall
    # the elastic solve used the converged temperature
    u_ref, _, _ = solve_elastic(pr, state(pr, 400.0), res.T, 0.0)
    assert np.allclose(res.u, u_ref, rtol=1e-6, atol=1e-6 * np.abs(u_ref).max())


def test_problem_rejects_missing_material(cube):
    with pytest.raises(MaterialError):
        problem(cube, MaterialTable({5: MaterialRegion.constant(1e-5, 1.0, 1.0, 1.0, 1.0, 0.3)}))
    with pytest.raises(ValueError, match="robin_convention"):
        problem(cube, robin_convention="up")


def test_gain_convention_flips_boundary_term(cube48):
    loss = problem(cube48, conditions=[robin(1, 5.0, 300.0)])
    gain = problem(cube48, conditions=[robin(1, 5.0, 300.0)], robin_convention="gain")
    T = np.full(loss.V.n, 350.0)
    F1, _ = assemble_thermal(loss, state(loss, 0.0), T)
    F2, _ = assemble_thermal(gain, state(gain, 0.0), T)
    assert np.allclose(F1, -F2)
    # with T > T_bc the loss convention removes heat: the residual is positive
    assert F1.sum() == pytest.approx(5.0 * 50.0)
