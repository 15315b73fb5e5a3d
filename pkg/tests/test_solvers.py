import numpy as np
import pytest
import scipy.linalg
from dataclasses import replace

from thermocontact import regularization as rg
from thermocontact.discretization import build_unit_square_mesh
from thermocontact.physics import default_material
from thermocontact.presets import make_scenario, preset_material_overrides
from thermocontact.solvers import (CouplingError, SolverSettings, adhesion_step, build_problem, coupled_step,
                                   equation_residuals, heat_source, initial_state, load_vector, momentum_step,
                                   residual_norms, run_simulation, thermal_step)

from oracles import generic_scenario


def _problem(n=4, preset="zero", eps=0.05, material=None, settings=None, **amp):
    sc = make_scenario(preset, T_final=1.0, dt=0.05, **amp)
    mat = material or default_material(**preset_material_overrides(preset))
    return build_problem(build_unit_square_mesh(n), mat, eps, sc, settings)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(omega=0.0)
    with pytest.raises(ValueError):
        SolverSettings(friction_method="newton")
    with pytest.raises(ValueError):
        SolverSettings(tol_outer=0.0)


def test_reference_temperature_is_stress_free():
    pr = _problem()
    s0 = initial_state(pr)
    F = load_vector(pr, 0.5)
    res = momentum_step(pr, s0.u, s0.theta, s0.theta_s, s0.chi, np.zeros(pr.mesh.n_surface), 0.05, F)
    assert np.max(np.abs(res.u)) < 1e-14


def test_equilibrium_converges_in_one_outer_iteration():
    pr = _problem()
    s0 = initial_state(pr)
    s1, rep = coupled_step(pr, s0, 0.05)
    assert rep.outer_iters == 1
    assert np.allclose(s1.theta, s0.theta, atol=1e-14)
    assert np.allclose(s1.chi, s0.chi, atol=1e-14)
    assert np.max(np.abs(s1.u)) < 1e-14


def test_lifted_body_matches_dense_linear_solve():
    # pulling upward keeps the contact open, so the momentum step is linear
    pr = _problem(n=3)
    s0 = initial_state(pr)
    dt = 0.05
    F = load_vector(pr, 0.0)
    F[1::2] += 0.01 * pr.forms.m_bulk
    F[0::2] += 0.02 * pr.forms.m_bulk * pr.mesh.nodes[:, 1]
    F[pr.forms.fixed_dofs] = 0.0
    res = momentum_step(pr, s0.u, s0.theta, s0.theta_s, s0.chi, np.zeros(pr.mesh.n_surface), dt, F)
    K = (pr.forms.b_form / dt + pr.forms.a_form).toarray()
    sn = pr.mesh.surface_nodes
    K[2 * sn, 2 * sn] += pr.forms.m_surf * s0.chi
    K[2 * sn + 1, 2 * sn + 1] += pr.forms.m_surf * s0.chi
    f = pr.forms.free_dofs
    rhs = F + pr.forms.b_form @ s0.u / dt - pr.forms.D @ s0.theta
    u = np.zeros_like(F)
    u[f] = scipy.linalg.solve(K[np.ix_(f, f)], rhs[f])
    assert np.all(-u[2 * sn + 1] <= 0)
    assert np.allclose(res.u, u, atol=1e-13)


def _friction_setup(R_value, shear):
    pr = _problem(n=4, preset="traction-slip", traction=shear)
    s0 = initial_state(pr)
    F = load_vector(pr, 0.5)
    return pr, s0, F, np.full(pr.mesh.n_surface, R_value)


def test_large_friction_bound_sticks():
    pr, s0, F, R = _friction_setup(100.0, 0.3)
    res = momentum_step(pr, s0.u, s0.theta, s0.theta_s, s0.chi, R, 0.05, F)
    sn = pr.mesh.surface_nodes
    assert np.array_equal(res.u[2 * sn], s0.u[2 * sn])
    assert np.all(np.abs(res.z) < 1)


def test_small_friction_bound_slips():
    pr, s0, F, R = _friction_setup(1e-3, 0.6)
    res = momentum_step(pr, s0.u, s0.theta, s0.theta_s, s0.chi, R, 0.05, F)
    sn = pr.mesh.surface_nodes
    vT = res.u[2 * sn] - s0.u[2 * sn]
    assert np.all(vT > 0)
    assert np.array_equal(res.z, np.ones_like(res.z))


@pytest.mark.parametrize("R_value,shear", [(0.05, 0.3), (0.2, 0.6), (1.0, 0.6)])
def test_ssn_and_projection_agree(R_value, shear):
    pr, s0, F, R = _friction_setup(R_value, shear)
    a = momentum_step(pr, s0.u, s0.theta, s0.theta_s, s0.chi, R, 0.05, F, method="ssn")
    b = momentum_step(pr, s0.u, s0.theta, s0.theta_s, s0.chi, R, 0.05, F, method="uzawa")
    assert np.allclose(a.u, b.u, atol=1e-9)
    assert np.allclose(a.z, b.z, atol=1e-7)


def test_adhesion_relaxes_to_constraint_overshoot():
    # cohesion pushes chi above one; the penalty stops it at 1 + eps * w_s
    eps, w_s = 0.05, 2.0
    mat = default_material(w_s=w_s, latent=0.0)
    pr = _problem(material=mat, eps=eps)
    chi = np.full(pr.mesh.n_surface, 0.3)
    z = np.zeros(pr.mesh.n_surface)
    for _ in range(200):
        chi = adhesion_step(pr, chi, z, np.zeros(2 * pr.mesh.n_nodes), 1.0).chi
    assert np.allclose(chi, 1 + eps * w_s, atol=1e-10)


def test_adhesion_without_cohesion_is_stationary():
    mat = default_material(w_s=0.0, latent=0.0)
    pr = _problem(material=mat)
    chi0 = np.full(pr.mesh.n_surface, 0.7)
    res = adhesion_step(pr, chi0, np.zeros_like(chi0), np.zeros(2 * pr.mesh.n_nodes), 0.1)
    assert np.allclose(res.chi, chi0, atol=1e-14)
    assert res.iterations == 0


def test_displacement_damages_adhesion_more():
    mat = default_material(w_s=0.0, latent=0.0)
    pr = _problem(material=mat)
    chi0 = np.full(pr.mesh.n_surface, 0.8)
    th = np.zeros_like(chi0)
    small = np.zeros(2 * pr.mesh.n_nodes)
    small[2 * pr.mesh.surface_nodes] = 0.1
    chi_small = adhesion_step(pr, chi0, th, small, 0.1).chi
    chi_big = adhesion_step(pr, chi0, th, 3 * small, 0.1).chi
    assert np.all(chi_big < chi_small) and np.all(chi_small < chi0)


def test_thermal_constant_state_is_stationary():
    pr = _problem()
    s0 = initial_state(pr)
    S = pr.mesh.n_surface
    res = thermal_step(pr, s0.theta, s0.theta_s, s0.theta, s0.theta_s, s0.u, s0.u, s0.chi, s0.chi,
                       np.zeros(S), np.zeros(S), 0.1, np.zeros(pr.mesh.n_nodes))
    assert np.allclose(res.theta, s0.theta, atol=1e-14)
    assert np.allclose(res.theta_s, s0.theta_s, atol=1e-14)


def test_insulated_heating_raises_mean_entropy_by_source():
    mat = default_material(k_bond=0.0, k_gap=0.0, latent=0.0)
    pr = _problem(material=mat, preset="thermal-debond")
    s0 = initial_state(pr)
    S, dt = pr.mesh.n_surface, 0.1
    Mh = heat_source(pr, 1.0)
    res = thermal_step(pr, s0.theta, s0.theta_s, s0.theta, s0.theta_s, s0.u, s0.u, s0.chi, s0.chi,
                       np.zeros(S), np.zeros(S), dt, Mh)
    m = pr.forms.m_bulk
    gain = m @ (rg.L_eps(res.theta, pr.reg) - rg.L_eps(s0.theta, pr.reg))
    assert gain == pytest.approx(dt * Mh.sum(), rel=1e-9)
    assert np.allclose(res.theta_s, s0.theta_s)


def test_thermal_step_against_dense_newton():
    sc = generic_scenario()
    pr = build_problem(build_unit_square_mesh(2), default_material(), 0.05, sc)
    s0 = initial_state(pr)
    rng = np.random.default_rng(4)
    N, S = pr.mesh.n_nodes, pr.mesh.n_surface
    u_new = 0.01 * rng.standard_normal(2 * N)
    u_new[pr.forms.fixed_dofs] = 0.0
    chi_new = s0.chi - 0.05
    R, vT = rng.random(S), rng.standard_normal(S)
    dt = 0.05
    Mh = heat_source(pr, dt)
    out = thermal_step(pr, s0.theta, s0.theta_s, s0.theta, s0.theta_s, u_new, s0.u, s0.chi, chi_new, R, vT, dt, Mh)

    fm, mat, eps, sn = pr.forms, pr.material, 0.05, pr.mesh.surface_nodes
    gap = s0.theta[sn] - s0.theta_s
    src = mat.k(chi_new) * gap + np.arctan(gap) * R * np.abs(vT)
    K, D, A = fm.K_bulk.toarray(), fm.D.toarray(), fm.A_surf.toarray()

    def res(x):
        th, ths = x[:N], x[N:]
        rb = fm.m_bulk * (rg.L_eps(th, eps) - rg.L_eps(s0.theta, eps)) / dt + K @ th - D.T @ (u_new - s0.u) / dt - Mh
        rb[sn] += fm.m_surf * src
        rs = fm.m_surf * (rg.L_eps(ths, eps) - rg.L_eps(s0.theta_s, eps) - mat.lam(chi_new) + mat.lam(s0.chi)) / dt
        rs += A @ ths - fm.m_surf * src
        return np.concatenate([rb, rs])

    x = np.concatenate([s0.theta, s0.theta_s])
    for _ in range(50):
        r = res(x)
        if np.max(np.abs(r)) < 1e-14:
            break
        J = np.column_stack([(res(x + 1e-7 * e) - res(x - 1e-7 * e)) / 2e-7 for e in np.eye(len(x))])
        x = x - np.linalg.solve(J, r)
    assert np.allclose(out.theta, x[:N], atol=1e-10)
    assert np.allclose(out.theta_s, x[N:], atol=1e-10)


def test_converged_step_satisfies_all_equations():
    sc = generic_scenario()
    pr = build_problem(build_unit_square_mesh(4), default_material(), 0.05, sc)
    s0 = initial_state(pr)
    s1, rep = coupled_step(pr, s0, sc.dt)
    norms = residual_norms(pr, equation_residuals(pr, s0, s1, sc.dt))
    assert norms["momentum"] <= 1e-10 and norms["friction"] <= 1e-12
    assert norms["adhesion"] <= 1e-10 and norms["theta"] <= 1e-10 and norms["theta_s"] <= 1e-10
    assert rep.ledger is not None


def test_tighter_outer_tolerance_is_self_consistent():
    sc = generic_scenario()
    mesh = build_unit_square_mesh(4)
    runs = []
    for tol in (1e-8, 5e-9):
        pr = build_problem(mesh, default_material(), 0.05, sc, SolverSettings(tol_outer=tol))
        runs.append(coupled_step(pr, initial_state(pr), sc.dt)[0])
    a, b = runs
    assert np.max(np.abs(a.u - b.u)) < 1e-8
    assert np.max(np.abs(a.theta - b.theta)) < 1e-8
    assert np.max(np.abs(a.chi - b.chi)) < 1e-8


def test_relaxed_iteration_reaches_same_state():
    sc = generic_scenario()
    mesh = build_unit_square_mesh(3)
    states = []
    for omega in (1.0, 0.7):
        pr = build_problem(mesh, default_material(), 0.05, sc, SolverSettings(omega=omega))
        states.append(coupled_step(pr, initial_state(pr), sc.dt)[0])
    ref, alt = states
    assert np.max(np.abs(ref.u - alt.u)) < 1e-7


def test_failure_is_recorded_not_raised():
    sc = generic_scenario()
    settings = SolverSettings(max_outer=1, halvings=0)
    traj = run_simulation(sc, default_material(), 0.05, build_unit_square_mesh(2), settings)
    assert not traj.completed
    assert "t=0" in traj.failure
    assert len(traj.states) == 1
    with pytest.raises(CouplingError):
        pr = build_problem(build_unit_square_mesh(2), default_material(), 0.05, sc, settings)
        coupled_step(pr, initial_state(pr), sc.dt)


def test_run_reaches_horizon_and_keeps_contact_shallow():
    sc = make_scenario("benchmark", T_final=0.2, dt=0.02)
    traj = run_simulation(sc, default_material(**preset_material_overrides("benchmark")), 0.05,
                          build_unit_square_mesh(4))
    assert traj.completed and len(traj.states) == 11
    assert traj.final.t == pytest.approx(0.2)
    assert np.all(traj.final.theta > 0)
