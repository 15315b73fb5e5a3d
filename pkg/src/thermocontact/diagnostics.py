"""Runtime verification: energy ledger, dissipation sign, contact and friction structure,
uniform-in-eps monitors and the eps-convergence study.

Energy ledger
-------------
Testing the momentum balance with ``u - u_old``, the adhesion equation with
``chi - chi_old`` and the two temperature equations with ``dt * theta`` and
``dt * theta_s`` and adding the results gives, per step, the exact identity

    dE + D + G = W + X + (tested residuals)

where ``E`` collects stored energies, ``D`` the seven dissipation terms, ``G``
nonnegative convexity gaps of implicit Euler, ``W`` the work of the data and
``X`` two explicit remainders (an adhesive cross term of order ``dt^2`` and,
for nonlinear latent heat, a chain-rule defect). The thermal-mechanical and
latent couplings cancel exactly. The energy inequality that is checked is
``E_n - E_0 + sum D <= sum (W + X) + slack``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import regularization as rg
from .discretization import AssembledForms
from .physics import MaterialModel, dissipation_density, validate_hypotheses

__all__ = [
    "ENERGY_TERMS",
    "DISSIPATION_TERMS",
    "GAP_TERMS",
    "DATA_TERMS",
    "REMAINDER_TERMS",
    "LEDGER_COLUMNS",
    "NONNEGATIVE_TERMS",
    "stored_energy",
    "step_ledger",
    "step_dissipation",
    "compute_ledger",
    "EnergyCheck",
    "energy_check",
    "dissipation_check",
    "signorini_residual",
    "coulomb_residual",
    "friction_structure_check",
    "estimate_monitors",
    "MONITOR_NAMES",
    "CauchyTable",
    "trajectory_distance",
    "state_distance",
    "eps_convergence_study",
    "monitor_bound_check",
]

ENERGY_TERMS = ("E_theta", "E_theta_s", "E_elastic", "E_adhesive", "E_penalty", "E_chi_grad", "E_constraint")
DISSIPATION_TERMS = ("D_grad_theta", "D_grad_theta_s", "D_exchange", "D_frictional_heating",
                     "D_viscous", "D_friction_work", "D_chi_rate")
GAP_TERMS = ("G_elastic", "G_penalty", "G_chi_grad", "G_constraint", "G_theta", "G_theta_s", "G_adhesive")
DATA_TERMS = ("W_load", "W_heat", "W_cohesion")
REMAINDER_TERMS = ("X_adhesive", "X_latent")
LEDGER_COLUMNS = ("step", "t") + ENERGY_TERMS + DISSIPATION_TERMS + GAP_TERMS + DATA_TERMS + REMAINDER_TERMS + (
    "X_residual_work", "lhs_cumulative", "rhs_cumulative", "margin", "slack")
NONNEGATIVE_TERMS = ENERGY_TERMS[:2] + ("E_elastic", "E_penalty", "E_chi_grad", "E_constraint") + DISSIPATION_TERMS + GAP_TERMS


def _surface_u(forms: AssembledForms, u):
    return np.asarray(u).reshape(-1, 2)[forms.mesh.surface_nodes]


def stored_energy(forms: AssembledForms, reg, state) -> dict:
    """Stored energy components of one state."""
    m, ms = forms.m_bulk, forms.m_surf
    us = _surface_u(forms, state.u)
    uN = -us[:, 1]
    return {
        "E_theta": float(m @ rg.I_eps(state.theta, reg)),
        "E_theta_s": float(ms @ rg.I_eps(state.theta_s, reg)),
        "E_elastic": 0.5 * float(state.u @ (forms.a_form @ state.u)),
        "E_adhesive": 0.5 * float(ms @ (state.chi * np.sum(us ** 2, axis=1))),
        "E_penalty": float(ms @ rg.phi_eps(uN, reg)),
        "E_chi_grad": 0.5 * float(state.chi @ (forms.A_surf @ state.chi)),
        "E_constraint": float(ms @ rg.beta_hat_eps(state.chi, reg)),
    }


def _increment_terms(forms: AssembledForms, material: MaterialModel, problem, old, new, dt) -> dict:
    from .solvers import equation_residuals

    reg = problem.reg
    m, ms = forms.m_bulk, forms.m_surf
    sn = forms.mesh.surface_nodes
    res = equation_residuals(problem, old, new, dt)
    R = res["R"]
    du = new.u - old.u
    dchi = new.chi - old.chi
    us, uso = _surface_u(forms, new.u), _surface_u(forms, old.u)
    dus = us - uso
    uN, uNo = -us[:, 1], -uso[:, 1]
    x = new.theta[sn] - new.theta_s
    fc = np.asarray(material.friction(x), float)
    fcp = np.asarray(material.friction_prime(x), float)
    dux = dus[:, 0]
    L, Lo = rg.L_eps(new.theta, reg), rg.L_eps(old.theta, reg)
    Ls, Lso = rg.L_eps(new.theta_s, reg), rg.L_eps(old.theta_s, reg)
    u2, u2o = np.sum(us ** 2, axis=1), np.sum(uso ** 2, axis=1)
    dlam = np.asarray(material.lam(new.chi)) - np.asarray(material.lam(old.chi))
    terms = {
        "D_grad_theta": dt * float(new.theta @ (forms.K_bulk @ new.theta)),
        "D_grad_theta_s": dt * float(new.theta_s @ (forms.A_surf @ new.theta_s)),
        "D_exchange": dt * float(ms @ (np.asarray(material.k(new.chi)) * x * x)),
        "D_frictional_heating": float(ms @ (fcp * x * R * np.abs(dux))),
        "D_viscous": float(du @ (forms.b_form @ du)) / dt,
        "D_friction_work": float(ms @ (fc * R * new.z * dux)),
        "D_chi_rate": float(ms @ dchi ** 2) / dt,
        "G_elastic": 0.5 * float(du @ (forms.a_form @ du)),
        "G_penalty": float(ms @ (rg.phi_eps_prime(uN, reg) * (uN - uNo) - (rg.phi_eps(uN, reg) - rg.phi_eps(uNo, reg)))),
        "G_chi_grad": 0.5 * float(dchi @ (forms.A_surf @ dchi)),
        "G_constraint": float(ms @ (rg.beta_eps(new.chi, reg) * dchi
                                    - (rg.beta_hat_eps(new.chi, reg) - rg.beta_hat_eps(old.chi, reg)))),
        "G_theta": float(m @ ((L - Lo) * new.theta - (rg.I_eps(new.theta, reg) - rg.I_eps(old.theta, reg)))),
        "G_theta_s": float(ms @ ((Ls - Lso) * new.theta_s - (rg.I_eps(new.theta_s, reg) - rg.I_eps(old.theta_s, reg)))),
        "G_adhesive": 0.5 * float(ms @ (np.maximum(new.chi, 0.0) * np.sum(dus ** 2, axis=1))),
        "W_load": float(res["F"] @ du),
        "W_heat": dt * float(new.theta @ res["Mh"]),
        "W_cohesion": -float(ms @ (np.asarray(material.sigma_prime(new.chi)) * dchi)),
        "X_adhesive": -0.5 * float(ms @ (dchi * (u2 - u2o))) - 0.5 * float(ms @ (np.minimum(new.chi, 0.0) * np.sum(dus ** 2, axis=1))),
        "X_latent": -float(ms @ (new.theta_s * (np.asarray(material.lam_prime(new.chi)) * dchi - dlam))),
        "X_residual_work": float(du @ res["momentum"] + dchi @ res["adhesion"]
                                 + dt * (new.theta @ res["theta"] + new.theta_s @ res["theta_s"])),
    }
    return terms


def step_ledger(forms: AssembledForms, material: MaterialModel, problem, substeps) -> dict:
    """Ledger terms of one nominal step (summed over its sub-steps).

    ``forms`` and ``material`` are explicit so that a ledger can be recomputed
    with altered operators, e.g. to confirm that a broken viscous tensor is
    flagged.
    """
    out = {}
    for old, new, dt in substeps:
        inc = _increment_terms(forms, material, problem, old, new, dt)
        for k, v in inc.items():
            out[k] = out.get(k, 0.0) + v
    out.update(stored_energy(forms, problem.reg, substeps[-1][1]))
    out["t"] = substeps[-1][1].t
    return out


def step_dissipation(forms: AssembledForms, material: MaterialModel, problem, substeps):
    """Minimum bulk/surface dissipation density over the sub-steps and the density scale."""
    bmin, smin, scale = np.inf, np.inf, 0.0
    for old, new, dt in substeps:
        vT = (new.u[2 * forms.mesh.surface_nodes] - old.u[2 * forms.mesh.surface_nodes]) / dt
        dd = dissipation_density(forms, material, theta=new.theta, theta_s=new.theta_s,
                                 du_dt=(new.u - old.u) / dt, dchi_dt=(new.chi - old.chi) / dt,
                                 R_mag=new.R_mag, chi=new.chi, dut_dt=vT)
        bmin = min(bmin, float(dd.bulk.min()))
        smin = min(smin, float(dd.surface.min()))
        scale = max(scale, float(np.abs(dd.bulk).max()), float(np.abs(dd.surface).max()))
    return bmin, smin, scale


def compute_ledger(trajectory, forms: AssembledForms | None = None, material: MaterialModel | None = None,
                   rel_slack: float = 1e-8) -> list:
    """Rows of the energy ledger, one per accepted step, including cumulative sides."""
    problem = trajectory.problem
    forms = forms or problem.forms
    material = material or problem.material
    E0 = stored_energy(forms, problem.reg, trajectory.states[0])
    E0_total = sum(E0.values())
    rows = []
    lhs_d = 0.0
    rhs = 0.0
    data_mag = abs(E0_total)
    for i, rep in enumerate(trajectory.reports):
        if rep.ledger is not None and forms is problem.forms and material is problem.material:
            row = dict(rep.ledger)
        else:
            row = step_ledger(forms, material, problem, rep.substeps)
        lhs_d += sum(row[k] for k in DISSIPATION_TERMS)
        rhs += sum(row[k] for k in DATA_TERMS + REMAINDER_TERMS)
        data_mag += sum(abs(row[k]) for k in DATA_TERMS)
        E = sum(row[k] for k in ENERGY_TERMS)
        row["step"] = i + 1
        row["lhs_cumulative"] = E - E0_total + lhs_d
        row["rhs_cumulative"] = rhs
        row["slack"] = rel_slack * max(1.0, data_mag)
        row["margin"] = row["rhs_cumulative"] + row["slack"] - row["lhs_cumulative"]
        rows.append(row)
    return rows


@dataclass
class EnergyCheck:
    passed: bool
    step_passed: list
    worst_margin: float
    negative_terms: list = field(default_factory=list)
    rows: list = field(default_factory=list)


def energy_check(trajectory, forms=None, material=None, rel_slack: float = 1e-8) -> EnergyCheck:
    """Per-step sign check of every theory-nonnegative term plus the cumulative inequality."""
    rows = compute_ledger(trajectory, forms, material, rel_slack)
    step_ok = []
    negatives = []
    worst = np.inf
    for row in rows:
        ok = row["margin"] >= 0.0
        for k in NONNEGATIVE_TERMS:
            if row[k] < -row["slack"]:
                ok = False
                negatives.append((row["step"], k, row[k]))
        step_ok.append(bool(ok))
        worst = min(worst, row["margin"])
    return EnergyCheck(all(step_ok), step_ok, float(worst if rows else 0.0), negatives, rows)


def dissipation_check(trajectory, rel_tol: float = 1e-10):
    """``(passed, worst normalized density)`` over all accepted steps."""
    worst = 0.0
    for rep in trajectory.reports:
        bmin, smin, scale = rep.dissipation_min if len(rep.dissipation_min) == 3 else (*rep.dissipation_min, 1.0)
        s = max(1.0, scale)
        worst = min(worst, bmin / s, smin / s)
    return worst >= -rel_tol, worst


def signorini_residual(state, forms: AssembledForms, reg):
    """Nodal max-norm residuals of the unilateral contact conditions.

    With normal compliance the recovered ``sigma_N + chi u_N`` equals
    ``-phi_eps'(u_N)``, so the sign residual ``r2`` vanishes identically and
    only the penetration ``r1`` and complementarity ``r3`` remain.
    """
    uN = -_surface_u(forms, state.u)[:, 1]
    pressure = -rg.phi_eps_prime(uN, reg)
    r1 = float(np.max(np.maximum(uN, 0.0), initial=0.0))
    r2 = float(np.max(np.maximum(pressure, 0.0), initial=0.0))
    r3 = float(np.max(np.abs(uN * pressure), initial=0.0))
    return r1, r2, r3


def coulomb_residual(state, forms: AssembledForms, dt: float, slip_tol: float = 1e-12):
    """Nodewise classification (``free``/``stick``/``slip``) and violation magnitude."""
    sn = forms.mesh.surface_nodes
    vT = (state.u[2 * sn] - state.u_prev[2 * sn]) / dt
    R = np.abs(state.R_mag)
    cases = np.where(R == 0.0, "free", np.where(np.abs(vT) > slip_tol, "slip", "stick"))
    viol = np.maximum(np.abs(state.mu) - R, 0.0)
    slip = cases == "slip"
    viol = np.where(slip, np.maximum(viol, np.abs(state.mu - R * np.sign(vT))), viol)
    return cases, viol


def friction_structure_check(trajectory, slip_tol: float = 1e-12) -> dict:
    """Worst values of the friction/contact structure quantities over a run."""
    forms = trajectory.problem.forms
    reg = trajectory.problem.reg
    out = {"max_abs_z": 0.0, "min_slip_abs_z": 1.0, "min_mu_vT": 0.0, "max_eta_tangential": 0.0,
           "max_r2": 0.0, "n_slip": 0, "n_stick": 0}
    for st, rep in zip(trajectory.states[1:], trajectory.reports):
        sn = forms.mesh.surface_nodes
        dt = st.t - rep.substeps[-1][0].t
        vT = (st.u[2 * sn] - rep.substeps[-1][0].u[2 * sn]) / dt
        out["max_abs_z"] = max(out["max_abs_z"], float(np.max(np.abs(st.z))))
        slip = (np.abs(vT) > slip_tol) & (st.R_mag > 0)
        out["n_slip"] += int(slip.sum())
        out["n_stick"] += int(((~slip) & (st.R_mag > 0)).sum())
        if slip.any():
            out["min_slip_abs_z"] = min(out["min_slip_abs_z"], float(np.min(np.abs(st.z[slip]))))
        out["min_mu_vT"] = min(out["min_mu_vT"], float(np.min(st.mu * vT)))
        eta_vec = np.outer(st.eta_n, forms.normal)
        out["max_eta_tangential"] = max(out["max_eta_tangential"], float(np.max(np.abs(eta_vec @ forms.tangent))))
        out["max_r2"] = max(out["max_r2"], signorini_residual(st, forms, reg)[1])
    return out


MONITOR_NAMES = ("sqrt_eps_theta_LinfL2", "theta_L2H1", "theta_LinfL1", "u_H1H1", "chi_LinfH1", "chi_rate_L2L2",
                 "eta_L2L2", "mu_LinfL2", "mu_Linf_nodal", "L_theta_LinfL2", "theta_BV", "theta_min", "theta_neg_L2")


def _l2(M, v):
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


def estimate_monitors(trajectory) -> dict:
    """Discrete surrogates of the uniform-in-eps a priori bounds, one value per family."""
    pr = trajectory.problem
    forms, reg = pr.forms, pr.reg
    M, K, Ms, As = forms.M_bulk, forms.K_bulk, forms.M_surf, forms.A_surf
    st = trajectory.states
    out = dict.fromkeys(MONITOR_NAMES, 0.0)
    out["theta_min"] = float(np.min(st[0].theta))
    for prev, cur in zip(st[:-1], st[1:]):
        dt = cur.t - prev.t
        th = cur.theta
        out["sqrt_eps_theta_LinfL2"] = max(out["sqrt_eps_theta_LinfL2"], np.sqrt(reg.eps) * _l2(M, th))
        out["theta_L2H1"] += dt * (_l2(M, th) ** 2 + float(th @ (K @ th)))
        out["theta_LinfL1"] = max(out["theta_LinfL1"], float(forms.m_bulk @ np.abs(th)))
        ux, uy = cur.u[0::2], cur.u[1::2]
        vx, vy = (cur.u[0::2] - prev.u[0::2]) / dt, (cur.u[1::2] - prev.u[1::2]) / dt
        h1 = lambda a: _l2(M, a) ** 2 + float(a @ (K @ a))
        out["u_H1H1"] += dt * (h1(ux) + h1(uy) + h1(vx) + h1(vy))
        out["chi_LinfH1"] = max(out["chi_LinfH1"], np.sqrt(_l2(Ms, cur.chi) ** 2 + float(cur.chi @ (As @ cur.chi))))
        out["chi_rate_L2L2"] += dt * _l2(Ms, (cur.chi - prev.chi) / dt) ** 2
        out["eta_L2L2"] += dt * _l2(Ms, cur.eta_n) ** 2
        out["mu_LinfL2"] = max(out["mu_LinfL2"], _l2(Ms, cur.mu))
        out["mu_Linf_nodal"] = max(out["mu_Linf_nodal"], float(np.max(np.abs(cur.mu))))
        out["L_theta_LinfL2"] = max(out["L_theta_LinfL2"], _l2(M, rg.L_eps(th, reg)))
        out["theta_BV"] += _l2(M, th - prev.theta)
        out["theta_min"] = min(out["theta_min"], float(th.min()))
        out["theta_neg_L2"] = max(out["theta_neg_L2"], _l2(M, np.minimum(th, 0.0)))
    for k in ("theta_L2H1", "u_H1H1", "chi_rate_L2L2", "eta_L2L2"):
        out[k] = float(np.sqrt(out[k]))
    return out


def monitor_bound_check(monitors_by_eps: dict, reference_eps: float, factor: float = 2.0,
                        families=None) -> dict:
    """Check that each nonnegative monitor family stays below ``factor`` times its reference value."""
    ref = monitors_by_eps[reference_eps]
    fams = families or [k for k in MONITOR_NAMES if k not in ("theta_min", "theta_neg_L2")]
    result = {}
    for k in fams:
        worst = max(mon[k] for mon in monitors_by_eps.values())
        bound = factor * ref[k] if ref[k] > 0 else 1e-12
        result[k] = (bool(worst <= bound), float(worst), float(ref[k]))
    return result


def trajectory_distance(ta, tb) -> float:
    """``L2(0,T; L2)`` for bulk and surface temperatures plus ``Linf(0,T; H1)`` for the displacement."""
    forms = ta.problem.forms
    M, K, Ms = forms.M_bulk, forms.K_bulk, forms.M_surf
    if len(ta.states) != len(tb.states):
        raise ValueError("trajectories have different lengths")
    d_th = d_ths = d_u = 0.0
    for k in range(1, len(ta.states)):
        a, b = ta.states[k], tb.states[k]
        dt = a.t - ta.states[k - 1].t
        d_th += dt * _l2(M, a.theta - b.theta) ** 2
        d_ths += dt * _l2(Ms, a.theta_s - b.theta_s) ** 2
        du = a.u - b.u
        h1 = sum(_l2(M, du[c::2]) ** 2 + float(du[c::2] @ (K @ du[c::2])) for c in (0, 1))
        d_u = max(d_u, np.sqrt(h1))
    return float(np.sqrt(d_th) + np.sqrt(d_ths) + d_u)


def state_distance(forms: AssembledForms, a, b) -> float:
    """Distance of two states: L2 for the temperatures and adhesion, H1 for the displacement."""
    M, K, Ms = forms.M_bulk, forms.K_bulk, forms.M_surf
    du = a.u - b.u
    h1 = sum(_l2(M, du[c::2]) ** 2 + float(du[c::2] @ (K @ du[c::2])) for c in (0, 1))
    return float(_l2(M, a.theta - b.theta) + _l2(Ms, a.theta_s - b.theta_s) + _l2(Ms, a.chi - b.chi)
                 + np.sqrt(h1))


@dataclass
class CauchyTable:
    eps: list
    distances: list
    monitors: dict
    valid: bool
    trend_ok: bool | None
    notes: list = field(default_factory=list)
    trajectories: dict = field(default_factory=dict)


def eps_convergence_study(scenario, eps_list, material, mesh, settings=None, keep_trajectories=False,
                          runner=None) -> CauchyTable:
    """Run the scenario for each ``eps`` and tabulate successive trajectory distances.

    A nonincreasing sequence of distances is the numerical trend expected as
    the regularization is removed. If the material data violate the
    structural assumptions the table is marked invalid and no trend is
    asserted.
    """
    from .solvers import run_simulation

    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 2:
        raise ValueError("need at least two regularization values")
    report = validate_hypotheses(material)
    notes = [f"hypothesis failed: {c.name} ({c.detail})" for c in report.failures()]
    run = runner or (lambda e: run_simulation(scenario, material, rg.RegularizationParams(eps=e), mesh, settings,
                                              with_ledger=False))
    trajs = {}
    for e in dict.fromkeys(eps_list):
        trajs[e] = run(e)
    failed = [e for e, t in trajs.items() if not t.completed]
    for e in failed:
        notes.append(f"run with eps={e} failed: {trajs[e].failure}")
    distances = []
    if not failed:
        distances = [trajectory_distance(trajs[a], trajs[b]) for a, b in zip(eps_list[:-1], eps_list[1:])]
    monitors = {e: estimate_monitors(t) for e, t in trajs.items() if t.completed}
    valid = report.passed and not failed
    trend = None
    if valid and len(distances) >= 2:
        trend = all(d1 <= d0 * (1 + 1e-12) + 1e-15 for d0, d1 in zip(distances[:-1], distances[1:]))
    elif valid:
        trend = True
    return CauchyTable(eps_list, distances, monitors, valid, trend, notes, trajs if keep_trajectories else {})
