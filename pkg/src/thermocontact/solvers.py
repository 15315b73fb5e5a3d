"""Implicit-Euler time stepping of the regularized contact problem.

One time step is a Picard iteration over three sub-problems, each solved with
frozen data from the latest iterate:

1. momentum balance with normal-compliance contact and nonlocal friction,
   unknowns ``(u, z)`` with ``z`` the friction direction multiplier,
2. adhesion evolution, unknown ``chi``, driven by the new displacement,
3. bulk and surface temperature equations, which decouple once the exchange
   source is frozen.

All surface nonlinearities use the lumped surface mass ``m_s``. The history of
the friction bound is advanced once per accepted step with the converged
normal traction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import nonlocal_kernel as nk
from . import regularization as rg
from .discretization import AssembledForms, GAMMA_2, Mesh, assemble
from .physics import MaterialModel, Scenario

__all__ = [
    "SolverSettings",
    "Problem",
    "State",
    "StepReport",
    "Trajectory",
    "SolverError",
    "MomentumError",
    "AdhesionError",
    "ThermalError",
    "CouplingError",
    "MomentumResult",
    "AdhesionResult",
    "ThermalResult",
    "build_problem",
    "load_vector",
    "heat_source",
    "initial_state",
    "friction_bound",
    "momentum_step",
    "adhesion_step",
    "thermal_step",
    "exchange_source",
    "equation_residuals",
    "coupled_step",
    "run_simulation",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """A sub-solver or the coupling iteration failed."""


class MomentumError(SolverError):
    pass


class AdhesionError(SolverError):
    pass


class ThermalError(SolverError):
    pass


class CouplingError(SolverError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances and iteration budgets.

    Sub-solver residuals are measured nodewise after division by the lumped
    mass of the row, so they approximate strong-form residuals.
    """

    tol_mom: float = 1e-10
    tol_chi: float = 1e-10
    tol_theta: float = 1e-10
    tol_outer: float = 1e-8
    max_outer: int = 100
    max_newton: int = 60
    max_active_set: int = 60
    omega: float = 1.0
    halvings: int = 4
    friction_method: str = "ssn"
    uzawa_max: int = 20000
    uzawa_step: float = 0.5

    def __post_init__(self):
        for name in ("tol_mom", "tol_chi", "tol_theta", "tol_outer"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.omega <= 1:
            raise ValueError("relaxation factor must lie in (0, 1]")
        if self.friction_method not in ("ssn", "uzawa"):
            raise ValueError(f"unknown friction method {self.friction_method!r}")
        if self.max_outer < 1 or self.halvings < 0:
            raise ValueError("iteration budgets must be positive")


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything that stays fixed during a run."""

    forms: AssembledForms
    material: MaterialModel
    reg: rg.RegularizationParams
    scenario: Scenario
    settings: SolverSettings
    W: np.ndarray

    @property
    def mesh(self) -> Mesh:
        return self.forms.mesh

    @property
    def eps(self) -> float:
        return self.reg.eps


def build_problem(mesh: Mesh, material: MaterialModel, reg, scenario: Scenario,
                  settings: SolverSettings | None = None) -> Problem:
    reg = reg if isinstance(reg, rg.RegularizationParams) else rg.RegularizationParams(eps=float(reg))
    forms = assemble(mesh, material)
    W = nk.kernel_matrix(forms.surface_x, forms.m_surf, material.kernel_rho)
    return Problem(forms, material, reg, scenario, settings or SolverSettings(), W)


def load_vector(problem: Problem, t: float) -> np.ndarray:
    """Right-hand side ``<F, v>``: body force, side tractions and thermal preload.

    The preload ``D theta_ref`` balances the thermal stress of the uniform
    reference temperature, so the body at rest with ``theta = theta_ref`` is
    in equilibrium.
    """
    forms, sc, mesh = problem.forms, problem.scenario, problem.mesh
    xy = mesh.nodes
    f = np.asarray(sc.f(xy, t), float).reshape(-1, 2)
    F = forms.M_vec @ f.ravel()
    g = np.asarray(sc.g(xy, t), float).reshape(-1, 2)
    for a, b in mesh.edges_with_tag(GAMMA_2):
        L = np.linalg.norm(xy[b] - xy[a])
        for c in range(2):
            F[2 * a + c] += L * (g[a, c] / 3 + g[b, c] / 6)
            F[2 * b + c] += L * (g[a, c] / 6 + g[b, c] / 3)
    F += forms.D @ np.full(mesh.n_nodes, sc.theta_ref)
    F[forms.fixed_dofs] = 0.0
    return F


def heat_source(problem: Problem, t: float) -> np.ndarray:
    """``M h(t)``, the consistent-mass load of the bulk entropy source."""
    h = np.asarray(problem.scenario.h(problem.mesh.nodes, t), float)
    return problem.forms.M_bulk @ h


@dataclass(frozen=True, eq=False)
class State:
    """All unknowns at one time level.

    ``eta_n`` is the normal contact traction magnitude (the traction itself is
    ``eta_n * n``), ``z`` the friction multiplier, ``mu = |R| z`` the
    friction traction per unit friction coefficient, ``xi = beta_eps(chi)``,
    and ``R_mag`` the friction bound used in the step that produced the state.
    """

    t: float
    theta: np.ndarray
    theta_s: np.ndarray
    u: np.ndarray
    u_prev: np.ndarray
    chi: np.ndarray
    eta_n: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    xi: np.ndarray
    hist: nk.HistoryAccumulator
    R_mag: np.ndarray

    def copy(self) -> "State":
        return replace(self, theta=self.theta.copy(), theta_s=self.theta_s.copy(), u=self.u.copy(),
                       u_prev=self.u_prev.copy(), chi=self.chi.copy(), eta_n=self.eta_n.copy(),
                       z=self.z.copy(), mu=self.mu.copy(), xi=self.xi.copy(), R_mag=self.R_mag.copy())


def initial_state(problem: Problem) -> State:
    sc, mesh = problem.scenario, problem.mesh
    problems = sc.validate_initial_data(mesh)
    if problems:
        raise ValueError("; ".join(problems))
    sx = problem.forms.surface_x
    u0 = np.asarray(sc.u0(mesh.nodes), float).reshape(-1, 2).ravel().copy()
    u0[problem.forms.fixed_dofs] = 0.0
    chi0 = np.asarray(sc.chi0(sx), float).copy()
    S = mesh.n_surface
    uN = -u0[2 * mesh.surface_nodes + 1]
    return State(
        t=0.0,
        theta=np.asarray(sc.theta0(mesh.nodes), float).copy(),
        theta_s=np.asarray(sc.theta_s0(sx), float).copy(),
        u=u0, u_prev=u0.copy(), chi=chi0,
        eta_n=rg.phi_eps_prime(uN, problem.reg),
        z=np.zeros(S), mu=np.zeros(S),
        xi=rg.beta_eps(chi0, problem.reg),
        hist=nk.HistoryAccumulator.zeros(S), R_mag=np.zeros(S),
    )


def friction_bound(problem: Problem, hist: nk.HistoryAccumulator, u: np.ndarray, dt: float) -> np.ndarray:
    """``|R|`` at the end of a step whose newest slab uses the normal traction of ``u``."""
    uN = -u[2 * problem.mesh.surface_nodes + 1]
    acc = hist.acc + nk.newest_slab(problem.W, rg.phi_eps_prime(uN, problem.reg), dt)
    return nk.eval_R_magnitude(acc)


# ---------------------------------------------------------------------------
# momentum balance with contact and friction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentumResult:
    u: np.ndarray
    eta_n: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    iterations: int
    residual: float
    complementarity: float


def _momentum_operator(problem: Problem, chi_hat, dt):
    forms = problem.forms
    S_nodes = problem.mesh.surface_nodes
    ms = forms.m_surf
    N2 = 2 * forms.n_nodes
    diag = np.zeros(N2)
    diag[2 * S_nodes] += ms * chi_hat
    diag[2 * S_nodes + 1] += ms * chi_hat
    return (forms.b_form / dt + forms.a_form + sp.diags(diag)).tocsr()


def momentum_residual(problem: Problem, u, u_old, theta_hat, chi_hat, R_mag, friction_coeff, z, dt, F):
    """Full-length residual of the discrete momentum balance (zero on clamped dofs)."""
    forms = problem.forms
    sn = problem.mesh.surface_nodes
    ms = forms.m_surf
    res = forms.b_form @ (u - u_old) / dt + forms.a_form @ u + forms.D @ theta_hat - F
    us = u.reshape(-1, 2)[sn]
    res[2 * sn] += ms * chi_hat * us[:, 0] + ms * friction_coeff * R_mag * z
    res[2 * sn + 1] += ms * chi_hat * us[:, 1] - ms * rg.phi_eps_prime(-us[:, 1], problem.reg)
    res[forms.fixed_dofs] = 0.0
    return res


def _vector_lumped_mass(forms):
    m = np.repeat(forms.m_bulk, 2)
    return m


def _scaled_norm(res, mass):
    return float(np.max(np.abs(res) / mass, initial=0.0))


def _friction_penalty(problem, friction_coeff, R_mag, dt, K):
    """Projection parameter ``r_i`` making ``z + r v`` dimensionless and well scaled."""
    sn = problem.mesh.surface_nodes
    g = problem.forms.m_surf * friction_coeff * R_mag
    kii = K.diagonal()[2 * sn]
    return g, kii * dt / np.maximum(g, 1e-300)


def momentum_step(problem: Problem, u_old, theta_hat, theta_s_hat, chi_hat, R_mag, dt, F,
                  z_init=None, u_init=None, method=None) -> MomentumResult:
    """Solve the momentum balance for frozen temperatures, adhesion and friction bound.

    ``method='ssn'`` (default) runs a primal-dual active set iteration on the
    normal-compliance kinks and the friction complementarity simultaneously,
    each iteration being one sparse linear solve. ``method='uzawa'``
    alternates a contact solve with frozen ``z`` and the projection update
    ``z <- P(z + r v_T)``.
    """
    method = method or problem.settings.friction_method
    sn = problem.mesh.surface_nodes
    friction_coeff = np.asarray(problem.material.friction(theta_hat[sn] - theta_s_hat), float)
    K = _momentum_operator(problem, chi_hat, dt)
    g, r = _friction_penalty(problem, friction_coeff, R_mag, dt, K)
    z = np.zeros(len(sn)) if z_init is None else np.clip(np.asarray(z_init, float), -1.0, 1.0)
    u = (u_old if u_init is None else u_init).copy()
    rhs0 = F + problem.forms.b_form @ u_old / dt - problem.forms.D @ theta_hat
    if method == "ssn":
        try:
            u, z, iters = _momentum_ssn(problem, K, rhs0, u, u_old, z, g, r, dt)
        except MomentumError:
            # the active set can cycle when stick and slip compete; the
            # projection iteration is slower but globally convergent
            log.debug("active set cycled, falling back to the projection iteration")
            u, z, iters = _momentum_uzawa(problem, K, rhs0, u, u_old, z, g, r, dt, tol=1e-9)
            try:
                u, z, extra = _momentum_ssn(problem, K, rhs0, u, u_old, z, g, r, dt)
            except MomentumError:
                u, z, extra = _momentum_uzawa(problem, K, rhs0, u, u_old, z, g, r, dt)
            iters += extra
    else:
        u, z, iters = _momentum_uzawa(problem, K, rhs0, u, u_old, z, g, r, dt)
    res = momentum_residual(problem, u, u_old, theta_hat, chi_hat, R_mag, friction_coeff, z, dt, F)
    rnorm = _scaled_norm(res, _vector_lumped_mass(problem.forms))
    vT = (u[2 * sn] - u_old[2 * sn]) / dt
    comp = _complementarity(z, vT, r, g)
    tol = problem.settings.tol_mom
    if not (rnorm <= tol * _load_scale(problem, F) and comp <= 1e-12):
        raise MomentumError(f"momentum solve stalled: residual {rnorm:.3e}, complementarity {comp:.3e}")
    eta_n = rg.phi_eps_prime(-u[2 * sn + 1], problem.reg)
    return MomentumResult(u, eta_n, z, R_mag * z, iters, rnorm, comp)


def _load_scale(problem, F):
    return max(1.0, _scaled_norm(F, _vector_lumped_mass(problem.forms)))


def _complementarity(z, vT, r, g):
    on = g > 0
    if not np.any(on):
        return 0.0
    q = z[on] + r[on] * vT[on]
    return float(np.max(np.abs(z[on] - np.clip(q, -1.0, 1.0)) / np.maximum(1.0, np.abs(q))))


def _momentum_ssn(problem, K, rhs0, u, u_old, z, g, r, dt):
    forms = problem.forms
    sn = problem.mesh.surface_nodes
    ms = forms.m_surf
    eps = problem.eps
    free = forms.free_dofs
    xdofs, ydofs = 2 * sn, 2 * sn + 1
    on = g > 0
    state_prev = None
    for it in range(1, problem.settings.max_active_set + 1):
        vT = (u[xdofs] - u_old[xdofs]) / dt
        q = z + r * vT
        slip = on & (np.abs(q) > 1.0)
        stick = on & ~slip
        s = np.sign(q)
        pen = -u[ydofs] > 0.0
        key = (slip.tobytes(), stick.tobytes(), pen.tobytes(), s[slip].tobytes())
        if key == state_prev:
            return u, z, it - 1
        state_prev = key

        diag = np.zeros(K.shape[0])
        diag[ydofs[pen]] = ms[pen] / eps
        Kt = (K + sp.diags(diag)).tocsr()
        rhs = rhs0.copy()
        rhs[xdofs[slip]] -= g[slip] * s[slip]
        fixed_x = xdofs[stick]
        unk = np.setdiff1d(free, fixed_x)
        u_new = np.zeros_like(u)
        u_new[fixed_x] = u_old[fixed_x]
        b = rhs[unk] - Kt[unk][:, fixed_x] @ u_new[fixed_x]
        u_new[unk] = spla.spsolve(Kt[unk][:, unk].tocsc(), b)
        z_new = z.copy()
        z_new[slip] = s[slip]
        if np.any(stick):
            row = rhs[fixed_x] - Kt[fixed_x] @ u_new
            z_new[stick] = row / g[stick]
        vT_new = (u_new[xdofs] - u_old[xdofs]) / dt
        off = ~on
        z_new[off] = np.where(vT_new[off] != 0.0, np.sign(vT_new[off]), np.clip(z[off], -1.0, 1.0))
        u, z = u_new, z_new
    raise MomentumError("active-set iteration did not settle; reduce the time step")


def _momentum_uzawa(problem, K, rhs0, u, u_old, z, g, r, dt, tol=1e-15):
    """Alternate a contact-only solve with a projected gradient step on the multiplier.

    The step is ``2 * uzawa_step / L`` where ``L`` is the Lipschitz constant of
    the dual gradient, computed from the tangential block of the inverse
    operator for the current normal contact set, so the iteration converges
    for any ``uzawa_step`` in ``(0, 1)``.
    """
    sn = problem.mesh.surface_nodes
    xdofs = 2 * sn
    on = g > 0
    frac = problem.settings.uzawa_step
    tau, pen_key = None, None
    for it in range(1, problem.settings.uzawa_max + 1):
        rhs = rhs0.copy()
        rhs[xdofs] -= g * z
        u = _contact_only_solve(problem, K, rhs, u)
        pen = (-u[xdofs + 1] > 0.0).tobytes()
        if pen != pen_key:
            pen_key = pen
            S = _tangential_compliance(problem, K, u)
            G = np.where(on, g, 0.0)
            lmax = float(np.max(np.linalg.eigvalsh(G[:, None] * S * G[None, :]), initial=0.0))
            tau = 2.0 * frac * dt / lmax if lmax > 0 else 0.0
        vT = (u[xdofs] - u_old[xdofs]) / dt
        z_new = z.copy()
        z_new[on] = np.clip(z[on] + tau * g[on] * vT[on], -1.0, 1.0)
        z_new[~on] = np.where(vT[~on] != 0.0, np.sign(vT[~on]), z[~on])
        change = float(np.max(np.abs(z_new - z), initial=0.0))
        z = z_new
        if change <= tol:
            rhs = rhs0.copy()
            rhs[xdofs] -= g * z
            u = _contact_only_solve(problem, K, rhs, u)
            return u, z, it
    raise MomentumError("projection iteration for the friction multiplier did not converge")


def _tangential_compliance(problem, K, u):
    """Block of the inverse operator coupling the tangential contact dofs."""
    forms = problem.forms
    sn = problem.mesh.surface_nodes
    free = forms.free_dofs
    ydofs = 2 * sn + 1
    pen = -u[ydofs] > 0.0
    diag = np.zeros(K.shape[0])
    diag[ydofs[pen]] = forms.m_surf[pen] / problem.eps
    Kff = (K + sp.diags(diag)).tocsr()[free][:, free].tocsc()
    pos = np.searchsorted(free, 2 * sn)
    E = np.zeros((len(free), len(sn)))
    E[pos, np.arange(len(sn))] = 1.0
    X = spla.splu(Kff).solve(E)
    S = X[pos, :]
    return 0.5 * (S + S.T)


def _contact_only_solve(problem, K, rhs, u):
    forms = problem.forms
    sn = problem.mesh.surface_nodes
    ydofs = 2 * sn + 1
    free = forms.free_dofs
    prev = None
    for _ in range(problem.settings.max_active_set):
        pen = -u[ydofs] > 0.0
        if prev is not None and np.array_equal(pen, prev):
            return u
        prev = pen
        diag = np.zeros(K.shape[0])
        diag[ydofs[pen]] = forms.m_surf[pen] / problem.eps
        Kt = (K + sp.diags(diag)).tocsr()
        u = np.zeros_like(u)
        u[free] = spla.spsolve(Kt[free][:, free].tocsc(), rhs[free])
    raise MomentumError("normal contact active set did not settle")


# ---------------------------------------------------------------------------
# adhesion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdhesionResult:
    chi: np.ndarray
    xi: np.ndarray
    iterations: int
    residual: float


def _derivative(fn, x, fd_step=1e-6):
    x = np.asarray(x, float)
    return (np.asarray(fn(x + fd_step)) - np.asarray(fn(x - fd_step))) / (2 * fd_step)


def adhesion_residual(problem: Problem, chi, chi_old, theta_s_hat, u_hat, dt):
    forms, mat = problem.forms, problem.material
    ms = forms.m_surf
    us = u_hat.reshape(-1, 2)[problem.mesh.surface_nodes]
    src = np.asarray(mat.sigma_prime(chi)) + np.asarray(mat.lam_prime(chi)) * theta_s_hat + 0.5 * np.sum(us ** 2, axis=1)
    return ms * (chi - chi_old) / dt + forms.A_surf @ chi + ms * (rg.beta_eps(chi, problem.reg) + src)


def adhesion_step(problem: Problem, chi_old, theta_s_hat, u_hat, dt, chi_init=None) -> AdhesionResult:
    """Newton iteration for the implicit adhesion equation with lumped surface mass."""
    forms, mat = problem.forms, problem.material
    ms = forms.m_surf
    chi = (chi_old if chi_init is None else chi_init).astype(float).copy()
    tol = problem.settings.tol_chi
    for it in range(problem.settings.max_newton + 1):
        res = adhesion_residual(problem, chi, chi_old, theta_s_hat, u_hat, dt)
        rn = _scaled_norm(res, ms)
        if rn <= tol:
            return AdhesionResult(chi, rg.beta_eps(chi, problem.reg), it, rn)
        d = (1.0 / dt + rg.beta_eps_prime(chi, problem.reg) + _derivative(mat.sigma_prime, chi)
             + _derivative(mat.lam_prime, chi) * theta_s_hat)
        J = (forms.A_surf + sp.diags(ms * d)).tocsc()
        chi = chi - spla.spsolve(J, res)
    raise AdhesionError(f"adhesion Newton did not converge (residual {rn:.3e})")


# ---------------------------------------------------------------------------
# temperatures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThermalResult:
    theta: np.ndarray
    theta_s: np.ndarray
    iterations: tuple
    residual: tuple


def exchange_source(problem: Problem, theta, theta_s, chi, R_mag, vT):
    """Heat flux density from body to contact surface, ``k(chi) x + friction'(x) |R| |v_T|``."""
    x = theta[problem.mesh.surface_nodes] - theta_s
    mat = problem.material
    return np.asarray(mat.k(chi)) * x + np.asarray(mat.friction_prime(x)) * R_mag * np.abs(vT)


def thermal_bulk_residual(problem, theta, theta_old, u, u_old, source, Mh, dt):
    forms = problem.forms
    res = forms.m_bulk * (rg.L_eps(theta, problem.reg) - rg.L_eps(theta_old, problem.reg)) / dt
    res += forms.K_bulk @ theta - forms.D.T @ (u - u_old) / dt - Mh
    res[problem.mesh.surface_nodes] += forms.m_surf * source
    return res


def thermal_surface_residual(problem, theta_s, theta_s_old, chi, chi_old, source, dt):
    forms, mat = problem.forms, problem.material
    ms = forms.m_surf
    res = ms * (rg.L_eps(theta_s, problem.reg) - rg.L_eps(theta_s_old, problem.reg)) / dt
    res -= ms * (np.asarray(mat.lam(chi)) - np.asarray(mat.lam(chi_old))) / dt
    res += forms.A_surf @ theta_s - ms * source
    return res


def _monotone_newton(residual, jac_diag, stiff, x0, mass, tol, max_iter, err_cls, label):
    x = x0.copy()
    r = residual(x)
    rn = _scaled_norm(r, mass)
    for it in range(max_iter + 1):
        if rn <= tol:
            return x, it, rn
        J = (stiff + sp.diags(jac_diag(x))).tocsc()
        dx = spla.spsolve(J, r)
        step = 1.0
        for _ in range(30):
            xt = x - step * dx
            rt = residual(xt)
            rtn = _scaled_norm(rt, mass)
            if rtn < rn or rtn <= tol:
                break
            step *= 0.5
        x, r, rn = xt, rt, rtn
    raise err_cls(f"{label} Newton did not converge (residual {rn:.3e})")


def thermal_step(problem: Problem, theta_old, theta_s_old, theta_hat, theta_s_hat, u_new, u_old,
                 chi_old, chi_new, R_mag, vT, dt, Mh, theta_init=None, theta_s_init=None) -> ThermalResult:
    """Solve both temperature equations with the exchange source frozen at the hatted iterate."""
    forms, reg = problem.forms, problem.reg
    st = problem.settings
    src = exchange_source(problem, theta_hat, theta_s_hat, chi_new, R_mag, vT)
    th, it_b, rb = _monotone_newton(
        lambda x: thermal_bulk_residual(problem, x, theta_old, u_new, u_old, src, Mh, dt),
        lambda x: forms.m_bulk * rg.L_eps_prime(x, reg) / dt,
        forms.K_bulk, theta_old if theta_init is None else theta_init, forms.m_bulk,
        st.tol_theta, st.max_newton, ThermalError, "bulk temperature")
    ths, it_s, rs = _monotone_newton(
        lambda x: thermal_surface_residual(problem, x, theta_s_old, chi_new, chi_old, src, dt),
        lambda x: forms.m_surf * rg.L_eps_prime(x, reg) / dt,
        forms.A_surf, theta_s_old if theta_s_init is None else theta_s_init, forms.m_surf,
        st.tol_theta, st.max_newton, ThermalError, "surface temperature")
    return ThermalResult(th, ths, (it_b, it_s), (rb, rs))


# ---------------------------------------------------------------------------
# coupling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepReport:
    """Audit trail of one nominal time step."""

    t: float
    dt: float
    outer_iters: int
    sub_iters: dict
    residuals: dict
    substeps: tuple = ()
    halvings: int = 0
    ledger: object = None
    dissipation_min: tuple = (np.nan, np.nan, np.nan)


def equation_residuals(problem: Problem, old: State, new: State, dt: float) -> dict:
    """Residual vectors of every discrete equation at one consistent pair of time levels.

    Everything is evaluated at ``new``: the friction bound from the new
    displacement, the exchange source from the new temperatures, and so on.
    """
    sn = problem.mesh.surface_nodes
    t1 = old.t + dt
    F = load_vector(problem, t1)
    Mh = heat_source(problem, t1)
    R = friction_bound(problem, old.hist, new.u, dt)
    fc = np.asarray(problem.material.friction(new.theta[sn] - new.theta_s), float)
    K = _momentum_operator(problem, new.chi, dt)
    g, r = _friction_penalty(problem, fc, R, dt, K)
    vT = (new.u[2 * sn] - old.u[2 * sn]) / dt
    src = exchange_source(problem, new.theta, new.theta_s, new.chi, R, vT)
    return {
        "momentum": momentum_residual(problem, new.u, old.u, new.theta, new.chi, R, fc, new.z, dt, F),
        "friction": _complementarity(new.z, vT, r, g),
        "adhesion": adhesion_residual(problem, new.chi, old.chi, new.theta_s, new.u, dt),
        "theta": thermal_bulk_residual(problem, new.theta, old.theta, new.u, old.u, src, Mh, dt),
        "theta_s": thermal_surface_residual(problem, new.theta_s, old.theta_s, new.chi, old.chi, src, dt),
        "F": F,
        "Mh": Mh,
        "R": R,
    }


def residual_norms(problem: Problem, res: dict) -> dict:
    forms = problem.forms
    return {
        "momentum": _scaled_norm(res["momentum"], _vector_lumped_mass(forms)) / _load_scale(problem, res["F"]),
        "friction": float(res["friction"]),
        "adhesion": _scaled_norm(res["adhesion"], forms.m_surf),
        "theta": _scaled_norm(res["theta"], forms.m_bulk),
        "theta_s": _scaled_norm(res["theta_s"], forms.m_surf),
    }


def _rel_change(new, old):
    return float(np.linalg.norm(new - old) / max(1.0, np.linalg.norm(new)))


def _picard(problem: Problem, state: State, dt: float):
    st = problem.settings
    sn = problem.mesh.surface_nodes
    t1 = state.t + dt
    F = load_vector(problem, t1)
    Mh = heat_source(problem, t1)
    th_hat, ths_hat, u_hat, chi_hat = state.theta, state.theta_s, state.u, state.chi
    z = state.z
    counts = {"momentum": 0, "adhesion": 0, "thermal": 0}
    res_tol = {"momentum": st.tol_mom, "friction": 1e-12, "adhesion": st.tol_chi, "theta": st.tol_theta, "theta_s": st.tol_theta}
    for k in range(1, st.max_outer + 1):
        R_hat = friction_bound(problem, state.hist, u_hat, dt)
        mom = momentum_step(problem, state.u, th_hat, ths_hat, chi_hat, R_hat, dt, F, z_init=z, u_init=u_hat)
        ad = adhesion_step(problem, state.chi, ths_hat, mom.u, dt, chi_init=chi_hat)
        R_new = friction_bound(problem, state.hist, mom.u, dt)
        vT = (mom.u[2 * sn] - state.u[2 * sn]) / dt
        th = thermal_step(problem, state.theta, state.theta_s, th_hat, ths_hat, mom.u, state.u,
                          state.chi, ad.chi, R_new, vT, dt, Mh, theta_init=th_hat, theta_s_init=ths_hat)
        counts["momentum"] += mom.iterations
        counts["adhesion"] += ad.iterations
        counts["thermal"] += sum(th.iterations)
        w = st.omega
        upd = max(_rel_change(mom.u, u_hat), _rel_change(ad.chi, chi_hat),
                  _rel_change(th.theta, th_hat), _rel_change(th.theta_s, ths_hat))
        if w < 1.0:
            u_next = w * mom.u + (1 - w) * u_hat
            chi_next = w * ad.chi + (1 - w) * chi_hat
            th_next = w * th.theta + (1 - w) * th_hat
            ths_next = w * th.theta_s + (1 - w) * ths_hat
        else:
            u_next, chi_next, th_next, ths_next = mom.u, ad.chi, th.theta, th.theta_s
        z = mom.z
        if not np.all(np.isfinite(u_next)) or not np.all(np.isfinite(th_next)):
            raise CouplingError("non-finite iterate")
        if upd <= st.tol_outer:
            cand = _assemble_state(problem, state, dt, mom.u, mom.z, ad.chi, th.theta, th.theta_s)
            norms = residual_norms(problem, equation_residuals(problem, state, cand, dt))
            if all(norms[key] <= res_tol[key] for key in res_tol):
                return cand, k, counts, norms, upd
        th_hat, ths_hat, u_hat, chi_hat = th_next, ths_next, u_next, chi_next
    raise CouplingError(f"fixed-point iteration did not converge in {st.max_outer} iterations (last update {upd:.3e})")


def _assemble_state(problem, old: State, dt, u, z, chi, theta, theta_s) -> State:
    sn = problem.mesh.surface_nodes
    uN = -u[2 * sn + 1]
    eta_n = rg.phi_eps_prime(uN, problem.reg)
    hist = nk.advance(old.hist, problem.W, eta_n, dt)
    R = nk.eval_R_magnitude(hist.acc)
    return State(
        t=old.t + dt, theta=theta, theta_s=theta_s, u=u, u_prev=old.u, chi=chi,
        eta_n=eta_n, z=z, mu=R * z, xi=rg.beta_eps(chi, problem.reg), hist=hist, R_mag=R,
    )


def _step_with_halving(problem, state, dt, level, pieces):
    try:
        new, k, counts, norms, upd = _picard(problem, state, dt)
        pieces.append((state, new, dt, k, counts, norms))
        return new, level
    except SolverError as exc:
        if level >= problem.settings.halvings:
            raise
        log.info("step at t=%.6g with dt=%.3g failed (%s); halving", state.t, dt, exc)
        mid, l1 = _step_with_halving(problem, state, 0.5 * dt, level + 1, pieces)
        end, l2 = _step_with_halving(problem, mid, 0.5 * dt, level + 1, pieces)
        return end, max(l1, l2)


def coupled_step(problem: Problem, state: State, dt: float, with_ledger: bool = True):
    """Advance one nominal step, retrying with halved sub-steps on failure.

    Returns ``(new_state, StepReport)``. The report carries the ledger and
    dissipation minima when ``with_ledger`` is set.
    """
    pieces = []
    new, level = _step_with_halving(problem, state, dt, 0, pieces)
    counts = {"momentum": 0, "adhesion": 0, "thermal": 0}
    worst = {}
    outer = 0
    for _, _, _, k, c, norms in pieces:
        outer += k
        for key in counts:
            counts[key] += c[key]
        for key, val in norms.items():
            worst[key] = max(worst.get(key, 0.0), val)
    substeps = tuple((a, b, h) for a, b, h, *_ in pieces)
    ledger = None
    dmin = (np.nan, np.nan, np.nan)
    if with_ledger:
        from .diagnostics import step_dissipation, step_ledger

        ledger = step_ledger(problem.forms, problem.material, problem, substeps)
        dmin = step_dissipation(problem.forms, problem.material, problem, substeps)
    return new, StepReport(t=new.t, dt=dt, outer_iters=outer, sub_iters=counts, residuals=worst,
                           substeps=substeps, halvings=level, ledger=ledger, dissipation_min=dmin)


@dataclass
class Trajectory:
    """Accepted nominal steps of a run."""

    problem: Problem
    states: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    failure: str | None = None

    @property
    def completed(self) -> bool:
        return self.failure is None

    @property
    def final(self) -> State:
        return self.states[-1]


def run_simulation(scenario: Scenario, material: MaterialModel, reg, mesh: Mesh,
                   settings: SolverSettings | None = None, with_ledger: bool = True,
                   n_steps: int | None = None) -> Trajectory:
    """Integrate from the initial data to ``scenario.T_final`` with fixed nominal steps.

    A hard failure stops the run and is recorded in ``Trajectory.failure``;
    the states accepted so far are kept.
    """
    problem = build_problem(mesh, material, reg, scenario, settings)
    state = initial_state(problem)
    traj = Trajectory(problem, [state], [])
    steps = scenario.n_steps if n_steps is None else int(n_steps)
    for _ in range(steps):
        try:
            state, report = coupled_step(problem, state, scenario.dt, with_ledger=with_ledger)
        except SolverError as exc:
            traj.failure = f"t={state.t:.6g}: {exc}"
            log.error("hard failure: %s", traj.failure)
            break
        traj.states.append(state)
        traj.reports.append(report)
    return traj
