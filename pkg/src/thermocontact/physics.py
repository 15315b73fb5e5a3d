"""Constitutive layer: material tensors, scalar nonlinearities, data, and dissipation.

Scalar nonlinearities are stored as vectorized callables on :class:`MaterialModel`
together with their derivatives, because the solvers need the derivatives for
Newton steps and the diagnostics need them for chain-rule bookkeeping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

__all__ = [
    "isotropic_plane_strain",
    "default_friction_coeff",
    "default_friction_coeff_prime",
    "default_cohesion_sigma",
    "MaterialModel",
    "default_material",
    "Scenario",
    "HypothesisCheck",
    "HypothesisReport",
    "validate_hypotheses",
    "ellipticity_constant",
    "dissipation_density",
    "DissipationDensity",
]


def isotropic_plane_strain(E: float, nu: float) -> np.ndarray:
    """Voigt matrix of an isotropic material in plane strain (engineering shear)."""
    if not (E > 0 and -1.0 < nu < 0.5):
        raise ValueError(f"invalid isotropic parameters E={E}, nu={nu}")
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


def default_friction_coeff(x, c1: float = 0.5):
    """``x arctan x - ln(1 + x^2)/2 + c1``; its derivative is ``arctan x``."""
    x = np.asarray(x, dtype=float)
    return x * np.arctan(x) - 0.5 * np.log1p(x * x) + c1


def default_friction_coeff_prime(x):
    return np.arctan(np.asarray(x, dtype=float))


def default_cohesion_sigma(chi, w_s: float = 1.0):
    """Linear cohesion potential ``w_s (1 - chi)``."""
    return w_s * (1.0 - np.asarray(chi, dtype=float))


def _const(value):
    return lambda x: np.full(np.shape(x), float(value))


@dataclass(frozen=True, eq=False)
class MaterialModel:
    """Material data.

    The callables must be vectorized over numpy arrays. ``k`` is the heat
    exchange coefficient as a function of the adhesion field, ``friction`` the
    temperature-dependent friction coefficient, ``lam`` the latent-heat
    function and ``sigma`` the cohesion potential.
    """

    K_e: np.ndarray
    K_v: np.ndarray
    c1: float
    c2: float
    friction: Callable
    friction_prime: Callable
    k: Callable
    lam: Callable
    lam_prime: Callable
    sigma: Callable
    sigma_prime: Callable
    w_s: float = 1.0
    kernel_rho: float = 0.25
    w_dir: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    c_N: float = 1.0
    c_T: float = 1.0
    kappa_s: float = 1.0
    params: dict = field(default_factory=dict)

    def with_tensors(self, K_e=None, K_v=None) -> "MaterialModel":
        return replace(self, K_e=self.K_e if K_e is None else np.asarray(K_e, float),
                       K_v=self.K_v if K_v is None else np.asarray(K_v, float))


def default_material(
    E: float = 1.0,
    nu: float = 0.3,
    E_v: float = 0.5,
    nu_v: float = 0.3,
    c1: float = 0.5,
    k_bond: float = 1.0,
    k_gap: float = 0.1,
    latent: float = 0.5,
    w_s: float = 1.0,
    kernel_rho: float = 0.25,
) -> MaterialModel:
    """Default constitutive choices.

    * heat exchange ``k(chi) = k_gap + k_bond chi^2 / (1 + chi^2)``: smooth,
      positive, Lipschitz, and increasing with the bonded fraction,
    * latent heat ``lam(chi) = latent * chi``,
    * cohesion ``sigma(chi) = w_s (1 - chi)``.
    """
    if k_gap < 0 or k_bond < 0:
        raise ValueError("heat exchange coefficients must be nonnegative")
    if kernel_rho <= 0:
        raise ValueError(f"kernel width must be positive, got {kernel_rho}")

    def k(chi):
        chi = np.asarray(chi, dtype=float)
        return k_gap + k_bond * chi * chi / (1.0 + chi * chi)

    return MaterialModel(
        K_e=isotropic_plane_strain(E, nu),
        K_v=isotropic_plane_strain(E_v, nu_v),
        c1=c1,
        c2=math.pi / 2,
        friction=lambda x: default_friction_coeff(x, c1),
        friction_prime=default_friction_coeff_prime,
        k=k,
        lam=lambda chi: latent * np.asarray(chi, dtype=float),
        lam_prime=_const(latent),
        sigma=lambda chi: default_cohesion_sigma(chi, w_s),
        sigma_prime=_const(-w_s),
        w_s=w_s,
        kernel_rho=kernel_rho,
        params=dict(E=E, nu=nu, E_v=E_v, nu_v=nu_v, c1=c1, k_bond=k_bond, k_gap=k_gap,
                    latent=latent, w_s=w_s, kernel_rho=kernel_rho),
    )


@dataclass(frozen=True, eq=False)
class Scenario:
    """Loads, initial data and time horizon.

    Spatial data are callables of nodal coordinates: ``h(xy, t) -> (N,)``,
    ``f(xy, t) -> (N, 2)`` (body force), ``g(xy, t) -> (N, 2)`` (traction,
    integrated over the lateral sides only). Initial data take ``xy`` for bulk
    fields and the contact abscissa ``x`` for surface fields. ``theta_ref`` is
    the stress-free temperature: the thermal stress of a uniform
    ``theta_ref`` is balanced by the load so that rest is an equilibrium.
    """

    name: str
    h: Callable
    f: Callable
    g: Callable
    theta0: Callable
    theta_s0: Callable
    u0: Callable
    chi0: Callable
    T_final: float
    dt: float
    theta_ref: float = 1.0

    def __post_init__(self):
        if not self.dt > 0 or not self.T_final > 0:
            raise ValueError("time step and horizon must be positive")
        if self.dt > self.T_final:
            raise ValueError("time step exceeds the horizon")

    @property
    def n_steps(self) -> int:
        return int(round(self.T_final / self.dt))

    def validate_initial_data(self, mesh, tol: float = 0.0) -> list:
        """Return a list of violated requirements (empty when admissible)."""
        xy = mesh.nodes
        sx = mesh.nodes[mesh.surface_nodes, 0]
        problems = []
        chi0 = np.asarray(self.chi0(sx), float)
        if np.any(chi0 < -tol) or np.any(chi0 > 1 + tol):
            problems.append("initial adhesion must lie in [0, 1]")
        u0 = np.asarray(self.u0(xy), float)
        if np.any(-u0[mesh.surface_nodes, 1] > tol):
            problems.append("initial displacement penetrates the support")
        if np.any(np.asarray(self.theta0(xy)) <= 0):
            problems.append("initial bulk temperature must be positive")
        if np.any(np.asarray(self.theta_s0(sx)) <= 0):
            problems.append("initial surface temperature must be positive")
        if self.theta_ref <= 0:
            problems.append("reference temperature must be positive")
        return problems


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    passed: bool
    detail: str = ""
    witness: tuple | None = None


@dataclass(frozen=True)
class HypothesisReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def ellipticity_constant(C: np.ndarray, samples: int = 2000, seed: int = 0) -> float:
    """Sampled ``min xi:C:xi / |xi|^2`` over symmetric 2x2 strains.

    Voigt vectors carry ``2 e_xy``, so ``|xi|^2 = e_xx^2 + e_yy^2 + 2 e_xy^2``.
    """
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((samples, 3))
    energy = np.einsum("si,ij,sj->s", xi, C, xi)
    norm2 = xi[:, 0] ** 2 + xi[:, 1] ** 2 + 0.5 * xi[:, 2] ** 2
    return float(np.min(energy / norm2))


def _lipschitz_estimate(fn, lo, hi, samples, rng):
    a = rng.uniform(lo, hi, samples)
    b = rng.uniform(lo, hi, samples)
    keep = np.abs(a - b) > 1e-9
    a, b = a[keep], b[keep]
    q = np.abs(np.asarray(fn(a)) - np.asarray(fn(b))) / np.abs(a - b)
    i = int(np.argmax(q))
    return float(q[i]), (float(a[i]), float(b[i]))


def validate_hypotheses(material: MaterialModel, samples: int = 4001, seed: int = 0,
                        lip_bound: float = 1e6, span: float = 50.0) -> HypothesisReport:
    """Sample-based check of the structural assumptions on the material data."""
    rng = np.random.default_rng(seed)
    checks = []
    x = np.linspace(-span, span, samples)

    fc = np.asarray(material.friction(x))
    fcp = np.asarray(material.friction_prime(x))
    i = int(np.argmin(fc))
    checks.append(HypothesisCheck("friction_positive", bool(material.c1 > 0 and fc[i] >= material.c1 - 1e-12),
                                  f"min={fc[i]:.6g}, c1={material.c1}", (float(x[i]),)))
    i = int(np.argmax(np.abs(fcp)))
    checks.append(HypothesisCheck("friction_slope_bounded", bool(np.abs(fcp[i]) <= material.c2 + 1e-12),
                                  f"max|slope|={abs(fcp[i]):.6g}, c2={material.c2:.6g}", (float(x[i]),)))
    sign = fcp * x
    i = int(np.argmin(sign))
    checks.append(HypothesisCheck("friction_slope_sign", bool(sign[i] >= -1e-14), f"min x*slope={sign[i]:.3g}", (float(x[i]),)))
    # consistency of the derivative callable with the coefficient itself
    hstep = 1e-5
    fd = (np.asarray(material.friction(x + hstep)) - np.asarray(material.friction(x - hstep))) / (2 * hstep)
    err = np.abs(fd - fcp)
    i = int(np.argmax(err))
    checks.append(HypothesisCheck("friction_derivative_consistent", bool(err[i] <= 1e-5 * max(1.0, abs(fcp[i]))),
                                  f"max mismatch={err[i]:.3g}", (float(x[i]),)))

    for name, C in (("elastic_tensor", material.K_e), ("viscous_tensor", material.K_v)):
        C = np.asarray(C, float)
        sym = bool(np.allclose(C, C.T))
        alpha = ellipticity_constant(C, seed=seed)
        checks.append(HypothesisCheck(name, sym and alpha > 0, f"symmetric={sym}, alpha0={alpha:.6g}"))

    chi = np.linspace(-span, span, samples)
    kv = np.asarray(material.k(chi))
    i = int(np.argmin(kv))
    checks.append(HypothesisCheck("exchange_nonnegative", bool(kv[i] >= 0), f"min k={kv[i]:.6g}", (float(chi[i]),)))
    L, w = _lipschitz_estimate(material.k, -span, span, samples, rng)
    checks.append(HypothesisCheck("exchange_lipschitz", L <= lip_bound, f"L~{L:.6g}", w))
    for name, fn in (("latent_slope_lipschitz", material.lam_prime), ("cohesion_slope_lipschitz", material.sigma_prime)):
        L, w = _lipschitz_estimate(fn, -span, span, samples, rng)
        checks.append(HypothesisCheck(name, L <= lip_bound, f"L~{L:.6g}", w))
    checks.append(HypothesisCheck("kernel_width", bool(material.kernel_rho > 0), f"rho={material.kernel_rho}"))
    return HypothesisReport(tuple(checks))


@dataclass(frozen=True)
class DissipationDensity:
    """Pointwise dissipation: per bulk triangle and per contact node."""

    bulk: np.ndarray
    surface: np.ndarray

    @property
    def minimum(self) -> float:
        return float(min(self.bulk.min(initial=np.inf), self.surface.min(initial=np.inf)))


def dissipation_density(forms, material: MaterialModel, *, theta, theta_s, du_dt, dchi_dt,
                        R_mag, chi, dut_dt=None) -> DissipationDensity:
    """Bulk and surface dissipation densities of one discrete step.

    Bulk, per triangle: ``e(u_t):K_v:e(u_t) + |grad theta|^2``.
    Surface, per contact node: ``F(x) x + (chi_t)^2 + |grad theta_s|^2`` with
    ``x = theta - theta_s`` and ``F(x) = k(chi) x + friction'(x) |R| |u_t,T|``;
    the surface gradient term is averaged over the adjacent segments.
    """
    from .discretization import _strain_matrices, element_geometry

    mesh = forms.mesh
    _, grads = element_geometry(mesh.nodes, mesh.triangles)
    B = _strain_matrices(grads)
    tris = mesh.triangles
    v = np.asarray(du_dt, float).reshape(-1, 2)
    v_loc = np.empty((len(tris), 6))
    v_loc[:, 0::2] = v[tris, 0]
    v_loc[:, 1::2] = v[tris, 1]
    strain = np.einsum("tri,ti->tr", B, v_loc)
    visc = np.einsum("tr,rs,ts->t", strain, np.asarray(material.K_v, float), strain)
    gth = np.einsum("tkc,tk->tc", grads, np.asarray(theta, float)[tris])
    bulk = visc + np.sum(gth ** 2, axis=1)

    sn = mesh.surface_nodes
    xgap = np.asarray(theta, float)[sn] - np.asarray(theta_s, float)
    if dut_dt is None:
        dut_dt = v[sn, 0]
    slip = np.abs(np.asarray(dut_dt, float))
    surf = (np.asarray(material.k(chi)) * xgap * xgap
            + np.asarray(material.friction_prime(xgap)) * xgap * np.abs(R_mag) * slip
            + np.asarray(dchi_dt, float) ** 2)
    seg = (np.diff(np.asarray(theta_s, float)) / np.diff(forms.surface_x)) ** 2
    grad_nodal = np.zeros_like(surf)
    count = np.zeros_like(surf)
    grad_nodal[:-1] += seg
    grad_nodal[1:] += seg
    count[:-1] += 1
    count[1:] += 1
    surf = surf + grad_nodal / np.maximum(count, 1)
    return DissipationDensity(bulk=bulk, surface=surf)
