"""Yosida-type regularizations of the logarithm and of the two indicator constraints.

All functions accept scalars or numpy arrays and are vectorized. The resolvent of
``ln`` is the only nontrivial piece: every other quantity (``ln_eps``, its
derivative, ``L_eps``, ``I_eps``) is expressed through it.

The key identity used throughout is that for ``r = rho_eps(x)``

    x = r + eps * ln(r)      and      ln_eps(x) = (x - r) / eps = ln(r),

so parametrizing by ``t = ln(r)`` turns every inverse/integral into an explicit
expression in ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "RegularizationParams",
    "ResolventError",
    "resolvent_ln",
    "ln_eps",
    "ln_eps_prime",
    "L_eps",
    "L_eps_prime",
    "L_eps_inv",
    "I_eps",
    "I_eps_quad",
    "phi_eps",
    "phi_eps_prime",
    "phi_eps_second",
    "beta_eps",
    "beta_eps_prime",
    "beta_hat_eps",
    "Interval",
    "d_subdiff",
    "EPS_STAR",
]

#: Threshold below which the upper bound ``ln_eps'(x) <= 2/x`` is asserted.
EPS_STAR = 0.5

_MAX_ITER = 200


class ResolventError(RuntimeError):
    """Raised when the scalar root finder fails to converge."""


@dataclass(frozen=True)
class RegularizationParams:
    """Regularization parameter and scalar-solver settings.

    Parameters
    ----------
    eps : float
        Yosida parameter, strictly positive.
    root_tol : float
        Relative tolerance on the resolvent equation ``r + eps ln r = x``
        (scaled by ``max(1, |x|)``).
    quad_points : int
        Gauss-Legendre order used by :func:`I_eps_quad`.
    """

    eps: float = 0.05
    root_tol: float = 1e-13
    quad_points: int = 32

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.root_tol > 0:
            raise ValueError(f"root_tol must be positive, got {self.root_tol}")
        if int(self.quad_points) < 8:
            raise ValueError(f"quad_points must be >= 8, got {self.quad_points}")


def _as_params(p) -> RegularizationParams:
    if isinstance(p, RegularizationParams):
        return p
    return RegularizationParams(eps=float(p))


def _solve_monotone(x, coef_exp, coef_lin, params, start):
    """Solve ``coef_exp * exp(t) + coef_lin * t = x`` for ``t``.

    The left side is convex and strictly increasing in ``t``. Newton iterates
    started to the right of the root decrease monotonically to it; a bracket is
    kept and bisection is used whenever a step would leave it.
    """
    x = np.asarray(x, dtype=float)
    t = np.array(start, dtype=float, copy=True)
    scale = np.maximum(1.0, np.abs(x))
    # g(hi) >= 0 by construction of ``start``; for t <= 0, g(t) <= coef_exp + coef_lin t - x
    hi = t.copy()
    lo = np.minimum(0.0, (x - coef_exp) / coef_lin) - 1.0
    for _ in range(_MAX_ITER):
        et = np.exp(t)
        g = coef_exp * et + coef_lin * t - x
        hi = np.where(g >= 0, t, hi)
        lo = np.where(g < 0, t, lo)
        step = g / (coef_exp * et + coef_lin)
        t_new = t - step
        outside = (t_new <= lo) | (t_new >= hi)
        t_new = np.where(outside & (g != 0), 0.5 * (lo + hi), t_new)
        done = np.abs(t_new - t) <= 4.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(t))
        t = t_new
        if np.all(done):
            break
    g = coef_exp * np.exp(t) + coef_lin * t - x
    if np.any(np.abs(g) > params.root_tol * scale * max(1.0, coef_exp)):
        bad = np.unravel_index(np.argmax(np.abs(g) / scale), np.shape(g)) if np.ndim(g) else ()
        raise ResolventError(f"resolvent did not converge at x={np.asarray(x)[bad]}, residual={np.abs(g)[bad]:.3e}")
    return t


def _log_resolvent(x, p):
    """``t = ln(rho_eps(x))``, i.e. the root of ``exp(t) + eps*t = x``."""
    p = _as_params(p)
    x = np.asarray(x, dtype=float)
    # g(ln x) = eps ln x >= 0 for x >= 1, g(0) = 1 - x >= 0 for x <= 1
    start = np.where(x > 1.0, np.log(np.maximum(x, 1.0)), 0.0)
    return _solve_monotone(x, 1.0, p.eps, p, start)


def _scalar_or_array(v, like):
    return float(v) if np.ndim(like) == 0 else v


def resolvent_ln(x, p):
    """Resolvent ``(Id + eps ln)^{-1}``: the ``r > 0`` with ``r + eps ln r = x``."""
    t = _log_resolvent(x, p)
    return _scalar_or_array(np.exp(t), x)


def ln_eps(x, p):
    """Yosida regularization of ``ln``; equals ``ln(resolvent_ln(x))``."""
    return _scalar_or_array(_log_resolvent(x, p), x)


def ln_eps_prime(x, p):
    p = _as_params(p)
    r = np.exp(_log_resolvent(x, p))
    return _scalar_or_array(1.0 / (r + p.eps), x)


def L_eps(x, p):
    """Regularized logarithm ``eps*x + ln_eps(x)``."""
    p = _as_params(p)
    x_arr = np.asarray(x, dtype=float)
    return _scalar_or_array(p.eps * x_arr + _log_resolvent(x_arr, p), x)


def L_eps_prime(x, p):
    p = _as_params(p)
    r = np.exp(_log_resolvent(x, p))
    return _scalar_or_array(p.eps + 1.0 / (r + p.eps), x)


def L_eps_inv(y, p):
    """Inverse of :func:`L_eps`.

    With ``t = ln(rho)`` one has ``x = exp(t) + eps t`` and
    ``L_eps(x) = eps exp(t) + (1 + eps^2) t``, so the inverse is one more
    monotone scalar solve in ``t``.
    """
    p = _as_params(p)
    y_arr = np.asarray(y, dtype=float)
    a, b = p.eps, 1.0 + p.eps ** 2
    # g(t) = a e^t + b t - y; start where g >= 0
    start = np.log(np.maximum(y_arr / a, 1.0))
    t = _solve_monotone(y_arr, a, b, p, start)
    return _scalar_or_array(np.exp(t) + p.eps * t, y)


def _primitive_in_t(t, eps):
    # antiderivative of ln_eps(s) ds written in t = ln(rho(s)), ds = (e^t + eps) dt
    return (t - 1.0) * np.exp(t) + 0.5 * eps * t ** 2


def I_eps(x, p):
    """``I_eps(x) = int_0^x s L_eps'(s) ds`` in closed form.

    Integration by parts gives ``x L_eps(x) - int_0^x L_eps``, and the remaining
    integral of ``ln_eps`` is explicit in the variable ``t = ln(rho_eps(s))``.
    """
    p = _as_params(p)
    x_arr = np.asarray(x, dtype=float)
    tx = _log_resolvent(x_arr, p)
    t0 = _log_resolvent(0.0, p)
    Lx = p.eps * x_arr + tx
    val = x_arr * Lx - 0.5 * p.eps * x_arr ** 2 - (_primitive_in_t(tx, p.eps) - _primitive_in_t(t0, p.eps))
    return _scalar_or_array(val, x)


def I_eps_quad(x, p, order: int | None = None, panels: int = 8):
    """Composite Gauss-Legendre evaluation of ``I_eps``, independent of :func:`I_eps`.

    The integral is mapped to ``t = ln(rho_eps(s))`` where the integrand
    ``(e^t + eps t)(eps e^t + eps^2 + 1)`` is smooth. Each integration range is
    split into ``panels`` equal pieces, with extra breakpoints at unit spacing
    in ``|t| <= 30`` where the exponential varies; outside that window the
    integrand is numerically a polynomial and Gauss rules are exact.
    """
    p = _as_params(p)
    order = int(order or p.quad_points)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    tx = np.atleast_1d(_log_resolvent(x_arr, p))
    t0 = float(_log_resolvent(0.0, p))
    out = np.empty_like(x_arr)
    eps = p.eps
    for k, t1 in enumerate(tx):
        lo, hi = min(t0, t1), max(t0, t1)
        inner = np.arange(-30.0, 31.0)
        edges = np.union1d(np.linspace(lo, hi, panels + 1), inner[(inner > lo) & (inner < hi)])
        if t1 < t0:
            edges = edges[::-1]
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            tt = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            et = np.exp(tt)
            f = (et + eps * tt) * (eps * et + eps ** 2 + 1.0)
            total += 0.5 * (b - a) * np.dot(weights, f)
        out[k] = total
    return float(out[0]) if np.ndim(x) == 0 else out


# --- indicator of (-inf, 0]: normal-compliance penalty ---------------------------

def phi_eps(x, p):
    p = _as_params(p)
    xp = np.maximum(np.asarray(x, dtype=float), 0.0)
    return _scalar_or_array(0.5 * xp ** 2 / p.eps, x)


def phi_eps_prime(x, p):
    """Yosida approximation of ``d I_{(-inf,0]}``: ``max(x, 0) / eps``."""
    p = _as_params(p)
    return _scalar_or_array(np.maximum(np.asarray(x, dtype=float), 0.0) / p.eps, x)


def phi_eps_second(x, p):
    """Generalized derivative of :func:`phi_eps_prime` (Newton slope)."""
    p = _as_params(p)
    return _scalar_or_array((np.asarray(x, dtype=float) > 0.0) / p.eps, x)


# --- indicator of [0, 1] ----------------------------------------------------------

def beta_eps(x, p):
    """Yosida approximation of ``d I_{[0,1]}``."""
    p = _as_params(p)
    x = np.asarray(x, dtype=float)
    return _scalar_or_array((np.minimum(x, 0.0) + np.maximum(x - 1.0, 0.0)) / p.eps, x)


def beta_eps_prime(x, p):
    p = _as_params(p)
    x = np.asarray(x, dtype=float)
    return _scalar_or_array(((x < 0.0) | (x > 1.0)) / p.eps, x)


def beta_hat_eps(x, p):
    """Moreau envelope of ``I_{[0,1]}`` (squared distance over ``2 eps``)."""
    p = _as_params(p)
    x = np.asarray(x, dtype=float)
    return _scalar_or_array((np.minimum(x, 0.0) ** 2 + np.maximum(x - 1.0, 0.0) ** 2) / (2.0 * p.eps), x)


# --- subdifferential of |v_T| ---------------------------------------------------

class Interval(NamedTuple):
    lo: float
    hi: float

    @property
    def is_singleton(self) -> bool:
        return self.lo == self.hi

    def __contains__(self, value) -> bool:
        return self.lo <= value <= self.hi


def d_subdiff(v_t: float) -> Interval:
    """Subdifferential of ``j(v) = |v_T|`` for a scalar tangential component."""
    if v_t > 0:
        return Interval(1.0, 1.0)
    if v_t < 0:
        return Interval(-1.0, -1.0)
    return Interval(-1.0, 1.0)
