"""History-dependent nonlocal friction bound.

For the normal contact traction ``eta`` the friction bound at a contact point is

    R(eta)(x, t) = ( int_0^t <eta(., s), l(x, .)> ds ) w

with a Gaussian kernel ``l(x, y) = exp(-|x - y|^2 / rho^2) n`` and a fixed unit
direction ``w``. Pairing the kernel with the normal direction means that a
purely normal traction ``eta = eta_n n`` yields a nonnegative history.

Discretely the surface pairing uses the lumped surface mass, so the kernel
matrix is ``W_ij = exp(-|x_i - x_j|^2 / rho^2) m_j`` and the time integral is a
rectangle rule whose newest slab is evaluated at the end of the step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["HistoryAccumulator", "kernel_matrix", "advance", "newest_slab", "eval_R", "eval_R_magnitude"]


@dataclass(frozen=True, eq=False)
class HistoryAccumulator:
    """Per-contact-node running value of the time integral, and the current time."""

    acc: np.ndarray
    t_now: float = 0.0

    @classmethod
    def zeros(cls, n_surface: int) -> "HistoryAccumulator":
        return cls(np.zeros(n_surface), 0.0)


def kernel_matrix(surface_x: np.ndarray, m_surf: np.ndarray, rho: float) -> np.ndarray:
    """Mass-weighted Gaussian kernel on the contact nodes."""
    if not rho > 0:
        raise ValueError(f"kernel width must be positive, got {rho}")
    x = np.asarray(surface_x, float)
    return np.exp(-((x[:, None] - x[None, :]) ** 2) / rho ** 2) * np.asarray(m_surf, float)[None, :]


def newest_slab(W: np.ndarray, eta_n: np.ndarray, dt: float) -> np.ndarray:
    return dt * (W @ np.asarray(eta_n, float))


def advance(hist: HistoryAccumulator, W: np.ndarray, eta_n: np.ndarray, dt: float) -> HistoryAccumulator:
    """Return the accumulator after one more slab of length ``dt`` with traction ``eta_n``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return HistoryAccumulator(hist.acc + newest_slab(W, eta_n, dt), hist.t_now + dt)


def eval_R(acc: np.ndarray, w_dir=(1.0, 0.0)) -> np.ndarray:
    """Vector friction bound ``acc_i * w`` at every contact node, shape ``(S, 2)``."""
    return np.outer(np.asarray(acc, float), np.asarray(w_dir, float))


def eval_R_magnitude(acc: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(acc, float))
