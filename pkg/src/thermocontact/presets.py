"""Named scenario library.

Each preset is a pair of a :class:`~thermocontact.physics.Scenario` factory and
default material overrides. Amplitudes can be overridden by keyword.
Loads are switched on with the smooth ramp ``(1 - cos(pi min(t/T_r, 1)))/2`` so
that the discrete solution is smooth in time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .physics import Scenario

__all__ = ["PRESETS", "PresetSpec", "make_scenario", "preset_material_overrides", "ramp"]


def ramp(t: float, t_ramp: float) -> float:
    if t_ramp <= 0:
        return 1.0
    return 0.5 * (1.0 - math.cos(math.pi * min(t / t_ramp, 1.0)))


@dataclass(frozen=True)
class PresetSpec:
    name: str
    description: str
    defaults: dict
    material: dict


PRESETS = {
    "zero": PresetSpec(
        "zero", "no loads, uniform reference state; the solution must stay constant",
        dict(body_force=0.0, traction=0.0, heating=0.0, chi0=0.5, theta0=1.0, theta_s0=1.0, t_ramp=0.0),
        dict(w_s=0.0, latent=0.0),
    ),
    "traction-slip": PresetSpec(
        "traction-slip", "body pressed onto the support and sheared by a lateral traction pulse",
        dict(body_force=0.5, traction=0.6, heating=0.0, chi0=1.0, theta0=1.0, theta_s0=1.0, t_ramp=0.3,
             pulse=True),
        dict(w_s=1.0, latent=0.1),
    ),
    "thermal-debond": PresetSpec(
        "thermal-debond", "heating near the contact raises the surface temperature and drives adhesion down",
        dict(body_force=0.3, traction=0.0, heating=4.0, chi0=1.0, theta0=1.0, theta_s0=1.0, t_ramp=0.2),
        dict(w_s=0.2, latent=1.0),
    ),
    "benchmark": PresetSpec(
        "benchmark", "all couplings active: pressing, lateral shear, heating, latent and cohesive effects",
        dict(body_force=0.5, traction=0.4, heating=1.0, chi0=1.0, theta0=1.0, theta_s0=1.0, t_ramp=0.5),
        dict(w_s=1.0, latent=0.5, c1=0.5),
    ),
}


def preset_material_overrides(name: str) -> dict:
    return dict(PRESETS[_check(name)].material)


def _check(name):
    if name not in PRESETS:
        raise KeyError(f"unknown scenario preset {name!r}; choose from {sorted(PRESETS)}")
    return name


def make_scenario(name: str, T_final: float = 1.0, dt: float = 0.02, **amplitudes) -> Scenario:
    """Build a preset scenario; unknown amplitude names raise ``KeyError``."""
    spec = PRESETS[_check(name)]
    unknown = set(amplitudes) - set(spec.defaults)
    if unknown:
        raise KeyError(f"preset {name!r} has no parameters {sorted(unknown)}")
    p = {**spec.defaults, **amplitudes}
    tr = float(p["t_ramp"])
    fb, gt, hh = float(p["body_force"]), float(p["traction"]), float(p["heating"])
    pulse = bool(p.get("pulse", False))

    def time_profile(t):
        if pulse:
            # up, hold, then release so that slip is followed by stick
            return math.sin(math.pi * min(t / T_final, 1.0)) ** 2
        return ramp(t, tr)

    def f(xy, t):
        out = np.zeros((len(xy), 2))
        out[:, 1] = -fb * ramp(t, tr)
        return out

    def g(xy, t):
        out = np.zeros((len(xy), 2))
        out[np.isclose(xy[:, 0], 0.0), 0] = gt * time_profile(t)
        return out

    def h(xy, t):
        # source concentrated toward the contact edge
        return hh * ramp(t, tr) * np.exp(-3.0 * xy[:, 1])

    th0, ths0, chi0 = float(p["theta0"]), float(p["theta_s0"]), float(p["chi0"])
    return Scenario(
        name=name, h=h, f=f, g=g,
        theta0=lambda xy: np.full(len(xy), th0),
        theta_s0=lambda x: np.full(len(x), ths0),
        u0=lambda xy: np.zeros((len(xy), 2)),
        chi0=lambda x: np.full(len(x), chi0),
        T_final=float(T_final), dt=float(dt), theta_ref=1.0,
    )
