"""Finite-element simulator for thermoviscoelastic adhesive contact with nonlocal friction."""

__version__ = "0.1.0"
