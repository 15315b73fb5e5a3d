"""Run configuration: INI files read with :mod:`configparser`.

Recognized sections and keys (all optional, defaults in parentheses)::

    [mesh]      n (8)
    [time]      dt (0.02)  T (1.0)
    [reg]       eps (0.05)  -- a comma-separated list is a sweep
                root_tol (1e-13)  quad_points (32)
    [material]  E nu E_v nu_v c1 k_bond k_gap latent w_s kernel_rho
    [scenario]  preset (benchmark)  body_force traction heating chi0 theta0 theta_s0 t_ramp
    [output]    dir (out)  stride (10)
    [tol]       tol_mom tol_chi tol_theta tol_outer max_outer omega halvings
                friction_method energy_slack dissipation_slack
    [run]       seed (0)  jobs (1)

Unknown sections or keys raise :class:`ConfigError`.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .physics import MaterialModel, default_material, validate_hypotheses
from .presets import PRESETS, make_scenario, preset_material_overrides
from .regularization import RegularizationParams
from .solvers import SolverSettings

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "DEFAULT_CONFIG_TEXT"]


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


MATERIAL_KEYS = ("E", "nu", "E_v", "nu_v", "c1", "k_bond", "k_gap", "latent", "w_s", "kernel_rho")
SCENARIO_KEYS = ("body_force", "traction", "heating", "chi0", "theta0", "theta_s0", "t_ramp")
TOL_FLOAT = ("tol_mom", "tol_chi", "tol_theta", "tol_outer", "omega", "energy_slack", "dissipation_slack")
TOL_INT = ("max_outer", "halvings")

SCHEMA = {
    "mesh": {"n"},
    "time": {"dt", "T"},
    "reg": {"eps", "root_tol", "quad_points"},
    "material": set(MATERIAL_KEYS),
    "scenario": {"preset", *SCENARIO_KEYS},
    "output": {"dir", "stride"},
    "tol": {*TOL_FLOAT, *TOL_INT, "friction_method"},
    "run": {"seed", "jobs"},
}

DEFAULT_CONFIG_TEXT = """\
[mesh]
n = 8

[time]
dt = 0.02
T = 1.0

[reg]
eps = 0.05

[scenario]
preset = benchmark

[output]
dir = out
stride = 10
"""


@dataclass(frozen=True)
class RunConfig:
    n: int = 8
    dt: float = 0.02
    T: float = 1.0
    eps: tuple = (0.05,)
    root_tol: float = 1e-13
    quad_points: int = 32
    material: dict = field(default_factory=dict)
    preset: str = "benchmark"
    scenario: dict = field(default_factory=dict)
    out_dir: str = "out"
    stride: int = 10
    settings: SolverSettings = field(default_factory=SolverSettings)
    energy_slack: float = 1e-8
    dissipation_slack: float = 1e-10
    seed: int = 0
    jobs: int = 1

    def reg(self, eps: float | None = None) -> RegularizationParams:
        return RegularizationParams(eps=self.eps[0] if eps is None else float(eps), root_tol=self.root_tol,
                                    quad_points=self.quad_points)

    def build_material(self) -> MaterialModel:
        params = {**preset_material_overrides(self.preset), **self.material}
        return default_material(**params)

    def build_scenario(self):
        return make_scenario(self.preset, T_final=self.T, dt=self.dt, **self.scenario)


def _num(section, key, raw, kind=float):
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (E vs e)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from exc
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        extra = set(cp[sec]) - SCHEMA[sec]
        if extra:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(extra)}")
    kw = {}
    g = lambda s, k: cp.get(s, k) if cp.has_option(s, k) else None
    if (v := g("mesh", "n")) is not None:
        kw["n"] = _num("mesh", "n", v, int)
    if (v := g("time", "dt")) is not None:
        kw["dt"] = _num("time", "dt", v)
    if (v := g("time", "T")) is not None:
        kw["T"] = _num("time", "T", v)
    if (v := g("reg", "eps")) is not None:
        kw["eps"] = tuple(_num("reg", "eps", p.strip()) for p in v.split(",") if p.strip())
        if not kw["eps"]:
            raise ConfigError("[reg] eps is empty")
    if (v := g("reg", "root_tol")) is not None:
        kw["root_tol"] = _num("reg", "root_tol", v)
    if (v := g("reg", "quad_points")) is not None:
        kw["quad_points"] = _num("reg", "quad_points", v, int)
    if cp.has_section("material"):
        kw["material"] = {k: _num("material", k, cp["material"][k]) for k in cp["material"]}
    if cp.has_section("scenario"):
        sec = cp["scenario"]
        if "preset" in sec:
            kw["preset"] = sec["preset"].strip()
        kw["scenario"] = {k: _num("scenario", k, sec[k]) for k in sec if k != "preset"}
    if (v := g("output", "dir")) is not None:
        kw["out_dir"] = v.strip()
    if (v := g("output", "stride")) is not None:
        kw["stride"] = _num("output", "stride", v, int)
    if cp.has_section("tol"):
        sec = cp["tol"]
        sk = {}
        for k in sec:
            if k in ("energy_slack", "dissipation_slack"):
                kw[k] = _num("tol", k, sec[k])
            elif k in TOL_INT:
                sk[k] = _num("tol", k, sec[k], int)
            elif k == "friction_method":
                sk[k] = sec[k].strip()
            else:
                sk[k] = _num("tol", k, sec[k])
        try:
            kw["settings"] = SolverSettings(**sk)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[tol]: {exc}") from exc
    if (v := g("run", "seed")) is not None:
        kw["seed"] = _num("run", "seed", v, int)
    if (v := g("run", "jobs")) is not None:
        kw["jobs"] = _num("run", "jobs", v, int)
    cfg = RunConfig(**kw)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    """Re-check every positivity and structural constraint; raises :class:`ConfigError`."""
    if cfg.n < 2:
        raise ConfigError("[mesh] n must be at least 2")
    if not (cfg.dt > 0 and cfg.T > 0 and cfg.dt <= cfg.T):
        raise ConfigError("[time] need 0 < dt <= T")
    if any(not e > 0 for e in cfg.eps):
        raise ConfigError("[reg] eps values must be positive")
    if cfg.stride < 1:
        raise ConfigError("[output] stride must be positive")
    if cfg.jobs < 1:
        raise ConfigError("[run] jobs must be positive")
    if cfg.energy_slack < 0 or cfg.dissipation_slack < 0:
        raise ConfigError("[tol] slacks must be nonnegative")
    if cfg.preset not in PRESETS:
        raise ConfigError(f"[scenario] unknown preset {cfg.preset!r}; choose from {sorted(PRESETS)}")
    try:
        cfg.reg()
        material = cfg.build_material()
        scenario = cfg.build_scenario()
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    report = validate_hypotheses(material)
    if not report.passed:
        bad = ", ".join(f"{c.name} ({c.detail})" for c in report.failures())
        raise ConfigError(f"material violates structural assumptions: {bad}")
    from .discretization import build_unit_square_mesh

    problems = scenario.validate_initial_data(build_unit_square_mesh(cfg.n))
    if problems:
        raise ConfigError("; ".join(problems))


def load_config(path) -> RunConfig:
    if path is None:
        return parse_config(DEFAULT_CONFIG_TEXT, "<defaults>")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))


def config_fields():
    return [f.name for f in fields(RunConfig)]
