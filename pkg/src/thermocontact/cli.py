"""Command-line driver.

Subcommands::

    thermocontact run        --config PATH [--out DIR] [--stride N] [--quiet]
    thermocontact sweep-eps  --config PATH [--out DIR] [--stride N] [--quiet] [--jobs N]
    thermocontact check      --config PATH [--quiet]

Exit codes: 0 success, 2 a mandatory check was flagged, 1 hard solver
failure, 64 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import io as tio
from .checks import run_property_suite
from .config import ConfigError, RunConfig, load_config
from .diagnostics import (compute_ledger, dissipation_check, eps_convergence_study, monitor_bound_check,
                          energy_check)
from .discretization import build_unit_square_mesh
from .solvers import Trajectory, build_problem, run_simulation

__all__ = ["main", "build_parser", "cmd_run", "cmd_sweep_eps", "cmd_check",
           "EXIT_OK", "EXIT_FAILURE", "EXIT_FLAGGED", "EXIT_CONFIG"]

EXIT_OK, EXIT_FAILURE, EXIT_FLAGGED, EXIT_CONFIG = 0, 1, 2, 64

log = logging.getLogger("thermocontact")


def _say(quiet, msg):
    if not quiet:
        print(msg)


def _out_dir(cfg: RunConfig, args) -> Path:
    return Path(args.out if getattr(args, "out", None) else cfg.out_dir)


def _stride(cfg: RunConfig, args) -> int:
    return args.stride if getattr(args, "stride", None) else cfg.stride


def _simulate(cfg: RunConfig, eps: float, with_ledger: bool = True) -> Trajectory:
    return run_simulation(cfg.build_scenario(), cfg.build_material(), cfg.reg(eps),
                          build_unit_square_mesh(cfg.n), cfg.settings, with_ledger=with_ledger)


def _write_run_outputs(cfg, traj, out: Path, stride: int):
    out.mkdir(parents=True, exist_ok=True)
    tio.write_trajectory_csv(out / "trajectory.csv", traj)
    ledger = compute_ledger(traj, rel_slack=cfg.energy_slack)
    tio.write_ledger_csv(out / "ledger.csv", ledger)
    tio.write_snapshots(out / "snapshots", traj, stride)


def _mandatory_checks(cfg, traj):
    ec = energy_check(traj, rel_slack=cfg.energy_slack)
    dok, dworst = dissipation_check(traj, cfg.dissipation_slack)
    return ec, dok, dworst


def cmd_run(cfg: RunConfig, args) -> int:
    quiet = args.quiet
    out = _out_dir(cfg, args)
    if len(cfg.eps) != 1:
        _say(quiet, f"note: {len(cfg.eps)} eps values given, running the first ({cfg.eps[0]})")
    traj = _simulate(cfg, cfg.eps[0])
    if len(traj.reports):
        _write_run_outputs(cfg, traj, out, _stride(cfg, args))
    if not traj.completed:
        print(f"hard failure: {traj.failure}", file=sys.stderr)
        return EXIT_FAILURE
    ec, dok, dworst = _mandatory_checks(cfg, traj)
    _say(quiet, f"steps: {len(traj.reports)}  final t = {traj.final.t:.6g}")
    _say(quiet, f"energy check: {'pass' if ec.passed else 'FLAGGED'} (worst margin {ec.worst_margin:.3e})")
    _say(quiet, f"dissipation check: {'pass' if dok else 'FLAGGED'} (worst normalized density {dworst:.3e})")
    _say(quiet, f"outputs written to {out}")
    return EXIT_OK if (ec.passed and dok) else EXIT_FLAGGED


def _sweep_worker(args):
    cfg, eps = args
    traj = _simulate(cfg, eps, with_ledger=False)
    return eps, traj.states, traj.failure


def cmd_sweep_eps(cfg: RunConfig, args) -> int:
    quiet = args.quiet
    if len(cfg.eps) < 2:
        print("config error: a sweep needs at least two eps values in [reg] eps", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(cfg, args)
    jobs = args.jobs or cfg.jobs
    unique = list(dict.fromkeys(cfg.eps))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, [(cfg, e) for e in unique]))
    else:
        results = [_sweep_worker((cfg, e)) for e in unique]
    mesh = build_unit_square_mesh(cfg.n)
    trajs = {}
    for eps, states, failure in results:
        problem = build_problem(mesh, cfg.build_material(), cfg.reg(eps), cfg.build_scenario(), cfg.settings)
        trajs[eps] = Trajectory(problem, states, [], failure)
    table = eps_convergence_study(cfg.build_scenario(), cfg.eps, cfg.build_material(), mesh, cfg.settings,
                                  runner=lambda e: trajs[e])
    out.mkdir(parents=True, exist_ok=True)
    tio.write_cauchy_csv(out / "cauchy.csv", table)
    tio.write_monitors_csv(out / "monitors.csv", table.monitors)
    for e, t in trajs.items():
        if len(t.states) > 1:
            tio.write_snapshots(out / f"eps_{e:g}" / "snapshots", t, _stride(cfg, args))
    for note in table.notes:
        _say(quiet, f"note: {note}")
    if any(not t.completed for t in trajs.values()):
        return EXIT_FAILURE
    for (a, b), d in zip(zip(table.eps[:-1], table.eps[1:]), table.distances):
        _say(quiet, f"eps {a:g} -> {b:g}: distance {d:.6e}")
    bound = monitor_bound_check(table.monitors, cfg.eps[0])
    bound_ok = all(v[0] for v in bound.values())
    _say(quiet, f"Cauchy trend: {table.trend_ok}; monitors within factor 2 of eps={cfg.eps[0]:g}: {bound_ok}")
    return EXIT_OK if (table.valid and table.trend_ok and bound_ok) else EXIT_FLAGGED


def cmd_check(cfg: RunConfig, args) -> int:
    results = run_property_suite(cfg)
    failed = 0
    for r in results:
        status = "skip" if r.passed is None else ("pass" if r.passed else "FAIL")
        failed += r.passed is False
        if not args.quiet or r.passed is False:
            print(f"{status:4s}  {r.name:45s} {r.detail}")
    _say(args.quiet, f"{len(results)} checks, {failed} failed")
    return EXIT_OK if failed == 0 else EXIT_FLAGGED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermocontact", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run one simulation"), ("sweep-eps", "run an eps sweep"),
                           ("check", "run the simulation-free property suite")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", type=str, default=None, help="INI configuration file")
        s.add_argument("--quiet", action="store_true", help="only print failures")
        if name != "check":
            s.add_argument("--out", type=str, default=None, help="output directory (overrides [output] dir)")
            s.add_argument("--stride", type=int, default=None, help="snapshot stride in steps")
        if name == "sweep-eps":
            s.add_argument("--jobs", type=int, default=None, help="parallel worker processes")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if getattr(args, "stride", None) is not None and args.stride < 1:
            raise ConfigError("--stride must be positive")
        if getattr(args, "jobs", None) is not None and args.jobs < 1:
            raise ConfigError("--jobs must be positive")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cmd = {"run": cmd_run, "sweep-eps": cmd_sweep_eps, "check": cmd_check}[args.command]
    return cmd(cfg, args)


if __name__ == "__main__":
    sys.exit(main())
