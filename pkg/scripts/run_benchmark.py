"""Run the benchmark preset and report the energy, dissipation and friction checks."""
import argparse
import time

from thermocontact.diagnostics import dissipation_check, energy_check, friction_structure_check
from thermocontact.discretization import build_unit_square_mesh
from thermocontact.io import write_ledger_csv, write_trajectory_csv
from thermocontact.physics import default_material
from thermocontact.presets import make_scenario, preset_material_overrides
from thermocontact.solvers import run_simulation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--dt", type=float, default=0.02)
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--preset", default="benchmark")
    ap.add_argument("--out", default=None, help="directory for trajectory.csv and ledger.csv")
    a = ap.parse_args()

    t0 = time.perf_counter()
    traj = run_simulation(make_scenario(a.preset, T_final=a.T, dt=a.dt),
                          default_material(**preset_material_overrides(a.preset)), a.eps,
                          build_unit_square_mesh(a.n))
    elapsed = time.perf_counter() - t0
    print(f"{len(traj.reports)} steps in {elapsed:.2f} s, completed: {traj.completed}")
    if traj.failure:
        print("failure:", traj.failure)
    ec = energy_check(traj)
    print(f"energy inequality: {ec.passed}, worst margin {ec.worst_margin:.3e}, negative terms {len(ec.negative_terms)}")
    ok, worst = dissipation_check(traj)
    print(f"dissipation: {ok}, worst normalized density {worst:.3e}")
    for k, v in friction_structure_check(traj).items():
        print(f"  {k:20s} {v}")
    print("outer iterations per step:", [r.outer_iters for r in traj.reports])
    if a.out:
        from pathlib import Path

        write_trajectory_csv(Path(a.out) / "trajectory.csv", traj)
        write_ledger_csv(Path(a.out) / "ledger.csv", ec.rows)


if __name__ == "__main__":
    main()
