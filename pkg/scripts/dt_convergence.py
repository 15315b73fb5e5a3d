"""Temporal refinement study: final-state differences under repeated halving of dt."""
import argparse

from thermocontact.diagnostics import state_distance
from thermocontact.discretization import build_unit_square_mesh
from thermocontact.physics import default_material
from thermocontact.presets import make_scenario, preset_material_overrides
from thermocontact.solvers import run_simulation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dt", type=float, default=0.04)
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--preset", default="benchmark")
    a = ap.parse_args()

    mesh = build_unit_square_mesh(a.n)
    mat = default_material(**preset_material_overrides(a.preset))
    finals, forms = [], None
    for k in range(a.levels):
        dt = a.dt / 2 ** k
        tr = run_simulation(make_scenario(a.preset, T_final=1.0, dt=dt), mat, a.eps, mesh, with_ledger=False)
        if not tr.completed:
            raise SystemExit(f"dt={dt}: {tr.failure}")
        finals.append(tr.final)
        forms = tr.problem.forms
    diffs = [state_distance(forms, x, y) for x, y in zip(finals[:-1], finals[1:])]
    for k, d in enumerate(diffs):
        ratio = f"  ratio {diffs[k - 1] / d:.3f}" if k else ""
        print(f"dt {a.dt / 2 ** k:<8g} vs {a.dt / 2 ** (k + 1):<8g} difference {d:.4e}{ratio}")


if __name__ == "__main__":
    main()
