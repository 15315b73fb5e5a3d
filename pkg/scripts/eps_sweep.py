"""Regularization sweep: successive trajectory distances and monitor growth."""
import argparse
import time

from thermocontact.diagnostics import eps_convergence_study, monitor_bound_check
from thermocontact.discretization import build_unit_square_mesh
from thermocontact.physics import default_material
from thermocontact.presets import make_scenario, preset_material_overrides


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.1, 0.05, 0.025, 0.0125])
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--dt", type=float, default=0.02)
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--preset", default="benchmark")
    a = ap.parse_args()

    t0 = time.perf_counter()
    table = eps_convergence_study(make_scenario(a.preset, T_final=a.T, dt=a.dt), a.eps,
                                  default_material(**preset_material_overrides(a.preset)),
                                  build_unit_square_mesh(a.n))
    print(f"{len(a.eps)} runs in {time.perf_counter() - t0:.1f} s, valid: {table.valid}")
    for note in table.notes:
        print("note:", note)
    for (e0, e1), d in zip(zip(table.eps[:-1], table.eps[1:]), table.distances):
        print(f"  eps {e0:<8g} -> {e1:<8g} distance {d:.6e}")
    print("nonincreasing:", table.trend_ok)
    print(f"{'monitor':24s}" + "".join(f"{e:>12g}" for e in table.monitors))
    for name in next(iter(table.monitors.values())):
        print(f"{name:24s}" + "".join(f"{m[name]:12.4e}" for m in table.monitors.values()))
    bound = monitor_bound_check(table.monitors, a.eps[0])
    bad = [k for k, v in bound.items() if not v[0]]
    print("monitors within factor 2:", not bad, bad or "")


if __name__ == "__main__":
    main()
