"""CSV and snapshot writers with fixed column orders.

Floats are written with ``repr`` so that identical runs give byte-identical
files.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .diagnostics import LEDGER_COLUMNS, coulomb_residual, signorini_residual, stored_energy

__all__ = [
    "TRAJECTORY_COLUMNS",
    "BULK_SNAPSHOT_COLUMNS",
    "SURFACE_SNAPSHOT_COLUMNS",
    "CAUCHY_COLUMNS",
    "trajectory_rows",
    "write_csv",
    "write_trajectory_csv",
    "write_ledger_csv",
    "write_snapshots",
    "write_cauchy_csv",
    "write_monitors_csv",
]

TRAJECTORY_COLUMNS = (
    "step", "t", "dt", "halvings", "outer_iters", "momentum_iters", "adhesion_iters", "thermal_iters",
    "res_momentum", "res_friction", "res_adhesion", "res_theta", "res_theta_s",
    "theta_min", "theta_max", "theta_s_min", "theta_s_max", "chi_min", "chi_max", "uN_max",
    "n_slip", "n_stick", "R_max", "signorini_r1", "signorini_r2", "signorini_r3", "coulomb_violation",
    "energy_total", "dissipation_min_bulk", "dissipation_min_surface",
)
BULK_SNAPSHOT_COLUMNS = ("node", "x", "y", "theta", "u_x", "u_y")
SURFACE_SNAPSHOT_COLUMNS = ("x", "theta_s", "chi", "u_N", "du_T_dt", "z", "R_abs")
CAUCHY_COLUMNS = ("eps_a", "eps_b", "distance")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def trajectory_rows(traj) -> list:
    pr = traj.problem
    forms = pr.forms
    sn = forms.mesh.surface_nodes
    rows = []
    for i, (st, rep) in enumerate(zip(traj.states[1:], traj.reports), start=1):
        prev = traj.states[i - 1]
        dt = st.t - prev.t
        cases, viol = coulomb_residual(st, forms, rep.substeps[-1][2] if rep.substeps else dt)
        r1, r2, r3 = signorini_residual(st, forms, pr.reg)
        res = rep.residuals
        dmin = rep.dissipation_min
        rows.append({
            "step": i, "t": st.t, "dt": rep.dt, "halvings": rep.halvings, "outer_iters": rep.outer_iters,
            "momentum_iters": rep.sub_iters["momentum"], "adhesion_iters": rep.sub_iters["adhesion"],
            "thermal_iters": rep.sub_iters["thermal"],
            "res_momentum": res["momentum"], "res_friction": res["friction"], "res_adhesion": res["adhesion"],
            "res_theta": res["theta"], "res_theta_s": res["theta_s"],
            "theta_min": st.theta.min(), "theta_max": st.theta.max(),
            "theta_s_min": st.theta_s.min(), "theta_s_max": st.theta_s.max(),
            "chi_min": st.chi.min(), "chi_max": st.chi.max(), "uN_max": np.max(-st.u[2 * sn + 1]) + 0.0,
            "n_slip": int(np.sum(cases == "slip")), "n_stick": int(np.sum(cases == "stick")),
            "R_max": st.R_mag.max(), "signorini_r1": r1, "signorini_r2": r2, "signorini_r3": r3,
            "coulomb_violation": viol.max(),
            "energy_total": sum(stored_energy(forms, pr.reg, st).values()),
            "dissipation_min_bulk": dmin[0], "dissipation_min_surface": dmin[1],
        })
    return rows


def write_trajectory_csv(path, traj) -> None:
    write_csv(path, TRAJECTORY_COLUMNS, trajectory_rows(traj))


def write_ledger_csv(path, ledger_rows) -> None:
    write_csv(path, LEDGER_COLUMNS, ledger_rows)


def write_snapshots(directory, traj, stride: int = 1) -> list:
    """Write ``bulk_XXXXX.txt`` and ``surface_XXXXX.txt`` every ``stride`` steps (and the last)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mesh = traj.problem.mesh
    sn = mesh.surface_nodes
    stride = max(1, int(stride))
    last = len(traj.states) - 1
    written = []
    for k, st in enumerate(traj.states):
        if k % stride and k != last:
            continue
        u = st.u.reshape(-1, 2)
        bulk = [{"node": i, "x": mesh.nodes[i, 0], "y": mesh.nodes[i, 1], "theta": st.theta[i],
                 "u_x": u[i, 0], "u_y": u[i, 1]} for i in range(mesh.n_nodes)]
        dt = st.t - traj.states[k - 1].t if k > 0 else 0.0
        vT = (st.u[2 * sn] - st.u_prev[2 * sn]) / dt if dt > 0 else np.zeros(len(sn))
        surf = [{"x": mesh.nodes[j, 0], "theta_s": st.theta_s[i], "chi": st.chi[i], "u_N": -u[j, 1],
                 "du_T_dt": vT[i], "z": st.z[i], "R_abs": st.R_mag[i]} for i, j in enumerate(sn)]
        for name, cols, rows in (("bulk", BULK_SNAPSHOT_COLUMNS, bulk), ("surface", SURFACE_SNAPSHOT_COLUMNS, surf)):
            p = directory / f"{name}_{k:05d}.txt"
            with p.open("w") as fh:
                fh.write(f"# t = {st.t!r}\n")
                fh.write(" ".join(cols) + "\n")
                for r in rows:
                    fh.write(" ".join(_fmt(r[c]) for c in cols) + "\n")
            written.append(p)
    return written


def write_cauchy_csv(path, table) -> None:
    rows = [{"eps_a": a, "eps_b": b, "distance": d}
            for (a, b), d in zip(zip(table.eps[:-1], table.eps[1:]), table.distances)]
    write_csv(path, CAUCHY_COLUMNS, rows)


def write_monitors_csv(path, monitors_by_eps: dict) -> None:
    from .diagnostics import MONITOR_NAMES

    rows = [{"eps": e, **m} for e, m in monitors_by_eps.items()]
    write_csv(path, ("eps",) + MONITOR_NAMES, rows)
