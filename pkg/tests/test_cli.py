import csv

import numpy as np
import pytest

from thermocontact import cli
from thermocontact.config import DEFAULT_CONFIG_TEXT, ConfigError, load_config, parse_config
from thermocontact.io import SURFACE_SNAPSHOT_COLUMNS, TRAJECTORY_COLUMNS

SMALL = """
[mesh]
n = 3
[time]
dt = 0.02
T = 0.1
[reg]
eps = {eps}
[scenario]
preset = {preset}
[output]
stride = 2
"""


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_default_config_parses():
    cfg = load_config(None)
    assert cfg.n == 8 and cfg.eps == (0.05,) and cfg.preset == "benchmark"
    assert cfg.dt == 0.02 and cfg.T == 1.0
    assert parse_config(DEFAULT_CONFIG_TEXT) == cfg


@pytest.mark.parametrize("text", [
    "[mesh]\nn = 4\nsize = 3\n",
    "[plot]\nx = 1\n",
    "[material]\nkernel_rho = 0\n",
    "[material]\nc1 = -0.2\n",
    "[time]\ndt = 2\nT = 1\n",
    "[reg]\neps = 0.1, -0.1\n",
    "[mesh]\nn = four\n",
    "[scenario]\npreset = volcano\n",
    "[scenario]\npreset = zero\npulse_width = 1\n",
    "[tol]\nomega = 1.5\n",
    "[tol]\nfriction_method = magic\n",
    "[tol]\nenergy_slack = -1\n",
    "not an ini file",
])
def test_bad_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_eps_list_and_tol_section():
    cfg = parse_config("[reg]\neps = 0.1, 0.05,0.025\n[tol]\ntol_outer = 1e-9\nfriction_method = uzawa\nhalvings = 2\n")
    assert cfg.eps == (0.1, 0.05, 0.025)
    assert cfg.settings.tol_outer == 1e-9 and cfg.settings.friction_method == "uzawa"
    assert cfg.settings.halvings == 2


def test_exit_codes_for_config_errors(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", _write(tmp_path, "[material]\nkernel_rho = 0\n")]) == cli.EXIT_CONFIG
    single = _write(tmp_path, SMALL.format(eps="0.05", preset="zero"))
    assert cli.main(["sweep-eps", "--config", single, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", single, "--stride", "0"]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_check_subcommand(capsys):
    assert cli.main(["check", "--quiet"]) == cli.EXIT_OK
    assert capsys.readouterr().out == ""
    assert cli.main(["check"]) == cli.EXIT_OK
    assert "0 failed" in capsys.readouterr().out


def test_check_skips_out_of_range_eps(tmp_path, capsys):
    cfg = _write(tmp_path, "[reg]\neps = 0.7\n[mesh]\nn = 3\n")
    assert cli.main(["check", "--config", cfg]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert sum(line.startswith("skip ") for line in out.splitlines()) == 2


def test_run_writes_outputs(tmp_path):
    cfg = _write(tmp_path, SMALL.format(eps="0.05", preset="benchmark"))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == cli.EXIT_OK
    with open(out / "trajectory.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == TRAJECTORY_COLUMNS
    assert len(rows) == 5
    assert float(rows[-1]["t"]) == pytest.approx(0.1)
    assert (out / "ledger.csv").exists()
    snaps = sorted(p.name for p in (out / "snapshots").iterdir())
    assert snaps == [f"{k}_{i:05d}.txt" for k in ("bulk", "surface") for i in (0, 2, 4, 5)]
    lines = (out / "snapshots" / "surface_00005.txt").read_text().splitlines()
    assert lines[0].startswith("# t = ")
    assert tuple(lines[1].split()) == SURFACE_SNAPSHOT_COLUMNS
    assert len(lines) == 2 + 4


def test_zero_preset_stays_at_rest(tmp_path):
    cfg = _write(tmp_path, SMALL.format(eps="0.05", preset="zero"))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == cli.EXIT_OK
    data = np.loadtxt(out / "snapshots" / "bulk_00005.txt", skiprows=2)
    assert np.allclose(data[:, 3], 1.0, atol=1e-14)
    assert np.allclose(data[:, 4:], 0.0, atol=1e-14)


def test_hard_failure_exit_code(tmp_path):
    text = SMALL.format(eps="0.05", preset="benchmark") + "[tol]\nmax_outer = 1\nhalvings = 0\n"
    assert cli.main(["run", "--config", _write(tmp_path, text), "--out", str(tmp_path / "o"), "--quiet"]) \
        == cli.EXIT_FAILURE


def test_flagged_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "dissipation_check", lambda traj, tol: (False, -1.0))
    cfg = _write(tmp_path, SMALL.format(eps="0.05", preset="zero"))
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == cli.EXIT_FLAGGED


@pytest.mark.parametrize("jobs", ["1", "2"])
def test_sweep_writes_tables(tmp_path, jobs):
    cfg = _write(tmp_path, SMALL.format(eps="0.1, 0.05, 0.025", preset="benchmark"))
    out = tmp_path / "sweep"
    assert cli.main(["sweep-eps", "--config", cfg, "--out", str(out), "--quiet", "--jobs", jobs]) == cli.EXIT_OK
    with open(out / "cauchy.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(float(r["eps_a"]), float(r["eps_b"])) for r in rows] == [(0.1, 0.05), (0.05, 0.025)]
    assert (out / "monitors.csv").exists()
    assert (out / "eps_0.025" / "snapshots").is_dir()


def test_sweep_is_independent_of_worker_count(tmp_path):
    cfg = _write(tmp_path, SMALL.format(eps="0.1, 0.05", preset="traction-slip"))
    for j in ("1", "2"):
        assert cli.main(["sweep-eps", "--config", cfg, "--out", str(tmp_path / j), "--quiet", "--jobs", j]) == 0
    assert (tmp_path / "1" / "cauchy.csv").read_bytes() == (tmp_path / "2" / "cauchy.csv").read_bytes()
