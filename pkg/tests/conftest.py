import os
import sys
import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("quick", max_examples=15, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

#: one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def benchmark_run():
    """The reference benchmark run (n=8, dt=0.02, 50 steps, eps=0.05) and its wall time."""
    from thermocontact.discretization import build_unit_square_mesh
    from thermocontact.presets import make_scenario, preset_material_overrides
    from thermocontact.physics import default_material
    from thermocontact.solvers import run_simulation

    sc = make_scenario("benchmark", T_final=1.0, dt=0.02)
    mat = default_material(**preset_material_overrides("benchmark"))
    t0 = time.perf_counter()
    traj = run_simulation(sc, mat, 0.05, build_unit_square_mesh(8))
    return traj, time.perf_counter() - t0
