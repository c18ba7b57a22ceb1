import numpy as np
import pytest

from gpe_optctl import (
    ControlField,
    ControlProblem,
    PhysicalParams,
    PotentialFamily,
    SpatialGrid,
    TimeGrid,
    excited_state,
    ground_state,
)


def small_problem(kind="splitting", kappa=np.pi / 2, n_steps=400, t_final=1.0, n_points=128):
    """A cheap version of the presets for unit tests."""
    grid = SpatialGrid(-8.0, 8.0, n_points)
    tg = TimeGrid(t_final, n_steps)
    phys = PhysicalParams(0.5, kappa)
    if kind == "splitting":
        pot = PotentialFamily("splitting_poly")
        psi0 = ground_state(pot, 0.0, phys, grid, time_step=tg.dt)
        psi_d = ground_state(pot, 1.0, phys, grid, time_step=tg.dt)
        guess = ControlField(tg, tg.t / t_final)
    else:
        pot = PotentialFamily("shaking_shifted")
        psi0 = ground_state(pot, 0.0, phys, grid, time_step=tg.dt)
        psi_d = excited_state(pot, 0.0, phys, grid, time_step=tg.dt)
        guess = ControlField(tg, 0.1 * np.sin(2 * np.pi * tg.t / t_final))
    return ControlProblem(grid, tg, pot, phys, psi0, psi_d, name=kind), guess


@pytest.fixture(scope="session")
def splitting_small():
    return small_problem("splitting")


@pytest.fixture(scope="session")
def shaking_small():
    return small_problem("shaking")


# -- per-criterion summary for the acceptance suite ----------------------

_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        detail = dict(item.user_properties).get("detail", "")
        _CRITERIA.append((marker.args[0], marker.args[1], rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
