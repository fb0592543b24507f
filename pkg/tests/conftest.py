import numpy as np
import pytest

from cgo_eit.forward import CEMModel, mean_free_basis
from cgo_eit.geometry import BoxDomain, build_box_layout, mesh_box
from cgo_eit.phantoms import tank_layout


@pytest.fixture(scope="session")
def cube_layout():
    """Unit-conductivity test box with one electrode per face."""
    return build_box_layout(BoxDomain(0.1, 0.1, 0.1), {"all": 1}, 0.04)


@pytest.fixture(scope="session")
def cube_model(cube_layout):
    mesh = mesh_box(cube_layout.domain, cube_layout, 0.025, 0.0125)
    return CEMModel(mesh, cube_layout)


@pytest.fixture(scope="session")
def tank():
    return tank_layout()


@pytest.fixture(scope="session")
def tank_model(tank):
    mesh = mesh_box(tank.domain, tank, 0.03, 0.015)
    return CEMModel(mesh, tank)


@pytest.fixture(scope="session")
def tank_unit(tank_model, tank):
    """Unit-conductivity voltages for the mean-free Helmert currents."""
    return tank_model.solve(np.ones(tank_model.mesh.n_nodes), mean_free_basis(tank.n_electrodes))


@pytest.fixture(scope="session")
def standard_prep():
    """Simulated standard one-target scenario plus the unit-conductivity
    simulation on the modeled box."""
    from cgo_eit.phantoms import standard_scenario
    from cgo_eit.pipeline import RunConfig, prepare
    return prepare(RunConfig(scenario=standard_scenario()))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one pass/fail line per acceptance criterion."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
