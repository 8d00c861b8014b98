import math

import numpy as np
import pytest

from wigner_qc.grid import PhaseSpaceField, WignerState, make_grid


@pytest.fixture
def default_grid():
    return make_grid(-6, 6, -12, 12, 256, 256)


@pytest.fixture
def small_grid():
    return make_grid(-6, 6, -12, 12, 64, 64)


def gaussian_field(grid, q0=0.0, p0=0.0, sq=0.5, sp=0.8):
    q, p = grid.mesh()
    v = np.exp(-(q - q0) ** 2 / (2 * sq ** 2) - (p - p0) ** 2 / (2 * sp ** 2)) / (2 * math.pi * sq * sp)
    return PhaseSpaceField(grid, np.broadcast_to(v, grid.shape))


def state_of(field, t=0.0):
    return WignerState.initial(field, t)


ACCEPTANCE_LINES: dict[int, str] = {}


def report_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
