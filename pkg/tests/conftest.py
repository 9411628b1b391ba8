import numpy as np
import pytest

from liao import VectorFieldSpec, reduced_cocycle, stable_first_frame_path

XYZ = ("x", "y", "z")


def field(*components):
    return VectorFieldSpec.from_strings(list(components), XYZ)


@pytest.fixture(scope="session")
def saddle():
    """The linear saddle (1, y, -z); the x-axis is a hyperbolic orbit."""
    return field("1", "y", "-z")


@pytest.fixture(scope="session")
def saddle_path(saddle):
    return stable_first_frame_path(saddle, np.zeros(3), (-12.0, 12.0), 0.01)


@pytest.fixture(scope="session")
def saddle_cocycle(saddle, saddle_path):
    return reduced_cocycle(saddle_path, p_minus=1, spec=saddle)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    """Store one acceptance line; they are printed together at the end of the run."""
    ACCEPTANCE_LINES.append((number, f"[{'PASS' if passed else 'FAIL'}] criterion {number}: "
                                     f"{title} -- {detail}"))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(line)
