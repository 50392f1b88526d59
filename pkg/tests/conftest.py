import numpy as np
import pytest

from twosphere.coeff_cell import builtin_field, homogenize

_ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    """Store one acceptance line; printed in the terminal summary."""
    _ACCEPTANCE_LINES.append((number, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def laminate():
    return builtin_field("laminate", 1)


@pytest.fixture(scope="session")
def laminate_tensor(laminate):
    return homogenize(laminate, resolution=1024)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
