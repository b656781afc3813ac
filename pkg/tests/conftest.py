import numpy as np
import pytest

# (criterion, passed, detail) rows filled in by the acceptance suite
ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def record():
    def add(criterion, passed, detail):
        ACCEPTANCE.append((criterion, bool(passed), detail))
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0][1:].split(".")[0])):
        terminalreporter.write_line(f"{criterion:<5} {'PASS' if passed else 'FAIL'}  {detail}")
