import numpy as np
import pytest

from fixscreen import build_phantom
from fixscreen.phantom import PhantomSpec


@pytest.fixture(scope="session")
def desk_phantom():
    return build_phantom(PhantomSpec(), 0.5e-3)


@pytest.fixture(scope="session")
def coarse_phantom():
    # 1 mm cells: the coarsest grid that still puts two cells across the skin
    return build_phantom(PhantomSpec(), 1e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def reference_dir():
    from pathlib import Path

    return Path(__file__).resolve().parents[1] / "docs"


# One line per acceptance criterion, printed at the end of the session.
CRITERIA = {}


def record_criterion(number, passed, detail):
    CRITERIA[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
