import numpy as np
import pytest
from hypothesis import settings, HealthCheck

from warpsmooth.geometry import ManifoldModel, RadialGrid

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def model():
    return ManifoldModel.default()


@pytest.fixture(scope="session")
def flat_model():
    return ManifoldModel.flat()


@pytest.fixture(scope="session")
def grid():
    return RadialGrid(8.0, 2047)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria append "(number, PASS/FAIL, detail, seconds)" here; printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail, secs in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  "
                                    f"[{secs:7.1f} s]  {detail}")
