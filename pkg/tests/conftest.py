import numpy as np
import pytest

from stereosim.core import StereoRig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def rig():
    return StereoRig()


@pytest.fixture
def small_rig():
    return StereoRig.centered(160, 120)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
