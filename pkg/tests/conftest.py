import warnings

import numpy as np
import pytest

from magdbar import RadialPowerWeight, ZeroWeight, build_grid


@pytest.fixture
def fock():
    return RadialPowerWeight(2)


@pytest.fixture
def quartic():
    return RadialPowerWeight(4)


@pytest.fixture
def zero():
    return ZeroWeight()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def observed_order(err_coarse: float, err_fine: float) -> float:
    """log2 of the error ratio under h -> h/2."""
    return float(np.log2(err_coarse / err_fine))


@pytest.fixture
def small_grid():
    return build_grid(2.0, 0.25)


def pytest_configure(config):
    warnings.simplefilter("default")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
