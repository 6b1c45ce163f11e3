import numpy as np
import pytest

from dseir.model import ModelSpec
from dseir.observation import ObsModelSpec

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def record(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sir():
    return ModelSpec("SIR", 767, contact_mode="brownian-log")


@pytest.fixture
def sir_const():
    return ModelSpec("SIR", 100)


@pytest.fixture
def seir():
    return ModelSpec("SEIR", 44351)


@pytest.fixture
def binom_sir():
    return ObsModelSpec("binomial", 0)
