import numpy as np
import pytest

from flnet.config import default_config


@pytest.fixture
def cfg():
    return default_config()


@pytest.fixture
def cfg1():
    return default_config(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def binomial_sigma(p, n):
    return np.sqrt(p * (1.0 - p) / n)


# Acceptance verdict lines, printed once at the end of the session.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
