import numpy as np
import pytest

from twosource.model import reference_scenario


@pytest.fixture(scope="session")
def scenario():
    return reference_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return

    if LINES:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(LINES):
            terminalreporter.write_line(LINES[cid])
