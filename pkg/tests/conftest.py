import numpy as np
import pytest
from hypothesis import settings

from qrestore.hilbert import bell_state, figure1_state, random_pure_state

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def bell():
    return bell_state()


@pytest.fixture
def fig1():
    return figure1_state()


@pytest.fixture
def random_4x4():
    return random_pure_state(4, 4, 3)


def dims_strategy(max_dim=5):
    from hypothesis import strategies as st

    return st.tuples(st.integers(1, max_dim), st.integers(1, max_dim), st.integers(0, 2**32 - 1))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
