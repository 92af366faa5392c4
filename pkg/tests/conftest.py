from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from sortedl1.model import INF, validate_weights

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "recovery_100x256_s10.txt"


def random_weights(rng: np.random.Generator, n: int, allow_inf: bool = True):
    """Nondecreasing nonnegative weights, sometimes with zeros or an infinite tail."""
    lam = np.sort(rng.uniform(0.0, 2.0, n))
    if rng.random() < 0.3:
        lam[: rng.integers(0, n)] = 0.0
    if allow_inf and rng.random() < 0.2:
        t = int(rng.integers(0, n + 1))
        lam[t:] = INF
        if t == n and lam[-1] == 0:
            lam[-1] = 1.0
    elif lam[-1] == 0:
        lam[-1] = 1.0
    return validate_weights(lam)


@st.composite
def weight_sequences(draw, n, allow_inf=True):
    finite = draw(st.lists(st.floats(0.0, 5.0), min_size=n, max_size=n))
    lam = sorted(finite)
    tail = draw(st.integers(0, n)) if allow_inf and draw(st.booleans()) else n
    lam = lam[:tail] + [INF] * (n - tail)
    if tail == n and lam[-1] == 0:
        lam[-1] = 1.0
    return validate_weights(lam)


def vectors(n, bound=10.0):
    return st.lists(st.floats(-bound, bound), min_size=n, max_size=n).map(np.array)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
