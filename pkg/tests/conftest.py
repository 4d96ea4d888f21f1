import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dope.data import ObservationTable

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_table(n=200, d=3, seed=0, link=None):
    """Binary-treatment table with a confounded linear outcome."""
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(n, d))
    p = 1.0 / (1.0 + np.exp(-W[:, 0]))
    T = (rng.uniform(size=n) < p).astype(int)
    index = W @ np.linspace(1.0, 0.2, d)
    mean = T + (index if link is None else link(index))
    Y = mean + rng.normal(size=n)
    return ObservationTable.from_arrays(T, W, Y)


@pytest.fixture
def table():
    return make_table()


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(number, passed, detail):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return passed
    return record
