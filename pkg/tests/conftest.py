import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_line():
    """Record one acceptance summary line, printed at the end of the session."""
    def add(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    from loopgas.sampling import RandomStream
    return RandomStream(12345, 0)


def random_loop(rng, k, M, beta, box, d):
    from loopgas.sampling import sample_bridge
    base = rng.uniform(box.lower, box.upper)
    return sample_bridge(base, base, k, beta, M, rng)


def assert_close(a, b, rel=1e-12, abs_=0.0):
    assert np.isclose(a, b, rtol=rel, atol=abs_), (a, b)
