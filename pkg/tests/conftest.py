import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def factor_data(rng):
    n, p, k = 60, 30, 2
    f = rng.standard_normal((n, k))
    b = rng.uniform(-1, 1, (p, k))
    x = f @ b.T + rng.standard_normal((n, p))
    z = rng.uniform(size=n)
    beta = np.zeros(p)
    beta[:3] = 1.5
    y = x @ beta + np.sin(2 * np.pi * z) + 0.5 * rng.standard_normal(n)
    return y, x, z


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
