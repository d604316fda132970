import numpy as np
import pytest

from survksd.data import CensoredSample


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_sample(rng, n, censor_prob=0.3, scale=1.0):
    t = rng.exponential(scale, size=n)
    d = rng.random(n) >= censor_prob
    return CensoredSample(t, d)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
