import sys

import numpy as np
import pytest
from hypothesis import settings

from windowabc.model import SeirdParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def truth():
    return SeirdParams(
        beta_i=0.6, beta_e=0.3, alpha=0.5, gamma=0.4, mu=0.02, n_pop=1e6, c_e=1.0, c_r=0.5
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
