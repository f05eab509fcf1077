import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from rbn.chart.params import GrbnParams  # noqa: E402

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("default")

ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture
def appb_params():
    """Unit parameters of the worked example: every covariance 1, p_term 1/2."""
    return GrbnParams(prior_mean=[0.0], prior_cov=1.0, left_cov=1.0, right_cov=1.0, term_cov=1.0, p_term=0.5)


@pytest.fixture
def appb_y():
    return np.array([[0.0], [1.0], [2.0], [0.0]])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
