import sys

import numpy as np
import pytest

from mpcaug.pendulum import MpcSpec, build_nlp


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running pendulum benchmark")


@pytest.fixture(scope="session")
def pendulum():
    nlp = build_nlp()
    nlp.hess_ww  # compile evaluators once per session
    return nlp


@pytest.fixture(scope="session")
def pendulum20():
    return build_nlp(spec=MpcSpec(N=20))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
