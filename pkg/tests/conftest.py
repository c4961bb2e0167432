import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uvnflash import eos

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def db():
    return eos.load_database()


@pytest.fixture(scope="session")
def c1h2s(db):
    return eos.mixture_from_database(db, "C1-H2S")


@pytest.fixture(scope="session")
def c2c5(db):
    return eos.mixture_from_database(db, "C2-C5")


@pytest.fixture(scope="session")
def co2(db):
    return eos.mixture_from_database(db, "CO2")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    RESULTS = getattr(mod, "RESULTS", None)
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[key])
