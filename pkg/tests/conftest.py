import os

import hypothesis
import numpy as np
import pytest

from switchpoint.models.fundamentals import DiffusionSpec, make_analytic_fundamentals
from switchpoint.models.payoff import build_preset
from switchpoint.models.solver import solve_level

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=25, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=100, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))

KAPPA = 0.003
THETA = 5000.0
SIGMA = 900.0
ALPHA = -40000.0
BETA = 50000.0
# the linear prices have an interior smooth-fit pair only for rates below about 1e-3
RATE = 0.0005


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def ou_spec():
    return DiffusionSpec(KAPPA, THETA, SIGMA, RATE, ALPHA, BETA)


@pytest.fixture(scope="session")
def analytic_pair(ou_spec):
    return make_analytic_fundamentals(ou_spec)


# r = kappa gives index -1, where the scaled parabolic cylinder function has a closed form.
@pytest.fixture(scope="session")
def closed_form_spec():
    return DiffusionSpec(KAPPA, THETA, SIGMA, KAPPA, ALPHA, BETA)


@pytest.fixture(scope="session")
def closed_form_pair(closed_form_spec):
    return make_analytic_fundamentals(closed_form_spec)


@pytest.fixture(scope="session")
def linear_payoff():
    return build_preset("linear")


@pytest.fixture(scope="session")
def storage_payoff():
    return build_preset("storage-linear")


@pytest.fixture(scope="session")
def composed_payoff():
    return build_preset("composed", temperature=20.0)


@pytest.fixture(scope="session")
def linear_control(analytic_pair, linear_payoff):
    return solve_level(analytic_pair, linear_payoff, None, None, None)
