import numpy as np
import pytest

from gridstate.cases import load_bundled_case
from gridstate.measurement import default_plan, evaluate_h, resolve_plan
from gridstate.powerflow import solve_power_flow


@pytest.fixture(scope="session")
def ieee14():
    return load_bundled_case("ieee14")


@pytest.fixture(scope="session")
def solved14(ieee14):
    sol = solve_power_flow(ieee14)
    assert sol.converged
    return sol


@pytest.fixture(scope="session")
def resolved14(ieee14):
    return resolve_plan(default_plan("minimal14", ieee14), ieee14)


@pytest.fixture(scope="session")
def z_clean14(solved14, resolved14):
    return evaluate_h(solved14.state, resolved14)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
