import os

import pytest

from icsfdia.inference import build_attack_model
from icsfdia.twin import default_scenario, run_scenario

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="session")
def default_run():
    return run_scenario(default_scenario(), 200)


@pytest.fixture(scope="session")
def default_trace(default_run):
    return default_run[0]


@pytest.fixture(scope="session")
def default_truth(default_run):
    return default_run[1]


@pytest.fixture(scope="session")
def default_model(default_trace):
    return build_attack_model(default_trace)


@pytest.fixture(scope="session")
def reference_policy_path():
    return os.path.join(FIXTURES, "reference_policies.yaml")
