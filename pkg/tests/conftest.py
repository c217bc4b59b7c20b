"""Session fixtures: the canonical four-agent benchmark, synthesized once."""

from importlib.resources import files

import pytest

from coopreg import scenario as sc
from coopreg.cli import run_synthesis


def _shipped(name: str) -> str:
    return files("coopreg").joinpath(f"scenarios/{name}").read_text()


@pytest.fixture(scope="session")
def leader_scenario():
    return sc.loads(_shipped("four_agent_leader.cfg"))


@pytest.fixture(scope="session")
def leaderless_scenario():
    return sc.loads(_shipped("four_agent_leaderless.cfg"))


@pytest.fixture(scope="session")
def leader_design(leader_scenario):
    return run_synthesis(leader_scenario)


@pytest.fixture(scope="session")
def leader_design_m400(leader_scenario):
    return run_synthesis(leader_scenario, m=400)


@pytest.fixture(scope="session")
def leaderless_design(leaderless_scenario):
    return run_synthesis(leaderless_scenario)


@pytest.fixture(scope="session")
def leader_scenario_text():
    return _shipped("four_agent_leader.cfg")
