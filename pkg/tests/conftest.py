import json

import numpy as np
import pytest

from stlnav.geometry import Circle, Polygon, Workspace
from stlnav.harmonic import HarmonicMap
from stlnav.hybrid import Problem, simulate, simulate_baseline
from stlnav.scenario import builtin_scenario_path, load_scenario, scenario_from_dict


@pytest.fixture(scope="session")
def disk_map():
    return HarmonicMap().fit(Workspace(Circle(np.zeros(2), 1.0)))


@pytest.fixture(scope="session")
def square_map():
    sq = Polygon(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
    return HarmonicMap().fit(Workspace(sq))


@pytest.fixture(scope="session")
def square_obstacle_map():
    sq = Polygon(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
    return HarmonicMap().fit(Workspace(sq, (Circle(np.array([0.5, 0.5]), 0.1),)))


@pytest.fixture(scope="session")
def eight_scenario():
    return load_scenario(builtin_scenario_path("eight_tasks"))


@pytest.fixture(scope="session")
def eight_box_scenario():
    return load_scenario(builtin_scenario_path("eight_tasks_box"))


@pytest.fixture(scope="session")
def eight_map(eight_scenario):
    s = eight_scenario.settings
    return HarmonicMap(puncture_guard=s.puncture_guard, **s.map).fit(eight_scenario.workspace)


@pytest.fixture(scope="session")
def eight_problem(eight_scenario, eight_map):
    return Problem(eight_scenario, eight_map)


@pytest.fixture(scope="session")
def eight_box_problem(eight_box_scenario, eight_map):
    return Problem(eight_box_scenario, eight_map)


@pytest.fixture(scope="session")
def eight_hybrid_log(eight_problem):
    return simulate(eight_problem)


@pytest.fixture(scope="session")
def eight_box_hybrid_log(eight_box_problem):
    return simulate(eight_box_problem)


@pytest.fixture(scope="session")
def eight_box_baseline_log(eight_box_problem):
    return simulate_baseline(eight_box_problem)


def disk_scenario_dict(formula="F[0,20] mu1", regions=None, p0=(-0.5, 0.0), bounds=None, config=None):
    d = {
        "workspace": {"outer": {"type": "circle", "center": [0, 0], "radius": 1.0}},
        "regions": regions or {"mu1": {"center": [0.5, 0.0], "radius": 0.15}},
        "formula": formula,
        "initial_position": list(p0),
        "input_bounds": bounds,
    }
    if config:
        d["config"] = config
    return d


@pytest.fixture(scope="session")
def disk_scenario_factory(disk_map):
    cache = {}

    def make(**kw):
        sc = scenario_from_dict(disk_scenario_dict(**kw))
        key = json.dumps(kw, sort_keys=True)
        if key not in cache:
            cache[key] = Problem(sc, disk_map)
        return cache[key]

    return make


def pytest_terminal_summary(terminalreporter):
    from _acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
