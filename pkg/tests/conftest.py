import sys

import numpy as np
import pytest

from dualfilter import FiniteStateScenario, ObservationModel, RateMatrix, TimeGrid

DESK_A = [[-2.0, 1.0, 1.0], [1.0, -3.0, 2.0], [0.5, 1.5, -2.0]]
DESK_H = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.5]]
DESK_R = [[0.5, 0.0], [0.0, 1.0]]
DESK_PI0 = [0.5, 0.3, 0.2]
DESK_F = np.array([1.0, -1.0, 2.0])


def desk_scenario(n_steps: int = 1000) -> FiniteStateScenario:
    return FiniteStateScenario(RateMatrix(np.array(DESK_A)), ObservationModel(np.array(DESK_H), np.array(DESK_R)),
                               np.array(DESK_PI0), TimeGrid(1.0, n_steps))


@pytest.fixture
def desk():
    return desk_scenario()


@pytest.fixture
def desk_f():
    return DESK_F.copy()


def random_rate_matrix(rng, d: int, scale: float = 2.0) -> RateMatrix:
    a = rng.exponential(scale / d, size=(d, d))
    np.fill_diagonal(a, 0.0)
    np.fill_diagonal(a, -a.sum(axis=1))
    return RateMatrix(a)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    RESULTS = getattr(module, "RESULTS", None)
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[key])
