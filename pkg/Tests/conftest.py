import sys
from pathlib import Path

import pytest

# Resolve the project root so the flat modules import by name
BASE_DIR = Path(__file__).resolve().parents[1]
if str(BASE_DIR) not in sys.path:
    sys.path.insert(0, str(BASE_DIR))

from ballgrid import BallGrid  # noqa: E402
from geometry import ModelMetric  # noqa: E402


@pytest.fixture(scope="module")
def flat2():
    return ModelMetric.euclidean(2)


@pytest.fixture(scope="module")
def flat3():
    return ModelMetric.euclidean(3)


@pytest.fixture(scope="module")
def polar_grid():
    return BallGrid(2, 1.0, 64, 64)


@pytest.fixture(scope="module")
def shell_grid():
    return BallGrid(3, 1.0, 32, 32)


# Unit-curvature models declared on the whole unit ball
@pytest.fixture(scope="module")
def round2():
    return ModelMetric(n=2, kind="space_form", kappa=1.0, working_radius=1.0)


@pytest.fixture(scope="module")
def round3():
    return ModelMetric(n=3, kind="space_form", kappa=1.0, working_radius=1.0)


@pytest.fixture(scope="module")
def hyperbolic2():
    return ModelMetric(n=2, kind="space_form", kappa=-1.0, working_radius=1.0)
