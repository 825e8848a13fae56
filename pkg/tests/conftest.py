import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from saddleblow.objective import PolynomialObjective

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def xyz_objective() -> PolynomialObjective:
    """1/2 (xyz - 1)^2 expanded."""
    return PolynomialObjective(3, [((2, 2, 2), 0.5), ((1, 1, 1), -1.0), ((0, 0, 0), 0.5)])


def quad_saddle() -> PolynomialObjective:
    return PolynomialObjective(2, [((2, 0), 0.5), ((0, 2), -0.5)])


def norm_squared(dim: int = 2) -> PolynomialObjective:
    return PolynomialObjective(dim, [(tuple(2 if j == i else 0 for j in range(dim)), 1.0) for i in range(dim)])


def norm_fourth() -> PolynomialObjective:
    return PolynomialObjective(2, [((4, 0), 1.0), ((2, 2), 2.0), ((0, 4), 1.0)])


@pytest.fixture
def xyz():
    return xyz_objective()


@pytest.fixture
def quad():
    return quad_saddle()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
