import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from devlat import JumpMeasure, NoiseModel, TimeGrid, build_lattice


@pytest.fixture
def binomial2():
    return build_lattice(TimeGrid.uniform(2, 1.0), NoiseModel.brownian(1))


@pytest.fixture
def binomial4():
    return build_lattice(TimeGrid.uniform(4, 1.0), NoiseModel.brownian(1))


@pytest.fixture
def jump_measure():
    return JumpMeasure(((-1.0,), (2.0,)), (0.3, 0.7))


@pytest.fixture
def jump_lattice():
    # dyadic step and intensities keep the averaging arithmetic exact
    noise = NoiseModel(1, JumpMeasure(((-1.0,), (2.0,)), (0.25, 0.5)))
    return build_lattice(TimeGrid.uniform(4, 1.0), noise)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
