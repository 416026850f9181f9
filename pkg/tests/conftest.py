import numpy as np
import pytest

from pathdep.path_core import CadlagPath, InitialCondition, TimeGrid
from pathdep.sde_engine import EngineConfig, JumpMeasure
from pathdep import presets


@pytest.fixture
def grid():
    return TimeGrid.uniform(1.0, 2**-6)


@pytest.fixture
def step_path():
    # 1.0 on [0, 1), 2.0 on [1, 2]
    g = TimeGrid.uniform(2.0, 0.125)
    return CadlagPath.from_steps(g, [1.0], [1.0, 2.0])


@pytest.fixture
def jump_model():
    F = JumpMeasure.from_atoms([(1.0, 0.5)])
    return presets.constant(1, beta=0.1, sigma=0.2, jump_scale=1.0, F=F), F


def start_at(grid, x0=0.0, s=0.0):
    return InitialCondition(s, CadlagPath.constant(grid, np.atleast_1d(x0)))


def engine_for(coeffs, F, grid, **kw):
    return EngineConfig(coeffs, F, grid, **kw)
