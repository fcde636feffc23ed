import numpy as np
import pytest

from coeff import FieldFamily, constant_field, gen_channelized
from grid import build_broken_space, build_grids


@pytest.fixture
def grids():
    """12 x 12 fine cells, 3 x 3 coarse elements"""
    return build_grids(12, 3)


@pytest.fixture
def broken(grids):
    return build_broken_space(grids[1])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def contrast_coef(grids, rng):
    fine, _ = grids
    return np.exp(rng.uniform(0.0, np.log(1e3), fine.n_elements))


@pytest.fixture
def channel_family():
    return FieldFamily.single(gen_channelized(12, 20.0))


@pytest.fixture
def linear_family():
    return FieldFamily.single(constant_field(12, 0.0))
