import numpy as np
import pytest

from gridrnn import ArenaConfig, MotionConfig, PlaceCellEnsemble


@pytest.fixture
def arena():
    return ArenaConfig()


@pytest.fixture
def motion():
    return MotionConfig()


@pytest.fixture
def small_ensemble(arena):
    return PlaceCellEnsemble.sample(arena, n_cells=16, seed=11)


@pytest.fixture
def desk_ensemble(arena):
    return PlaceCellEnsemble.sample(arena, n_cells=128, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
