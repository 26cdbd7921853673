import numpy as np
import pytest

from ifcomp.data import synth_blobs
from ifcomp.model import init_mlp


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net():
    return init_mlp((5, 7, 6, 3), seed=3)


@pytest.fixture(scope="session")
def blobs4():
    return synth_blobs(k=4, d=8, n_per_class=30, spread=1.5, seed=0)
