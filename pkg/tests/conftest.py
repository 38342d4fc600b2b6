import numpy as np
import pytest

from softunlearn.data import gen_synthetic
from softunlearn.engine import prepare_run
from softunlearn.model import TrainConfig, train

CFG = TrainConfig()


@pytest.fixture(scope="session")
def cfg():
    return CFG


@pytest.fixture(scope="session")
def small_ds():
    # 150 rows -> 100 train / 25 validation / 25 test
    return gen_synthetic("biased_gauss", 150, d=5, seed=0)


@pytest.fixture(scope="session")
def small_model(small_ds):
    return train(*small_ds.train_arrays(), CFG)


@pytest.fixture(scope="session")
def small_prep(small_ds, small_model):
    return prepare_run(small_ds, CFG, "dp", model=small_model)


@pytest.fixture(scope="session")
def medium_ds():
    return gen_synthetic("biased_gauss", 600, d=5, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
