import numpy as np
import pytest

from underclust import _accel


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # JIT compilation happens once here so timed tests measure the algorithms
    _accel.warmup()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
