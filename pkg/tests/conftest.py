import numpy as np
import pytest

from lsa_infer.model import make_random_hurwitz


@pytest.fixture(scope="session")
def inst2():
    """d = 2 atom instance with multiplicative noise, shared by several tests."""
    return make_random_hurwitz(2, 1, (0.5, 1.5), 1.0, a_noise_scale=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
