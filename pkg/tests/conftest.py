import numpy as np
import pytest

from skillstack.config import load_arm_model


@pytest.fixture(scope="session")
def model():
    return load_arm_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20260826)


def random_q(model, rng, n=1):
    """Uniform random configurations within the position limits."""
    qs = rng.uniform(model.q_min, model.q_max, size=(n, 7))
    return qs[0] if n == 1 else qs
