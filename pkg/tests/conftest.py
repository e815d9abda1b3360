import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(gen, d, rank=None, ridge=0.1):
    rank = d if rank is None else rank
    G = gen.standard_normal((d, rank))
    return G @ G.T / max(rank, 1) + ridge * np.eye(d)
