import numpy as np
import pytest
from app.services.linear_model import OverdeterminedSystem
from app.services.mdp_sim import FeatureMap, random_features, random_mrp
from app.services.utils import make_rng

"""
Shared fixtures: the toy system {2w = 1, w = 2}, seeded generators and small random
processes with features.
"""


@pytest.fixture
def toy_system():
    return OverdeterminedSystem([[2.0], [1.0]], [1.0, 2.0])


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def random_system_factory():
    def build(m: int, n: int, seed: int) -> OverdeterminedSystem:
        gen = make_rng(seed)
        return OverdeterminedSystem(gen.uniform(-1.0, 1.0, size=(m, n)), gen.uniform(-1.0, 1.0, size=m))
    return build


@pytest.fixture
def small_process():
    gen = make_rng(7)
    mrp = random_mrp(6, 0.8, gen)
    return mrp, random_features(6, 2, gen)


@pytest.fixture
def two_state_chain():
    P = np.array([[0.9, 0.1], [0.5, 0.5]])
    return P, FeatureMap(np.array([[1.0], [2.0]]))
