import numpy as np
import pytest

from kkreduce.config import load_instance


@pytest.fixture(scope="session")
def instances():
    """The shipped instances, loaded once per session."""
    return {name: load_instance(name) for name in ("coset_only", "su2_flat", "flat_const", "hopf")}


@pytest.fixture(scope="session")
def coset_only(instances):
    return instances["coset_only"]


@pytest.fixture(scope="session")
def flat_const(instances):
    return instances["flat_const"]


@pytest.fixture(scope="session")
def hopf(instances):
    return instances["hopf"]


@pytest.fixture(scope="session")
def su2_flat(instances):
    return instances["su2_flat"]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_ball(rng, n, dim, radius):
    """Points uniform in direction with radius uniform in [0, radius)."""
    d = rng.normal(size=(n, dim))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * (radius * rng.random(n))[:, None]
