import numpy as np
import pytest

from corrcache.caching import CacheConfiguration
from corrcache.harness import example1, library_model
from corrcache.library import PacketId


def P(f, b):
    """Packet ``b`` of file ``f``, both counted from 1."""

    return PacketId(f - 1, b - 1)


@pytest.fixture
def example1_scenario():
    return example1()


@pytest.fixture
def example1_model(example1_scenario):
    return library_model(example1_scenario, example1_scenario.delta)


@pytest.fixture
def example1_caches():
    return CacheConfiguration.pinned(
        [{P(2, 1), P(4, 1)}, {P(2, 2), P(4, 2)}], B=2, M=1
    )


@pytest.fixture
def example1_demand():
    # receiver 1 wants file 3, receiver 2 wants file 1
    return (2, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(123)
