import numpy as np
import pytest

from corrcache._tests.conftest import P
from corrcache.caching import CacheConfiguration
from corrcache.demand import (
    DemandDistribution,
    packet_demand,
    sample_demand,
    zipf,
)
from corrcache.library import (
    CorrelationModel,
    LibraryConfig,
    TabulatedEntropy,
)


def test_zipf():
    q = zipf(4, 0.0)
    assert np.allclose(q.q, 0.25)

    q = zipf(100, 0.8)
    assert np.isclose(q.q.sum(), 1.0)
    assert np.all(np.diff(q.q) < 0)
    assert np.isclose(q.q[0] / q.q[1], 2**0.8)

    with pytest.raises(ValueError):
        zipf(0, 0.8)


def test_distribution_validation():
    with pytest.raises(ValueError):
        DemandDistribution([0.5, 0.6])
    with pytest.raises(ValueError):
        DemandDistribution([1.5, -0.5])


def test_ranking_breaks_ties_by_index():
    q = DemandDistribution([0.2, 0.4, 0.2, 0.2])
    assert q.ranking().tolist() == [1, 0, 2, 3]


def test_sample_demand_is_reproducible():
    q = zipf(10, 0.8)
    a = sample_demand(q, 20, np.random.default_rng(5))
    b = sample_demand(q, 20, np.random.default_rng(5))
    assert a == b
    assert a.n == 20
    assert all(0 <= f < 10 for f in a)


def test_sample_demand_follows_q():
    q = DemandDistribution([0.7, 0.2, 0.1])
    f = sample_demand(q, 20000, np.random.default_rng(0))
    freq = np.bincount(np.array(f), minlength=3) / 20000
    assert np.allclose(freq, q.q, atol=0.02)


def test_example1_packet_demand(example1_model, example1_caches):
    """Receiver 1 substitutes W_{3,1} by its cached W_{4,1}; receiver 2
    substitutes W_{1,2} by its cached W_{2,2}."""

    Q = packet_demand((2, 0), example1_caches, example1_model)
    assert Q.requests == (frozenset({P(3, 2)}), frozenset({P(1, 1)}))
    assert Q.substitutions[0][0].wanted == P(3, 1)
    assert Q.substitutions[0][0].substitute == P(4, 1)
    assert Q.substitutions[1][0].wanted == P(1, 2)
    assert Q.substitutions[1][0].substitute == P(2, 2)
    assert Q.local_refinement(0) == 0.125
    assert Q.local_refinement(1) == 0.125
    assert Q.all_requested() == {P(3, 2), P(1, 1)}


def test_cached_packets_are_not_requested(example1_model):
    caches = CacheConfiguration.pinned([{P(3, 1), P(3, 2)}], B=2)
    Q = packet_demand((2,), caches, example1_model)
    assert Q.requests == (frozenset(),)
    assert Q.substitutions == ((),)


def test_no_cache_requests_everything(example1_model):
    caches = CacheConfiguration.empty(n=2, B=2)
    Q = packet_demand((0, 0), caches, example1_model)
    assert Q.requests[0] == {P(1, 1), P(1, 2)}
    assert Q.requests[1] == {P(1, 1), P(1, 2)}


@pytest.mark.parametrize(
    "joints, chosen",
    [
        ((0.625, 0.625), P(2, 2)),
        ((0.625, 0.55), P(3, 1)),
    ],
)
def test_substitute_is_closest_then_lowest(joints, chosen):
    """The cached partner with the smallest conditional entropy wins, the
    lowest (file, packet) on ties."""

    config = LibraryConfig.uniform(m=3, B=2, delta=0.5, value=0.5)
    pairs = [(P(1, 1), P(2, 2)), (P(1, 1), P(3, 1))]
    model = CorrelationModel(
        config, pairs, entropy=TabulatedEntropy(dict(zip(pairs, joints)))
    )
    caches = CacheConfiguration.pinned([{P(3, 1), P(2, 2)}], B=2)
    Q = packet_demand((0,), caches, model)
    assert Q.requests == (frozenset({P(1, 2)}),)
    (sub,) = Q.substitutions[0]
    assert sub.wanted == P(1, 1)
    assert sub.substitute == chosen
    assert sub.refinement == pytest.approx(
        model.joint_entropy(P(1, 1), chosen) - 0.5
    )
