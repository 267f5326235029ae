import numpy as np
import pytest

from corrcache._tests.conftest import P
from corrcache.caching import (
    CacheConfiguration,
    CachingDistribution,
    CachingError,
    lfu_place,
    rap_place,
    validate,
)
from corrcache.demand import DemandDistribution, zipf


def test_validate_reports_violations():
    assert validate(CachingDistribution.uniform(10, 2)).ok

    check = validate(CachingDistribution([0.6, 0.4], 2))
    assert not check.ok
    assert "cap violation" in check.violations[0]

    check = validate(CachingDistribution([0.6, 0.6], 1))
    assert not check.ok
    assert any("sum" in v for v in check.violations)

    check = validate(CachingDistribution([1.2, -0.2], 0.5))
    assert any("negative" in v for v in check.violations)


def test_no_cap_without_cache():
    assert validate(CachingDistribution([1.0, 0.0], 0)).ok


@pytest.mark.parametrize("M", [0.5, 1, 2.5, 4])
def test_rap_place_respects_capacity(M):
    """Systematic rounding keeps every cache within one packet of M."""

    B, n = 10, 6
    dist = CachingDistribution.uniform(8, M)
    caches = rap_place(dist, B, n, np.random.default_rng(1))
    assert caches.n == n
    for u in range(n):
        assert abs(caches.load(u) - M) <= 1.0 / B + 1e-12
        assert all(0 <= p.packet < B for p in caches[u])


def test_rap_place_zero_and_full_cache():
    empty = rap_place(CachingDistribution.uniform(5, 0), 4, 3, 0)
    assert all(len(c) == 0 for c in empty)

    full = rap_place(CachingDistribution.uniform(5, 5), 4, 3, 0)
    assert all(len(c) == 20 for c in full)


def test_rap_place_concentrates_on_supported_files():
    dist = CachingDistribution.truncated_uniform([3, 1, 0, 2], 2, 4, 2)
    caches = rap_place(dist, 6, 4, np.random.default_rng(2))
    for cache in caches:
        assert {p.file for p in cache} == {1, 3}
        assert len(cache) == 12


def test_rap_place_marginals():
    """Each packet of file f is cached with probability p_f * M."""

    dist = CachingDistribution([0.5, 0.3, 0.2], 1)
    B, n = 10, 4000
    caches = rap_place(dist, B, n, np.random.default_rng(3))
    freq = np.zeros(3)
    for cache in caches:
        for p in cache:
            freq[p.file] += 1
    freq /= n * B
    assert np.allclose(freq, dist.caching_probability(), atol=0.02)


def test_rap_place_is_reproducible():
    dist = CachingDistribution.uniform(10, 3)
    a = rap_place(dist, 8, 5, 11)
    b = rap_place(dist, 8, 5, 11)
    assert a == b
    assert hash(a) == hash(b)


def test_lfu_place():
    q = DemandDistribution([0.1, 0.5, 0.4])
    caches = lfu_place(q, 2, 3, 2)
    assert caches[0] == caches[1]
    assert {p.file for p in caches[0]} == {1, 2}
    assert caches.load(0) == 2

    with pytest.raises(ValueError):
        lfu_place(zipf(3, 1.0), 4, 2, 1)


def test_pinned_capacity_check():
    with pytest.raises(CachingError):
        CacheConfiguration.pinned([{P(1, 1), P(1, 2), P(2, 1)}], B=2, M=1)


def test_holders(example1_caches):
    assert example1_caches.holders(P(2, 1)) == {0}
    assert example1_caches.holders(P(4, 2)) == {1}
    assert example1_caches.holders(P(1, 1)) == frozenset()
    assert example1_caches.all_cached == {P(2, 1), P(4, 1), P(2, 2), P(4, 2)}


def test_text_form(example1_caches):
    text = example1_caches.to_text()
    assert text.splitlines()[1] == "0: 1,0 3,0"
    assert CacheConfiguration.from_text(text) == example1_caches
    with pytest.raises(CachingError):
        CacheConfiguration.from_text("0: 1,0\n")
