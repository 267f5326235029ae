import numpy as np
import pytest

from corrcache.baselines import (
    SchemeId,
    lc_nm_expected_rate,
    lc_u_expected_rate,
    memory_sharing_placement,
    rap_cm,
    rap_cm_rate,
    simulate_local_caching,
    uncoded_prefetch_reference,
)
from corrcache.bound import m_bar
from corrcache.caching import CacheConfiguration
from corrcache.demand import DemandDistribution, zipf
from corrcache.harness import Scenario


def test_local_caching_closed_forms():
    q = DemandDistribution.uniform(4)
    assert lc_u_expected_rate(q, 2, 2) == pytest.approx(1.0)
    assert lc_u_expected_rate(q, 2, 0) == pytest.approx(2.0)
    assert lc_u_expected_rate(q, 2, 4) == 0.0
    assert lc_nm_expected_rate(q, 2, 4) == 0.0
    assert lc_nm_expected_rate(
        DemandDistribution.uniform(2), 2, 0
    ) == pytest.approx(1.5)


def test_local_caching_ordering_and_monotonicity():
    q = zipf(50, 0.8)
    for n in (1, 3, 10):
        u = [lc_u_expected_rate(q, n, M) for M in range(51)]
        nm = [lc_nm_expected_rate(q, n, M) for M in range(51)]
        assert np.all(np.array(nm) <= np.array(u) + 1e-12)
        assert np.all(np.diff(u) <= 1e-12)
        assert np.all(np.diff(nm) <= 1e-12)
        if n == 1:
            assert np.allclose(u, nm)


def test_local_caching_bad_M():
    with pytest.raises(ValueError):
        lc_u_expected_rate(zipf(5, 0.8), 2, 6)


@pytest.mark.parametrize("scheme", [SchemeId.LC_U, SchemeId.LC_NM])
def test_local_caching_simulation_matches(scheme):
    q = zipf(20, 0.8)
    n, M = 5, 3
    mean, stderr = simulate_local_caching(
        scheme, q, n, M, n_draws=4000, rng=np.random.default_rng(0)
    )
    expected = (
        lc_u_expected_rate(q, n, M)
        if scheme == SchemeId.LC_U
        else lc_nm_expected_rate(q, n, M)
    )
    assert abs(mean - expected) <= 4.0 * stderr


def test_simulation_rejects_coded_schemes():
    with pytest.raises(ValueError):
        simulate_local_caching(SchemeId.RAP_CM, zipf(5, 0.8), 2, 1)


def test_scheme_ids():
    assert str(SchemeId.CA_RAP_CM) == "CA_RAP_CM"
    assert SchemeId("LC_NM") is SchemeId.LC_NM
    assert SchemeId.RAP_CM.coded and not SchemeId.LC_U.coded


def test_uncoded_prefetch_reference():
    """The correlation-unaware reference needs 5 quarter-files for any
    two distinct demands."""

    caches = memory_sharing_placement(4, 4, 2)
    assert caches.load(0) == 1.0 and caches.load(1) == 1.0
    assert uncoded_prefetch_reference((2, 0)) == 1.25
    assert uncoded_prefetch_reference((1, 3)) == 1.25
    with pytest.raises(ValueError):
        memory_sharing_placement(4, 6, 2)


def test_rap_cm_rate_ignores_correlation(example1_scenario, example1_caches):
    config = example1_scenario.library_config()
    # nothing of the requested files is cached, so 4 packets go out
    assert rap_cm_rate(example1_caches, (2, 0), config) == 2.0

    empty = CacheConfiguration.empty(n=2, B=2)
    assert rap_cm_rate(empty, (1, 1), config) == 1.0


def test_rap_cm_runs_only_that_scheme():
    scenario = Scenario(
        name="tiny",
        m=6,
        B=4,
        delta=0.2,
        match="uniform",
        match_value=0.5,
        n=3,
        M_values=(0, 2),
        cache_draws=4,
        demand_draws=25,
    )
    record = rap_cm(scenario, workers=1)
    assert set(record.series()) == {"RAP_CM"}
    # empty caches: one uncoded stream per distinct request
    empty = record.point("RAP_CM", 0)
    expected = m_bar(scenario.demand_distribution(), scenario.n)
    assert abs(empty["mean_rate"] - expected) <= 3 * empty["stderr"] + 1e-9
