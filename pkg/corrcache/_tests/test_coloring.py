import numpy as np
import pytest

from corrcache._tests.conftest import P
from corrcache.baselines import correlation_unaware_model
from corrcache.caching import CacheConfiguration
from corrcache.coloring import (
    ClusterColoring,
    ColoringError,
    SizeGuardError,
    brute_force_chromatic_number,
    brute_force_min_cluster_coloring,
    build_codeword,
    check_coloring,
    choose_min,
    deliver,
    gclc1,
    gclc2,
    simulate_decoding,
)
from corrcache.demand import packet_demand
from corrcache.graph import build
from corrcache.harness import inject_fault, random_instance
from corrcache.library import LibraryConfig, build_synthetic_library


def _setup(model, caches, f=(2, 0)):
    Q = packet_demand(f, caches, model)
    return Q, build(caches, Q, model)


def test_example1_gclc1(example1_model, example1_caches):
    """One XOR of the two virtual packets serves both receivers, for a
    total rate of 1/2 + 4 refinements of 1/8."""

    Q, H = _setup(example1_model, example1_caches)
    coloring = gclc1(H)
    assert coloring.n_colors == 1
    assert check_coloring(coloring, H) == []

    plan = build_codeword(coloring, H, Q, example1_model)
    assert plan.transmissions[0].packets == (P(2, 1), P(4, 2))
    assert plan.refinements == (0.25, 0.25)
    assert plan.rate == 1.0

    decoding = simulate_decoding(plan, example1_caches, Q, example1_model)
    assert decoding.ok
    assert decoding.first_failure is None
    assert decoding.refinements == (0.25, 0.25)


def test_example1_gclc2_and_min(example1_model, example1_caches):
    Q, H = _setup(example1_model, example1_caches)
    coloring = gclc2(H)
    assert coloring.n_colors == 2
    assert all(v.is_root for v in coloring.representatives.values())
    plan = build_codeword(coloring, H, Q, example1_model)
    # two uncoded root packets plus both local refinements
    assert plan.rate == 1.25
    assert simulate_decoding(plan, example1_caches, Q, example1_model).ok

    assert choose_min(H).method == "gclc1"


def test_example1_exact(example1_model, example1_caches):
    _, H = _setup(example1_model, example1_caches)
    assert brute_force_min_cluster_coloring(H).n_colors == 1
    assert brute_force_chromatic_number(H) == 2


def test_deliver(example1_model, example1_caches):
    outcome = deliver(example1_caches, (2, 0), example1_model)
    assert outcome.rate == 1.0
    assert outcome.coloring.method == "gclc1"
    with pytest.raises(ValueError):
        deliver(example1_caches, (2, 0), example1_model, method="dsatur")


def test_trace(example1_model, example1_caches):
    outcome = deliver(example1_caches, (2, 0), example1_model)
    lines = outcome.plan.to_trace().splitlines()
    assert lines[0] == "# method=gclc1 B=2 rate=1.0"
    assert lines[1] == "color 0: (1,0) ^ (3,1)"
    assert lines[2] == "receiver 0: refinement 0.25"


def test_invalid_coloring_is_rejected(example1_model, example1_caches):
    """Putting both roots into one color breaks decoding; the codeword
    builder refuses it and the decoder catches it when forced."""

    Q, H = _setup(example1_model, example1_caches)
    roots = {v.cluster: v for v in H.roots}
    bad = ClusterColoring(
        representatives=roots,
        assignment={key: 0 for key in roots},
        n_colors=1,
    )
    assert check_coloring(bad, H)
    with pytest.raises(ColoringError):
        build_codeword(bad, H, Q, example1_model)

    plan = build_codeword(bad, H, Q, example1_model, validate=False)
    decoding = simulate_decoding(plan, example1_caches, Q, example1_model)
    assert not decoding.ok
    assert "unpeelable" in decoding.first_failure


def test_missing_cluster_is_invalid(example1_model, example1_caches):
    _, H = _setup(example1_model, example1_caches)
    coloring = gclc1(H)
    key = next(iter(coloring.representatives))
    partial = ClusterColoring(
        representatives={key: coloring.representatives[key]},
        assignment={key: 0},
        n_colors=1,
    )
    assert any("no color" in msg for msg in check_coloring(partial, H))


def test_fault_injection_is_detected(example1_model, example1_caches):
    outcome = deliver(example1_caches, (2, 0), example1_model)
    damaged = inject_fault(outcome.plan)
    decoding = simulate_decoding(
        damaged, example1_caches, outcome.demand, example1_model
    )
    assert not decoding.ok
    assert decoding.success == (False, True)


def test_nothing_to_deliver(example1_model):
    caches = CacheConfiguration.pinned(
        [{P(1, 1), P(1, 2)}, {P(1, 1), P(1, 2)}], B=2
    )
    outcome = deliver(caches, (0, 0), example1_model)
    assert outcome.coloring.n_colors == 0
    assert outcome.rate == 0.0


def test_naive_multicast_case():
    """Everybody wants the same file and caches nothing: one transmission
    per packet."""

    model = build_synthetic_library(LibraryConfig.identity(m=3, B=4))
    caches = CacheConfiguration.empty(n=5, B=4)
    outcome = deliver(caches, (1,) * 5, model)
    assert outcome.coloring.n_colors == 4
    assert outcome.rate == 1.0


def test_size_guard():
    model = build_synthetic_library(LibraryConfig.identity(m=4, B=10))
    caches = CacheConfiguration.empty(n=2, B=10)
    _, H = _setup(model, caches, (0, 1))
    with pytest.raises(SizeGuardError):
        brute_force_min_cluster_coloring(H)


def test_random_instances_decode():
    """Greedy colorings are valid and decode losslessly, refining each
    cluster by at most delta / B."""

    rng = np.random.default_rng(0)
    for _ in range(300):
        inst = random_instance(rng)
        Q, H = _setup(inst.model, inst.caches, inst.demand)
        delta, B = inst.model.config.delta, inst.model.config.B
        for coloring in (gclc1(H), gclc2(H), gclc1(H, rng=rng)):
            assert check_coloring(coloring, H) == []
            plan = build_codeword(coloring, H, Q, inst.model)
            report = simulate_decoding(plan, inst.caches, Q, inst.model)
            assert report.ok, report.first_failure
            assert all(
                d.refinement <= delta / B + 1e-12 for d in plan.deliveries
            )
            assert plan.n_colors <= len(H.clusters)


def test_exact_oracle_dominance():
    """The exact minimum never exceeds the greedy choice nor the chromatic
    number of the root-only graph."""

    rng = np.random.default_rng(1)
    checked = 0
    while checked < 300:
        inst = random_instance(rng, n_max=3, m_max=4, B_max=3)
        _, H = _setup(inst.model, inst.caches, inst.demand)
        if len(H.clusters) > 8:
            continue
        exact = brute_force_min_cluster_coloring(H)
        assert check_coloring(exact, H) == []
        assert exact.n_colors <= choose_min(H).n_colors
        assert exact.n_colors <= brute_force_chromatic_number(H)
        checked += 1


def test_identity_reduces_to_root_coloring():
    """Without correlation there are no virtual vertices and the cluster
    coloring is the conventional one."""

    rng = np.random.default_rng(2)
    for _ in range(200):
        inst = random_instance(
            rng, n_max=6, m_max=20, B_max=20, identity=True
        )
        Q, H = _setup(inst.model, inst.caches, inst.demand)
        assert H.n_virtual == 0
        assert gclc1(H) == gclc1(H.root_subgraph())

        aware = deliver(inst.caches, inst.demand, inst.model)
        unaware = deliver(
            inst.caches,
            inst.demand,
            correlation_unaware_model(inst.model.config),
        )
        assert aware.coloring.n_colors == unaware.coloring.n_colors
        assert aware.rate == unaware.rate
