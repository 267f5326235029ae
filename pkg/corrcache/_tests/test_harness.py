import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from corrcache.baselines import SchemeId
from corrcache.bound import BoundInputs
from corrcache.caching import CachingDistribution
from corrcache.demand import sample_demand
from corrcache.harness import (
    BUILTINS,
    ResultRecord,
    Scenario,
    ScenarioError,
    _pilot,
    _placement_candidates,
    bound_check,
    emit,
    large_sweep,
    library_model,
    load_scenario,
    random_instance,
    run,
    verify,
)
from corrcache.utils import stream


SCENARIO_TOML = """
schema_version = 1
name = "small"
seed = 3

[library]
m = 8
B = 6
delta = 0.2
match = "uniform"
partners_per_packet = 2

[network]
n = 3

[demand]
alpha = 0.8

[sweep]
M = [0, 1, 2, 8]
schemes = ["LC_U", "LC_NM", "RAP_CM", "CA_RAP_CM"]

[samples]
cache_draws = 3
demand_draws = 4

[optimizer]
strategy = "truncated"
"""


def _small():
    return Scenario(
        name="small",
        m=8,
        B=6,
        delta=0.2,
        match="uniform",
        partners_per_packet=2,
        n=3,
        M_values=(0, 1, 2, 8),
        cache_draws=3,
        demand_draws=4,
        seed=3,
        strategy="truncated",
    )


def test_load_scenario_from_toml(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SCENARIO_TOML)
    scenario = load_scenario(path)
    assert scenario == _small()
    assert scenario.digest() == _small().digest()
    assert Scenario.from_dict(scenario.to_dict()) == scenario


def test_scenario_dumps_round_trip(tmp_path):
    scenario = BUILTINS["example1"]()
    path = tmp_path / "example1.toml"
    path.write_text(scenario.dumps())
    assert load_scenario(path) == scenario


@pytest.mark.parametrize(
    "patch, where",
    [
        ({"library": {"m": 8, "colour": 1}}, "library.colour"),
        ({"network": {"n": "three"}}, "network.n"),
        ({"samples": {"cache_draws": 0}}, "samples.cache_draws"),
        ({"optimizer": {"pilot_draws": -1}}, "optimizer.pilot_draws"),
        ({"sweep": {"M": [0, 9]}}, "sweep.M"),
        ({"sweep": {"schemes": ["LC_X"]}}, "sweep.schemes"),
        ({"schema_version": 2}, "schema_version"),
        ({"extra": 1}, "extra"),
    ],
)
def test_scenario_errors_name_the_field(patch, where):
    d = _small().to_dict()
    for key, value in patch.items():
        if isinstance(value, dict):
            d[key] = {**d[key], **value}
        else:
            d[key] = value
    with pytest.raises(ScenarioError, match=where):
        Scenario.from_dict(d)


def test_missing_scenario_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "nope.toml")


def test_builtins():
    assert set(BUILTINS) == {"example1", "large_sweep", "bound_check"}
    scenario = large_sweep()
    assert scenario.library_config().G[0, 1] == pytest.approx(0.04)
    assert scenario.M_values == (0, 1, 2, 5, 10, 20, 50, 100)
    assert scenario.pilot_draws == 20
    assert bound_check().schemes == (SchemeId.CA_RAP_CM,)


def test_example1_run(example1_scenario):
    record = run(example1_scenario, workers=1)
    assert record.point("CA_RAP_CM", 1)["mean_rate"] == 1.0
    assert record.point("RAP_CM", 1)["mean_rate"] == 2.0


def test_run_is_reproducible_and_sane():
    scenario = _small()
    a = run(scenario, workers=1)
    b = run(scenario, workers=1)
    assert a.to_frame().equals(b.to_frame())
    assert a.digest == scenario.digest()

    series = a.series()
    assert list(series) == ["LC_U", "LC_NM", "RAP_CM", "CA_RAP_CM"]
    for scheme, rows in series.items():
        assert [row["M"] for row in rows] == [0, 1, 2, 8]
        # M = m caches the whole library
        assert rows[-1]["mean_rate"] == 0.0
        assert all(row["mean_rate"] >= 0 for row in rows)
    assert all(row["n_samples"] == 12 for row in series["CA_RAP_CM"])
    assert all(row["bound"] >= 0 for row in series["CA_RAP_CM"])


def test_parallel_run_matches_serial():
    scenario = _small().with_schemes([SchemeId.CA_RAP_CM])
    serial = run(scenario, workers=1)
    parallel = run(scenario, workers=2)
    assert serial.to_frame().equals(parallel.to_frame())


def test_zero_delta_matches_rap_cm():
    """With a zero threshold both coded schemes see the same placement,
    demands and model, hence the same rates."""

    scenario = Scenario(
        name="zero",
        m=8,
        B=6,
        delta=0.0,
        match="uniform",
        partners_per_packet=2,
        n=3,
        M_values=(1, 2),
        schemes=(SchemeId.RAP_CM, SchemeId.CA_RAP_CM),
        cache_draws=2,
        demand_draws=3,
        strategy="truncated",
        pilot_draws=2,
    )
    record = run(scenario, workers=1)
    for M in (1, 2):
        aware = record.point("CA_RAP_CM", M)
        unaware = record.point("RAP_CM", M)
        assert aware["mean_rate"] == unaware["mean_rate"]
        assert aware["bound"] == unaware["bound"]
        assert aware["strategy"] == unaware["strategy"]


def test_emit(tmp_path):
    record = run(_small(), workers=1)
    written = emit(record, tmp_path / "out")
    names = sorted(path.name for path in written)
    assert names == [
        "plot_CA_RAP_CM.csv",
        "plot_LC_NM.csv",
        "plot_LC_U.csv",
        "plot_RAP_CM.csv",
        "rates.csv",
        "record.json",
    ]

    rates = pd.read_csv(tmp_path / "out" / "rates.csv")
    assert list(rates.columns) == [
        "scheme", "M", "mean_rate", "stderr", "bound"
    ]
    assert len(rates) == 16

    plot = pd.read_csv(tmp_path / "out" / "plot_CA_RAP_CM.csv")
    assert plot["M"].tolist() == [0, 1, 2, 8]

    first = (tmp_path / "out" / "rates.csv").read_bytes()
    emit(record, tmp_path / "out")
    assert (tmp_path / "out" / "rates.csv").read_bytes() == first

    with open(tmp_path / "out" / "record.json") as f:
        loaded = ResultRecord.from_dict(json.load(f))
    assert loaded.to_frame().equals(record.to_frame())


def test_emit_empty_record(tmp_path):
    record = ResultRecord(scenario={}, digest="")
    emit(record, tmp_path)
    text = (tmp_path / "rates.csv").read_text()
    assert text.strip() == "scheme,M,mean_rate,stderr,bound"


def test_traces(tmp_path, example1_scenario):
    record = run(replace(example1_scenario, traces=True), workers=1)
    assert len(record.traces) == 2
    emit(record, tmp_path)
    assert "color 0: (1,0) ^ (3,1)" in (tmp_path / "traces.txt").read_text()


def test_random_instance_is_reproducible():
    a = random_instance(np.random.default_rng(9))
    b = random_instance(np.random.default_rng(9))
    assert a.caches == b.caches
    assert a.demand == b.demand
    assert a.model.pairs == b.model.pairs


def test_verify_example1(example1_scenario):
    report = verify(example1_scenario, n_random=20)
    assert report.ok, report.summary()
    names = [check.name for check in report.checks]
    assert "example1 golden rates" in names
    assert "fault injection" in names
    assert "delta=0 equivalence" in names


def test_verify_without_sweep():
    report = verify(_small(), n_random=10, run_sweep=False)
    assert report.ok, report.summary()
    assert "bound dominates simulation" not in [c.name for c in report.checks]


def test_placement_candidates():
    scenario = replace(_small(), pilot_draws=2)
    inputs = BoundInputs(n=3, M=2, q=scenario.demand_distribution())
    optimized = CachingDistribution.uniform(8, 2)
    candidates = _placement_candidates(scenario, 2.0, inputs, optimized)
    assert [name for name, _ in candidates] == [
        "optimized",
        "truncated-2",
        "truncated-3",
        "truncated-4",
        "truncated-6",
        "truncated-8",
    ]
    assert candidates[0][1] is optimized
    # the narrowest one is local caching of the two most popular files
    assert np.allclose(candidates[1][1].p, [0.5, 0.5] + [0.0] * 6)


def test_pilot_scores_local_caching_exactly():
    """Identical caches leave nothing to code: the local-caching candidate
    scores the mean number of distinct uncached requests."""

    scenario = replace(_small(), pilot_draws=4)
    q = scenario.demand_distribution()
    inputs = BoundInputs(n=3, M=2, q=q)
    candidates = _placement_candidates(
        scenario, 2.0, inputs, CachingDistribution.uniform(8, 2)
    )
    model = library_model(scenario, 0.0)
    scores = _pilot(scenario, 2, candidates, model, q)
    assert len(scores) == len(candidates)
    assert scores == _pilot(scenario, 2, candidates, model, q)

    expected = np.mean(
        [
            len({f for f in sample_demand(q, 3, stream(3, 3, 2, k)) if f >= 2})
            for k in range(4)
        ]
    )
    assert scores[1] == pytest.approx(expected)


def test_bound_dominates_simulation_at_one_file():
    scenario = replace(
        bound_check(), M_values=(1,), cache_draws=4, demand_draws=10
    )
    (row,) = run(scenario, workers=1).series()["CA_RAP_CM"]
    assert row["n_samples"] == 40
    assert row["mean_rate"] <= 1.1 * row["bound"] + 3 * row["stderr"]


@pytest.mark.slow
def test_bound_dominates_simulation():
    """Correlation-aware rates stay below the bound (10% slack plus 3
    standard errors) over the whole sweep."""

    record = run(bound_check())
    for row in record.series()["CA_RAP_CM"]:
        assert row["n_samples"] >= 1000
        assert row["mean_rate"] <= 1.1 * row["bound"] + 3 * row["stderr"]


@pytest.mark.slow
def test_large_sweep_ordering():
    record = run(large_sweep())
    series = {
        scheme: {row["M"]: row for row in rows}
        for scheme, rows in record.series().items()
    }
    M_values = large_sweep().M_values
    for rows in series.values():
        for a, b in zip(M_values, M_values[1:]):
            slack = 2 * (rows[a]["stderr"] + rows[b]["stderr"]) + 1e-9
            assert rows[b]["mean_rate"] <= rows[a]["mean_rate"] + slack

    order = ["CA_RAP_CM", "RAP_CM", "LC_NM", "LC_U"]
    for M in M_values[1:]:
        rates = [series[s][M]["mean_rate"] for s in order]
        errs = [series[s][M]["stderr"] for s in order]
        for i in range(3):
            assert rates[i] <= rates[i + 1] + 2 * (errs[i] + errs[i + 1])

    ca = series["CA_RAP_CM"][10]["mean_rate"]
    assert 2.0 <= series["LC_U"][10]["mean_rate"] / ca <= 3.4
    assert 1.7 <= series["RAP_CM"][10]["mean_rate"] / ca <= 3.1
