"""Experiment orchestration: scenarios, seeded Monte Carlo sweeps over the
cache size, result records and their files, and the verification suite."""

from dataclasses import dataclass, field, replace
import hashlib
import json
from math import ceil
import multiprocessing
import os
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
import toml

from corrcache import __version__
from corrcache.baselines import (
    SchemeId,
    correlation_unaware_model,
    lc_nm_expected_rate,
    lc_u_expected_rate,
    uncoded_prefetch_reference,
)
from corrcache.bound import (
    BoundInputs,
    closed_form_bound,
    correlation_score,
    optimize_delta,
    optimize_p,
)
from corrcache.caching import (
    CacheConfiguration,
    CachingDistribution,
    rap_place,
)
from corrcache.coloring import (
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
from corrcache.demand import (
    DemandDistribution,
    packet_demand,
    sample_demand,
    zipf,
)
from corrcache.graph import build as build_graph
from corrcache.library import LibraryConfig, build_synthetic_library
from corrcache.logger import logger
from corrcache.utils import Timer, as_generator, mean_and_stderr, stream


SCHEMA_VERSION = 1
CSV_COLUMNS = ["scheme", "M", "mean_rate", "stderr", "bound"]
PLOT_COLUMNS = ["M", "mean_rate", "stderr", "bound"]
MATCH_MODES = ("identity", "uniform", "explicit")
WORKERS_ENV = "CORRCACHE_MAX_WORKERS"
PILOT_SPREADS = (1, 1.5, 2, 3, 5)

_SCHEMA = {
    "schema_version": int,
    "name": str,
    "seed": int,
    "library": {
        "m": int,
        "B": int,
        "delta": float,
        "match": str,
        "partners_per_packet": float,
        "value": float,
        "G": list,
    },
    "network": {"n": int},
    "demand": {"alpha": float, "q": list},
    "sweep": {"M": list, "schemes": list, "delta_grid": list},
    "samples": {"cache_draws": int, "demand_draws": int},
    "optimizer": {
        "strategy": str,
        "estimator": str,
        "max_iter": int,
        "n_samples": int,
        "pilot_draws": int,
    },
    "coloring": {"method": str},
    "pinned": {"caches": list, "demand": list},
    "output": {"directory": str, "traces": bool},
}


class ScenarioError(Exception):
    ...


def _fail(path, msg):
    msg = f"{path}: {msg}"
    logger.critical(msg)
    raise ScenarioError(msg)


def _check_schema(d, schema, path=""):
    for key, value in d.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            _fail(where, "unknown key")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                _fail(where, "expected a table")
            _check_schema(value, expected, where)
            continue
        if expected is float:
            ok = isinstance(value, (int, float)) and not isinstance(
                value, bool
            )
        elif expected is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, expected)
        if not ok:
            _fail(where, f"expected {expected.__name__}, got {value!r}")


@dataclass(frozen=True)
class Scenario:
    """A complete experiment description.

    Build one from a TOML file with :func:`load_scenario`, from a nested
    dictionary with :meth:`from_dict`, or take a built-in from
    :data:`BUILTINS`.
    """

    name: str = "scenario"
    m: int = 100
    B: int = 50
    delta: float = 0.2
    match: str = "uniform"
    partners_per_packet: float = None
    match_value: float = None
    G: tuple = None
    n: int = 10
    alpha: float = 0.8
    q: tuple = None
    M_values: tuple = (0, 1, 2, 5, 10, 20, 50, 100)
    schemes: tuple = tuple(SchemeId)
    delta_grid: tuple = None
    cache_draws: int = 20
    demand_draws: int = 50
    seed: int = 0
    strategy: str = "both"
    estimator: str = "closed"
    max_iter: int = 500
    n_samples: int = 100_000
    pilot_draws: int = 0
    coloring: str = "min"
    pinned_caches: tuple = None
    pinned_demand: tuple = None
    output_dir: str = "results"
    traces: bool = False

    def __post_init__(self):
        object.__setattr__(
            self, "schemes", tuple(SchemeId(s) for s in self.schemes)
        )
        object.__setattr__(
            self, "M_values", tuple(float(M) for M in self.M_values)
        )
        if self.delta_grid is None:
            object.__setattr__(self, "delta_grid", (float(self.delta),))
        else:
            object.__setattr__(
                self, "delta_grid", tuple(float(d) for d in self.delta_grid)
            )
        self._validate()

    def _validate(self):
        if self.m < 1:
            _fail("library.m", f"must be >= 1, got {self.m}")
        if self.B < 1:
            _fail("library.B", f"must be >= 1, got {self.B}")
        if not 0.0 <= self.delta <= 1.0:
            _fail("library.delta", f"must lie in [0, 1], got {self.delta}")
        if self.match not in MATCH_MODES:
            _fail("library.match", f"must be one of {MATCH_MODES}")
        if self.match == "explicit" and self.G is None:
            _fail("library.G", "required when match = 'explicit'")
        if (
            self.match == "uniform"
            and self.partners_per_packet is None
            and self.match_value is None
        ):
            _fail(
                "library.partners_per_packet",
                "uniform match needs partners_per_packet or value",
            )
        if self.n < 1:
            _fail("network.n", f"must be >= 1, got {self.n}")
        if self.q is not None and len(self.q) != self.m:
            _fail("demand.q", f"needs {self.m} entries, got {len(self.q)}")
        if any(not 0.0 <= M <= self.m for M in self.M_values):
            _fail("sweep.M", f"values must lie in [0, m={self.m}]")
        if any(not 0.0 <= d <= 1.0 for d in self.delta_grid):
            _fail("sweep.delta_grid", "values must lie in [0, 1]")
        if self.cache_draws < 1:
            _fail("samples.cache_draws", "must be >= 1")
        if self.demand_draws < 1:
            _fail("samples.demand_draws", "must be >= 1")
        if self.pilot_draws < 0:
            _fail("optimizer.pilot_draws", "must be >= 0")
        if self.strategy not in ("both", "pgd", "truncated"):
            _fail("optimizer.strategy", f"unknown value {self.strategy!r}")
        if self.estimator not in ("auto", "exact", "mc", "closed"):
            _fail("optimizer.estimator", f"unknown value {self.estimator!r}")
        if self.coloring not in ("min", "gclc1", "gclc2", "exact"):
            _fail("coloring.method", f"unknown value {self.coloring!r}")
        if (self.pinned_caches is None) != (self.pinned_demand is None):
            _fail("pinned", "caches and demand must be pinned together")
        if self.pinned_caches is not None:
            if len(self.pinned_caches) != self.n:
                _fail("pinned.caches", f"needs {self.n} receivers")
            if len(self.pinned_demand) != self.n:
                _fail("pinned.demand", f"needs {self.n} requests")
            if any(not 0 <= f < self.m for f in self.pinned_demand):
                _fail("pinned.demand", "file index out of range")

    @property
    def pinned(self):
        return self.pinned_caches is not None

    def library_config(self, delta=None):
        delta = self.delta if delta is None else delta
        if self.match == "identity":
            return LibraryConfig.identity(m=self.m, B=self.B, delta=delta)
        if self.match == "explicit":
            return LibraryConfig(m=self.m, B=self.B, delta=delta, G=self.G)
        if self.partners_per_packet is not None:
            return LibraryConfig.with_partners_per_packet(
                m=self.m,
                B=self.B,
                delta=delta,
                partners=self.partners_per_packet,
            )
        return LibraryConfig.uniform(
            m=self.m, B=self.B, delta=delta, value=self.match_value
        )

    def demand_distribution(self):
        if self.q is not None:
            return DemandDistribution(np.array(self.q, dtype=float))
        return zipf(self.m, self.alpha)

    def with_schemes(self, schemes):
        return replace(self, schemes=tuple(schemes))

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def to_dict(self):
        library = {
            "m": self.m,
            "B": self.B,
            "delta": self.delta,
            "match": self.match,
        }
        if self.partners_per_packet is not None:
            library["partners_per_packet"] = self.partners_per_packet
        if self.match_value is not None:
            library["value"] = self.match_value
        if self.G is not None:
            library["G"] = [list(row) for row in self.G]
        demand = {"alpha": self.alpha}
        if self.q is not None:
            demand["q"] = list(self.q)
        d = {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "library": library,
            "network": {"n": self.n},
            "demand": demand,
            "sweep": {
                "M": list(self.M_values),
                "schemes": [s.value for s in self.schemes],
                "delta_grid": list(self.delta_grid),
            },
            "samples": {
                "cache_draws": self.cache_draws,
                "demand_draws": self.demand_draws,
            },
            "optimizer": {
                "strategy": self.strategy,
                "estimator": self.estimator,
                "max_iter": self.max_iter,
                "n_samples": self.n_samples,
                "pilot_draws": self.pilot_draws,
            },
            "coloring": {"method": self.coloring},
            "output": {"directory": self.output_dir, "traces": self.traces},
        }
        if self.pinned:
            d["pinned"] = {
                "caches": [
                    [list(p) for p in sorted(c)] for c in self.pinned_caches
                ],
                "demand": list(self.pinned_demand),
            }
        return d

    @classmethod
    def from_dict(cls, d):
        """Builds a scenario from the nested TOML layout.

        Raises
        ------
        ScenarioError
            On unknown keys, wrong types or invalid values; the message
            starts with the dotted path of the offending field.
        """

        _check_schema(d, _SCHEMA)
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            _fail(
                "schema_version",
                f"expected {SCHEMA_VERSION}, got {version!r}",
            )

        library = d.get("library", {})
        demand = d.get("demand", {})
        sweep = d.get("sweep", {})
        samples = d.get("samples", {})
        optimizer = d.get("optimizer", {})
        output = d.get("output", {})
        pinned = d.get("pinned")

        kwargs = dict(
            name=d.get("name", "scenario"),
            seed=d.get("seed", 0),
            m=library.get("m", cls.m),
            B=library.get("B", cls.B),
            delta=float(library.get("delta", cls.delta)),
            match=library.get("match", cls.match),
            partners_per_packet=library.get("partners_per_packet"),
            match_value=library.get("value"),
            G=_as_tuple_matrix(library.get("G")),
            n=d.get("network", {}).get("n", cls.n),
            alpha=float(demand.get("alpha", cls.alpha)),
            q=tuple(demand["q"]) if "q" in demand else None,
            M_values=tuple(sweep.get("M", cls.M_values)),
            delta_grid=sweep.get("delta_grid"),
            cache_draws=samples.get("cache_draws", cls.cache_draws),
            demand_draws=samples.get("demand_draws", cls.demand_draws),
            strategy=optimizer.get("strategy", cls.strategy),
            estimator=optimizer.get("estimator", cls.estimator),
            max_iter=optimizer.get("max_iter", cls.max_iter),
            n_samples=optimizer.get("n_samples", cls.n_samples),
            pilot_draws=optimizer.get("pilot_draws", cls.pilot_draws),
            coloring=d.get("coloring", {}).get("method", cls.coloring),
            output_dir=output.get("directory", cls.output_dir),
            traces=output.get("traces", cls.traces),
        )
        if "schemes" in sweep:
            known = {s.value for s in SchemeId}
            bad = [s for s in sweep["schemes"] if s not in known]
            if bad:
                _fail("sweep.schemes", f"unknown schemes {bad}")
            kwargs["schemes"] = tuple(sweep["schemes"])
        if pinned is not None:
            kwargs["pinned_caches"] = tuple(
                tuple(tuple(p) for p in c) for c in pinned.get("caches", [])
            )
            kwargs["pinned_demand"] = tuple(pinned.get("demand", []))

        try:
            return cls(**kwargs)
        except ScenarioError:
            raise
        except (ValueError, TypeError) as err:
            _fail("scenario", str(err))

    def dumps(self):
        return toml.dumps(self.to_dict())

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def _as_tuple_matrix(G):
    if G is None:
        return None
    return tuple(tuple(float(x) for x in row) for row in G)


def example1():
    """Two receivers, four files of two packets, ``M = 1``: files 0 and 1
    are packet-wise correlated, and so are files 2 and 3."""

    G = ((1, 1, 0, 0), (1, 1, 0, 0), (0, 0, 1, 1), (0, 0, 1, 1))
    return Scenario(
        name="example1",
        m=4,
        B=2,
        delta=0.25,
        match="explicit",
        G=G,
        n=2,
        q=(0.25, 0.25, 0.25, 0.25),
        M_values=(1,),
        schemes=(SchemeId.CA_RAP_CM, SchemeId.RAP_CM),
        cache_draws=1,
        demand_draws=1,
        pinned_caches=(((1, 0), (3, 0)), ((1, 1), (3, 1))),
        pinned_demand=(2, 0),
    )


def large_sweep():
    """Ten receivers, a hundred Zipf files, four partners per packet."""

    return Scenario(
        name="large_sweep",
        m=100,
        B=50,
        delta=0.2,
        match="uniform",
        match_value=0.04,
        n=10,
        alpha=0.8,
        M_values=(0, 1, 2, 5, 10, 20, 50, 100),
        cache_draws=20,
        demand_draws=50,
        pilot_draws=20,
    )


def bound_check():
    """Five receivers and twenty files, checked against the bound."""

    return Scenario(
        name="bound_check",
        m=20,
        B=50,
        delta=0.2,
        match="uniform",
        partners_per_packet=2,
        n=5,
        alpha=0.8,
        M_values=(1, 2, 5, 10, 20),
        schemes=(SchemeId.CA_RAP_CM,),
        cache_draws=20,
        demand_draws=50,
    )


BUILTINS = {
    "example1": example1,
    "large_sweep": large_sweep,
    "bound_check": bound_check,
}


def load_scenario(source):
    """Returns the built-in scenario named ``source`` or loads a TOML
    scenario file."""

    if str(source) in BUILTINS:
        return BUILTINS[str(source)]()
    path = Path(source)
    if not path.exists():
        msg = f"Scenario file {path} does not exist"
        logger.critical(msg)
        raise FileNotFoundError(msg)
    try:
        d = toml.load(path)
    except toml.TomlDecodeError as err:
        _fail(str(path), f"invalid TOML ({err})")
    return Scenario.from_dict(d)


def library_model(scenario, delta):
    """The correlation model used at threshold ``delta``; ``delta == 0``
    means no correlated pairs."""

    config = scenario.library_config(delta)
    if delta == 0.0:
        return correlation_unaware_model(config)
    return build_synthetic_library(config, seed=scenario.seed)


@dataclass
class ResultRecord:
    """The outcome of :func:`run`.

    ``points`` holds one dictionary per ``(scheme, M)`` with keys
    ``scheme``, ``M``, ``mean_rate``, ``stderr``, ``n_samples``,
    ``bound``, ``delta``, ``p_digest`` and ``strategy``.
    """

    scenario: dict
    digest: str
    points: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    version: str = __version__
    runtime: float = 0.0

    def _sorted_points(self):
        order = {s: i for i, s in enumerate(SchemeId)}
        return sorted(
            self.points, key=lambda r: (order[SchemeId(r["scheme"])], r["M"])
        )

    def point(self, scheme, M):
        for row in self.points:
            if row["scheme"] == str(scheme) and row["M"] == float(M):
                return row
        raise KeyError((str(scheme), M))

    def series(self):
        out = {}
        for row in self._sorted_points():
            out.setdefault(row["scheme"], []).append(row)
        return out

    def to_frame(self):
        rows = [
            {key: row[key] for key in CSV_COLUMNS}
            for row in self._sorted_points()
        ]
        return pd.DataFrame(rows, columns=CSV_COLUMNS)

    def to_dict(self):
        return {
            "version": self.version,
            "digest": self.digest,
            "scenario": self.scenario,
            "points": self._sorted_points(),
            "runtime": self.runtime,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            scenario=d["scenario"],
            digest=d["digest"],
            points=list(d["points"]),
            version=d.get("version", __version__),
            runtime=d.get("runtime", 0.0),
        )


def _simulate_cache_draw(task):
    """Module-level worker: one cache draw of one coded scheme at one cache
    size, followed by all its demand draws."""

    scheme, M_index, c = task["scheme"], task["M_index"], task["c"]
    model, seed = task["model"], task["seed"]
    B, n, q = task["B"], task["n"], task["q"]

    if task["pinned_caches"] is not None:
        caches = CacheConfiguration.pinned(task["pinned_caches"], B=B)
    else:
        dist = CachingDistribution(task["p"], task["M"])
        caches = rap_place(dist, B, n, stream(seed, 0, M_index, c))

    rates, traces = [], []
    for d in range(task["demand_draws"]):
        if task["pinned_demand"] is not None:
            f = task["pinned_demand"]
        else:
            f = sample_demand(q, n, stream(seed, 1, M_index, c, d))
        outcome = deliver(caches, f, model, task["method"])
        rates.append(outcome.rate)
        if task["traces"]:
            traces.append((scheme, task["M"], c, d, outcome.plan.to_trace()))
    return {
        "scheme": scheme,
        "M_index": M_index,
        "c": c,
        "rates": rates,
        "traces": traces,
    }


def max_workers():
    value = os.environ.get(WORKERS_ENV)
    if value is None:
        return multiprocessing.cpu_count()
    try:
        return max(1, int(value))
    except ValueError:
        logger.warning(f"Ignoring {WORKERS_ENV}={value!r}")
        return multiprocessing.cpu_count()


def _coded_point(scenario, scheme, M_index, models):
    """Optimized placement, bound and model of one coded sweep point."""

    M = scenario.M_values[M_index]
    q = scenario.demand_distribution()
    if scheme == SchemeId.CA_RAP_CM:
        grid = scenario.delta_grid
        config = scenario.library_config()
    else:
        grid = (0.0,)
        config = LibraryConfig.identity(m=scenario.m, B=scenario.B)

    if scenario.pinned:
        delta = scenario.delta if scheme == SchemeId.CA_RAP_CM else 0.0
        info = {
            "delta": delta,
            "bound": float("nan"),
            "p": None,
            "p_digest": "",
            "strategy": "pinned",
        }
    else:
        inputs = BoundInputs(
            n=scenario.n,
            M=M,
            q=q,
            delta=config.delta,
            G=config.G,
            n_samples=scenario.n_samples,
            seed=scenario.seed,
            estimator=scenario.estimator,
        )
        if len(grid) == 1:
            G = np.eye(scenario.m) if grid[0] == 0.0 else config.G
            result = optimize_p(
                inputs.with_delta(grid[0], G),
                strategy=scenario.strategy,
                max_iter=scenario.max_iter,
            )
            delta, bound = grid[0], result.bound
            dist, strategy = result.distribution, result.strategy
        else:
            choice = optimize_delta(inputs, grid, strategy=scenario.strategy)
            delta, bound = choice.delta, choice.bound
            dist, strategy = choice.distribution, "delta-grid"
        if delta not in models:
            models[delta] = library_model(scenario, delta)
        if scenario.pilot_draws and 0.0 < M < scenario.m:
            G = np.eye(scenario.m) if delta == 0.0 else config.G
            at_delta = inputs.with_delta(delta, G)
            candidates = _placement_candidates(scenario, M, at_delta, dist)
            scores = _pilot(scenario, M_index, candidates, models[delta], q)
            k = int(np.argmin(scores))
            if k:
                strategy, dist = candidates[k]
                bound = closed_form_bound(at_delta, dist.p)
            logger.info(
                f"Pilot at M={M:g} keeps {strategy} "
                f"({scores[k]:.4f} against {scores[0]:.4f})"
            )
        info = {
            "delta": delta,
            "bound": float(bound),
            "p": dist.p,
            "p_digest": dist.digest(),
            "strategy": strategy,
        }

    if info["delta"] not in models:
        models[info["delta"]] = library_model(scenario, info["delta"])
    info["model"] = models[info["delta"]]
    return info


def _placement_candidates(scenario, M, inputs, optimized):
    """The bound-optimized distribution followed by uniform distributions
    over the ``m_tilde`` top-ranked files, ``m_tilde`` a few multiples of
    ``M``."""

    m = scenario.m
    order = np.lexsort((np.arange(m), -correlation_score(inputs.q, inputs.G)))
    sizes = sorted(
        {
            min(m, max(ceil(M - 1e-12), int(round(M * k))))
            for k in PILOT_SPREADS
        }
    )
    candidates = [("optimized", optimized)]
    for m_tilde in sizes:
        candidates.append(
            (
                f"truncated-{m_tilde}",
                CachingDistribution.truncated_uniform(order, m_tilde, m, M),
            )
        )
    return candidates


def _pilot(scenario, M_index, candidates, model, q):
    """Mean simulated rate of every candidate placement over
    ``scenario.pilot_draws`` (cache, demand) draws.

    All candidates and both coded schemes share the streams
    ``(seed, 2, M_index, k)`` and ``(seed, 3, M_index, k)``.
    """

    scores = []
    for name, dist in candidates:
        rates = []
        for k in range(scenario.pilot_draws):
            caches = rap_place(
                dist,
                scenario.B,
                scenario.n,
                stream(scenario.seed, 2, M_index, k),
            )
            f = sample_demand(
                q, scenario.n, stream(scenario.seed, 3, M_index, k)
            )
            rates.append(deliver(caches, f, model, scenario.coloring).rate)
        scores.append(float(np.mean(rates)))
        logger.debug(f"Pilot {name}: {scores[-1]:.4f}")
    return scores


def _local_point(scenario, scheme, M):
    q = scenario.demand_distribution()
    M_int = min(int(np.floor(M + 1e-9)), scenario.m)
    rate = (
        lc_u_expected_rate(q, scenario.n, M_int)
        if scheme == SchemeId.LC_U
        else lc_nm_expected_rate(q, scenario.n, M_int)
    )
    return {
        "scheme": scheme.value,
        "M": M,
        "mean_rate": rate,
        "stderr": 0.0,
        "n_samples": 0,
        "bound": float("nan"),
        "delta": 0.0,
        "p_digest": "",
        "strategy": "closed-form",
    }


def run(scenario, workers=None):
    """Runs every scheme of ``scenario`` over its cache-size sweep.

    Coded schemes draw their caches from the stream
    ``(seed, 0, M_index, cache_draw)`` and their demands from
    ``(seed, 1, M_index, cache_draw, demand_draw)``, so both coded schemes
    see the same randomness and any point can be reproduced on its own.

    Parameters
    ----------
    scenario : Scenario
    workers : int, optional
        Process count; defaults to ``CORRCACHE_MAX_WORKERS`` or the CPU
        count. ``1`` runs everything in-process.

    Returns
    -------
    ResultRecord
    """

    workers = max_workers() if workers is None else max(1, int(workers))
    q = scenario.demand_distribution()
    record = ResultRecord(
        scenario=scenario.to_dict(), digest=scenario.digest()
    )

    with Timer() as timer:
        tasks, meta, models = [], {}, {}
        for scheme in scenario.schemes:
            for M_index, M in enumerate(scenario.M_values):
                if not scheme.coded:
                    record.points.append(_local_point(scenario, scheme, M))
                    continue
                logger.info(f"Preparing {scheme} at M={M:g}")
                info = _coded_point(scenario, scheme, M_index, models)
                meta[(scheme.value, M_index)] = info
                for c in range(scenario.cache_draws):
                    tasks.append(
                        {
                            "scheme": scheme.value,
                            "M_index": M_index,
                            "M": M,
                            "c": c,
                            "model": info["model"],
                            "p": info["p"],
                            "seed": scenario.seed,
                            "B": scenario.B,
                            "n": scenario.n,
                            "q": q,
                            "demand_draws": scenario.demand_draws,
                            "method": scenario.coloring,
                            "pinned_caches": scenario.pinned_caches,
                            "pinned_demand": scenario.pinned_demand,
                            "traces": scenario.traces,
                        }
                    )

        n_workers = min(workers, len(tasks))
        if n_workers <= 1:
            results = [_simulate_cache_draw(t) for t in tasks]
        else:
            logger.info(
                f"Simulating {len(tasks)} draws on {n_workers} workers"
            )
            with multiprocessing.Pool(n_workers) as pool:
                results = list(
                    pool.imap_unordered(_simulate_cache_draw, tasks)
                )

        results.sort(key=lambda r: (r["scheme"], r["M_index"], r["c"]))
        rates = {}
        for r in results:
            rates.setdefault((r["scheme"], r["M_index"]), []).extend(
                r["rates"]
            )
            record.traces.extend(r["traces"])

        for (scheme, M_index), info in sorted(meta.items()):
            values = rates.get((scheme, M_index), [])
            mean, stderr = mean_and_stderr(values)
            record.points.append(
                {
                    "scheme": scheme,
                    "M": scenario.M_values[M_index],
                    "mean_rate": mean,
                    "stderr": stderr,
                    "n_samples": len(values),
                    "bound": info["bound"],
                    "delta": info["delta"],
                    "p_digest": info["p_digest"],
                    "strategy": info["strategy"],
                }
            )

    record.runtime = timer.seconds
    logger.success(
        f"Scenario {scenario.name} done in {timer.dt:.01f} {timer.units}"
    )
    return record


def emit(record, directory, formats=("json", "csv", "plot")):
    """Writes the files of ``record`` into ``directory``: ``record.json``,
    ``rates.csv`` (columns scheme, M, mean_rate, stderr, bound), one
    ``plot_<scheme>.csv`` per scheme ordered by M and, when the record
    holds traces, ``traces.txt``.

    Returns
    -------
    list of pathlib.Path
    """

    directory = Path(directory)
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        if "json" in formats:
            path = directory / "record.json"
            with open(path, "w") as f:
                json.dump(record.to_dict(), f, indent=2, sort_keys=True)
                f.write("\n")
            written.append(path)
        if "csv" in formats:
            path = directory / "rates.csv"
            record.to_frame().to_csv(path, index=False)
            written.append(path)
        if "plot" in formats:
            for scheme, rows in record.series().items():
                path = directory / f"plot_{scheme}.csv"
                frame = pd.DataFrame(
                    [{key: row[key] for key in PLOT_COLUMNS} for row in rows],
                    columns=PLOT_COLUMNS,
                )
                frame.to_csv(path, index=False)
                written.append(path)
        if record.traces:
            path = directory / "traces.txt"
            with open(path, "w") as f:
                for scheme, M, c, d, trace in record.traces:
                    f.write(f"## {scheme} M={M:g} cache={c} demand={d}\n")
                    f.write(trace)
            written.append(path)
    except OSError as err:
        logger.critical(f"Could not write results to {directory}: {err}")
        raise

    logger.success(f"Wrote {len(written)} files to {directory}")
    return written


class Instance(NamedTuple):
    """A small random delivery instance."""

    model: object
    caches: CacheConfiguration
    demand: tuple


def random_instance(
    rng=None,
    n_max=4,
    m_max=6,
    B_max=4,
    identity=False,
    cache_probability=0.3,
    pair_probability=0.5,
):
    """Draws a random small instance: random sparse packet correlation
    (a random number of pairs per file pair), independent random caches and
    random demands."""

    rng = as_generator(rng)
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(2, m_max + 1))
    B = int(rng.integers(1, B_max + 1))
    delta = float(rng.uniform(0.05, 1.0))

    G = np.eye(m)
    if not identity:
        for f in range(m):
            for g in range(f + 1, m):
                if rng.random() < pair_probability:
                    k = int(rng.integers(1, B + 1))
                    G[f, g] = G[g, f] = k / B
    config = LibraryConfig(m=m, B=B, delta=delta, G=G)
    model = build_synthetic_library(config, seed=int(rng.integers(2**31)))

    caches = []
    for _ in range(n):
        mask = rng.random((m, B)) < cache_probability
        caches.append({(int(f), int(b)) for f, b in np.argwhere(mask)})
    caches = CacheConfiguration.pinned(caches, B=B)
    demand = tuple(int(f) for f in rng.integers(0, m, size=n))
    return Instance(model, caches, demand)


class Check(NamedTuple):
    name: str
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)

    @property
    def ok(self):
        return all(c.passed for c in self.checks)

    def add(self, name, passed, detail=""):
        self.checks.append(Check(name, bool(passed), detail))
        if not passed:
            logger.error(f"Check {name} failed: {detail}")

    def summary(self):
        return "\n".join(
            f"[{'PASS' if c.passed else 'FAIL'}] {c.name}"
            + (f": {c.detail}" if c.detail else "")
            for c in self.checks
        )


def inject_fault(plan):
    """Removes the packet of the first delivery from its transmission."""

    d = plan.deliveries[0]
    transmissions = list(plan.transmissions)
    t = transmissions[d.color]
    transmissions[d.color] = t._replace(
        packets=tuple(p for p in t.packets if p != d.delivered)
    )
    return replace(plan, transmissions=tuple(transmissions))


def _check_realization(report, label, caches, f, model):
    """Validity, decodability and refinement size of both greedy
    colorings and of their minimum."""

    B, delta = model.config.B, model.config.delta
    Q = packet_demand(f, caches, model)
    H = build_graph(caches, Q, model)
    for method, color in (("gclc1", gclc1), ("gclc2", gclc2)):
        coloring = color(H)
        problems = check_coloring(coloring, H)
        if problems:
            report.add(f"{label} {method} validity", False, problems[0])
            return False
        plan = build_codeword(coloring, H, Q, model)
        decoding = simulate_decoding(plan, caches, Q, model)
        if not decoding.ok:
            report.add(
                f"{label} {method} decoding", False, decoding.first_failure
            )
            return False
        worst = max(
            [d.refinement for d in plan.deliveries]
            + [s.refinement for ss in Q.substitutions for s in ss]
            + [0.0]
        )
        if worst > delta / B + 1e-12:
            report.add(
                f"{label} {method} refinement",
                False,
                f"refinement {worst} exceeds delta/B={delta / B}",
            )
            return False
    return True


def _zero_delta_scenario(seed):
    return Scenario(
        name="zero_delta",
        m=8,
        B=6,
        delta=0.0,
        match="uniform",
        partners_per_packet=2,
        n=3,
        M_values=(1, 2, 4),
        schemes=(SchemeId.RAP_CM, SchemeId.CA_RAP_CM),
        cache_draws=2,
        demand_draws=3,
        seed=seed,
        strategy="truncated",
        pilot_draws=2,
    )


def verify(scenario=None, n_random=50, seed=0, run_sweep=True):
    """Runs the invariant suite.

    * every greedy coloring of the scenario's realizations (or of random
      instances) is valid, decodes losslessly and refines by at most
      ``delta / B`` per cluster;
    * the exact minimum cluster coloring uses no more colors than the
      greedy one nor than the chromatic number of the root-only graph;
    * the correlation-aware pipeline at a zero threshold reproduces the
      RAP/CM pipeline seed for seed;
    * a damaged codeword is caught by the decoder;
    * the simulated correlation-aware rate stays below the bound (10%
      slack plus 3 standard errors) when the scenario is swept.

    Returns
    -------
    VerificationReport
    """

    report = VerificationReport()
    rng = as_generator(seed)

    realizations = []
    if scenario is not None and scenario.pinned:
        model = library_model(scenario, scenario.delta)
        caches = CacheConfiguration.pinned(
            scenario.pinned_caches, B=scenario.B
        )
        realizations.append(
            ("scenario", caches, scenario.pinned_demand, model)
        )
    for i in range(n_random):
        inst = random_instance(rng)
        realizations.append(
            (f"random[{i}]", inst.caches, inst.demand, inst.model)
        )

    ok = all(
        _check_realization(report, label, caches, f, model)
        for label, caches, f, model in realizations
    )
    report.add("coloring validity and lossless decoding", ok)

    failures = []
    for label, caches, f, model in realizations:
        outcome = deliver(caches, f, model)
        H = outcome.graph
        if len(H.clusters) > 8 or len(H.vertices) > 40:
            continue
        exact = brute_force_min_cluster_coloring(H).n_colors
        chromatic = brute_force_chromatic_number(H)
        greedy = choose_min(H).n_colors
        if exact > greedy or exact > chromatic:
            failures.append(
                f"{label}: exact={exact} greedy={greedy} "
                f"chromatic={chromatic}"
            )
    report.add("exact oracle dominance", not failures, "; ".join(failures[:3]))

    zero = _zero_delta_scenario(int(rng.integers(2**31)))
    record = run(zero, workers=1)
    mismatches = []
    for M in zero.M_values:
        aware = record.point(SchemeId.CA_RAP_CM.value, M)
        unaware = record.point(SchemeId.RAP_CM.value, M)
        if any(
            aware[key] != unaware[key]
            for key in ("mean_rate", "stderr", "bound", "p_digest")
        ):
            mismatches.append(
                f"M={M:g}: {aware['mean_rate']} != {unaware['mean_rate']}"
            )
    report.add(
        "delta=0 equivalence", not mismatches, "; ".join(mismatches[:3])
    )

    detected = True
    for label, caches, f, model in realizations:
        outcome = deliver(caches, f, model)
        if not outcome.plan.deliveries:
            continue
        damaged = inject_fault(outcome.plan)
        decoding = simulate_decoding(damaged, caches, outcome.demand, model)
        if decoding.ok:
            detected = False
            report.add("fault injection", False, f"{label} went unnoticed")
            break
    if detected:
        report.add("fault injection", True)

    if scenario is not None and scenario.name == "example1":
        outcome = deliver(
            CacheConfiguration.pinned(scenario.pinned_caches, B=scenario.B),
            scenario.pinned_demand,
            library_model(scenario, scenario.delta),
        )
        reference = uncoded_prefetch_reference(scenario.pinned_demand)
        report.add(
            "example1 golden rates",
            outcome.rate == 1.0 and reference == 1.25,
            f"rate={outcome.rate} reference={reference}",
        )

    if scenario is not None and not scenario.pinned and run_sweep:
        record = run(scenario.with_schemes([SchemeId.CA_RAP_CM]))
        violations = [
            f"M={row['M']:g}: {row['mean_rate']:.4f} > {row['bound']:.4f}"
            for row in record.points
            if row["mean_rate"]
            > 1.1 * row["bound"] + 3.0 * row["stderr"] + 1e-12
        ]
        report.add(
            "bound dominates simulation",
            not violations,
            "; ".join(violations),
        )

    logger.info("\n" + report.summary())
    return report
