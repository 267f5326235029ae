"""Command-line interface: ``corrcache run | verify | bound | example1``."""

import argparse
import json
import sys

from corrcache import __version__
from corrcache.baselines import uncoded_prefetch_reference
from corrcache.bound import (
    BoundInputs,
    optimize_p,
    rate_upper_bound,
)
from corrcache.caching import CacheConfiguration, CachingDistribution
from corrcache.coloring import deliver, simulate_decoding
from corrcache.harness import (
    ScenarioError,
    emit,
    example1,
    library_model,
    load_scenario,
    run,
    verify,
)
from corrcache.logger import logger, set_logger_style


def _run(args):
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    record = run(scenario, workers=args.workers)
    output = args.output or scenario.output_dir
    emit(record, output)
    for row in record.to_frame().itertuples(index=False):
        logger.info(
            f"{row.scheme:>10} M={row.M:<6g} rate={row.mean_rate:.4f} "
            f"+/- {row.stderr:.4f} bound={row.bound:.4f}"
        )
    return 0


def _verify(args):
    scenario = load_scenario(args.scenario) if args.scenario else None
    report = verify(
        scenario,
        n_random=args.random,
        seed=args.seed,
        run_sweep=not args.no_sweep,
    )
    print(report.summary())
    return 0 if report.ok else 1


def _bound(args):
    scenario = load_scenario(args.scenario)
    config = scenario.library_config()
    q = scenario.demand_distribution()
    results = []
    for M in args.M or scenario.M_values:
        inputs = BoundInputs(
            n=scenario.n,
            M=M,
            q=q,
            delta=config.delta,
            G=config.G,
            n_samples=scenario.n_samples,
            seed=scenario.seed,
            estimator=args.estimator or "auto",
        )
        if args.uniform or M <= 0 or M >= scenario.m:
            dist = CachingDistribution.uniform(scenario.m, M)
            if M > scenario.m:
                results.append({"M": M, "bound": 0.0})
                continue
        else:
            dist = optimize_p(
                inputs, strategy=scenario.strategy
            ).distribution
        report = rate_upper_bound(inputs.with_p(dist.p))
        results.append({"M": M, **report.to_dict(tables=args.tables)})
    print(json.dumps(results, indent=2, sort_keys=True))
    return 0


def _example1(args):
    scenario = example1()
    model = library_model(scenario, scenario.delta)
    caches = CacheConfiguration.pinned(
        scenario.pinned_caches, B=scenario.B, M=1
    )
    outcome = deliver(caches, scenario.pinned_demand, model)
    decoding = simulate_decoding(
        outcome.plan, caches, outcome.demand, model
    )
    reference = uncoded_prefetch_reference(scenario.pinned_demand)
    print(outcome.plan.to_trace(), end="")
    print(f"correlation-aware rate: {outcome.rate!r}")
    print(f"correlation-unaware reference rate: {reference!r}")
    print(f"decoding: {'ok' if decoding.ok else decoding.first_failure}")
    return 0 if decoding.ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="corrcache",
        description=(
            "Cache-aided coded multicast over correlated libraries: "
            "simulate, verify and bound delivery rates."
        ),
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument(
        "--debug", action="store_true", help="Emit algorithm traces"
    )
    verbosity.add_argument(
        "--quiet", action="store_true", help="Only warnings and errors"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="Run a scenario sweep")
    p.add_argument("scenario", help="TOML file or built-in name")
    p.add_argument("-o", "--output", help="Output directory")
    p.add_argument("--seed", type=int, help="Override the master seed")
    p.add_argument("--workers", type=int, help="Worker processes")
    p.set_defaults(func=_run)

    p = sub.add_parser("verify", help="Run the invariant checks")
    p.add_argument("scenario", nargs="?", help="TOML file or built-in name")
    p.add_argument(
        "--random", type=int, default=50, help="Random instances per check"
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--no-sweep",
        action="store_true",
        help="Skip the bound-versus-simulation sweep",
    )
    p.set_defaults(func=_verify)

    p = sub.add_parser("bound", help="Evaluate the rate upper bound only")
    p.add_argument("scenario", help="TOML file or built-in name")
    p.add_argument("--M", type=float, nargs="+", help="Cache sizes")
    p.add_argument(
        "--uniform",
        action="store_true",
        help="Use the uniform caching distribution instead of optimizing",
    )
    p.add_argument(
        "--estimator", choices=("auto", "exact", "mc", "closed")
    )
    p.add_argument(
        "--tables", action="store_true", help="Include the λ and ρ tables"
    )
    p.set_defaults(func=_bound)

    p = sub.add_parser("example1", help="Run the two-receiver example")
    p.set_defaults(func=_example1)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.debug:
        set_logger_style(debug=True, debug_simple=True)
    elif args.quiet:
        set_logger_style(info=False, success=False)
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
