"""Command-line front end.

Verbs map onto pipeline stages: each verb writes its own stage's files,
computing whatever it depends on in memory from the config seeds.

    simulate   dump a price-path CSV
    fit        chaos coefficients of the discounted terminal prices
    optimize   cost-aware coefficient solve (solution + trace files)
    benchmark  the four comparison strategies
    report     full stats table, summary, trajectory dumps, figures
    run        all stages including the risk-matched comparison
    match      risk-matched comparison only

CHAOSFOLIO_THREADS caps BLAS/OpenMP thread counts; it is applied before
the numerical libraries are first imported, which is why all heavy
imports in this module live inside functions.
"""

from __future__ import annotations

import argparse
import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

VERB_STAGES = {
    "fit": ("fit",),
    "optimize": ("optimize",),
    "benchmark": ("benchmark",),
    "report": ("fit", "optimize", "benchmark", "report"),
    "run": ("fit", "optimize", "benchmark", "report", "match"),
    "match": ("match",),
}


def _apply_thread_env() -> None:
    count = os.environ.get("CHAOSFOLIO_THREADS")
    if not count:
        return
    if not count.isdigit() or int(count) < 1:
        raise SystemExit(f"CHAOSFOLIO_THREADS must be a positive integer, got {count!r}")
    for var in _THREAD_VARS:
        os.environ[var] = count


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chaosfolio",
        description="multi-period mean-variance portfolios under transaction costs",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_common(sp):
        sp.add_argument(
            "--config",
            required=True,
            help="config file (TOML/JSON), previous manifest.json, or preset name (paper, desk)",
        )
        sp.add_argument("--seed-fit", type=int, help="override [seeds] fit")
        sp.add_argument("--seed-train", type=int, help="override [seeds] train")
        sp.add_argument("--seed-test", type=int, help="override [seeds] test")

    sim = sub.add_parser("simulate", help="dump simulated price paths to CSV")
    add_common(sim)
    sim.add_argument("--measure", choices=("physical", "risk-neutral"), default="physical")
    sim.add_argument("--paths", type=int, help="path count (default: [paths] test)")
    sim.add_argument("--seed", type=int, help="seed (default: [market] seed, else [seeds] test)")
    sim.add_argument("--output", default="paths.csv", help="output CSV file")

    for verb, text in [
        ("fit", "fit chaos coefficients and write them per asset"),
        ("optimize", "solve for the cost-aware strategy coefficients"),
        ("benchmark", "run the comparison strategies on the test paths"),
        ("report", "all stages through the stats table and figures"),
        ("run", "all stages including the risk-matched comparison"),
        ("match", "risk-matched comparison against the cost-aware solution"),
    ]:
        sp = sub.add_parser(verb, help=text)
        add_common(sp)
        sp.add_argument("--output", help="output directory (default: [output] dir, else ./chaosfolio_out)")
        if verb == "run":
            sp.add_argument(
                "--only",
                help="comma-separated subset of stages: fit,optimize,benchmark,report,match",
            )
    return parser


def _dispatch(args) -> int:
    from .config import load_config, with_seed_overrides

    cfg = load_config(args.config)
    cfg = with_seed_overrides(
        cfg, fit=args.seed_fit, train=args.seed_train, test=args.seed_test
    )

    if args.verb == "simulate":
        from ..market import Measure, dump_paths, simulate

        measure = Measure.PHYSICAL if args.measure == "physical" else Measure.RISK_NEUTRAL
        n_paths = args.paths if args.paths is not None else cfg.test_paths
        seed = args.seed
        if seed is None:
            seed = cfg.simulate_seed if cfg.simulate_seed is not None else cfg.seeds.test
        batch = simulate(cfg.market, cfg.grid, n_paths, seed, measure=measure)
        dump_paths(batch, args.output)
        print(f"wrote {n_paths} paths to {args.output}")
        return 0

    from .pipeline import normalize_stages, run_experiment

    stages = VERB_STAGES[args.verb]
    if args.verb == "run" and args.only:
        stages = normalize_stages(args.only.split(","))
    outdir = args.output or cfg.output_dir or "chaosfolio_out"
    ctx = run_experiment(cfg, outdir, stages=stages, command=args.verb)
    print(f"wrote {len(ctx.files) + 1} files to {ctx.outdir}")
    for name in ("table5.csv", "table6.csv"):
        if name in ctx.files:
            print(f"  {ctx.outdir / name}")
    return 0


def main(argv=None) -> int:
    _apply_thread_env()
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except BrokenPipeError:
        return 0
    except KeyboardInterrupt:
        return 130
    except BaseException as exc:
        return _report_failure(exc)


def _report_failure(exc: BaseException) -> int:
    if isinstance(exc, SystemExit):
        raise exc
    from ..benchmarks import SolverError
    from ..market import ConfigError, ModelError
    from ..optimizer import OptimizerError
    from .pipeline import StageFailure

    cause = exc.cause if isinstance(exc, StageFailure) else exc
    print(f"error: {exc}", file=sys.stderr)
    if isinstance(cause, ConfigError):
        return 2
    if isinstance(cause, (ModelError, SolverError, OptimizerError)):
        return 3
    return 1
