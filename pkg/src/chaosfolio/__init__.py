"""Multi-period mean-variance portfolio selection under proportional
transaction costs.

Admissible trading strategies are parametrized by a truncated Hermite
chaos expansion of the Brownian increments; the coefficient vector is
fitted by stochastic gradient ascent on a quadratic utility.  Sequential
single-period rules and an equal-weight mix serve as comparisons, with
shared performance metrics and jackknife error bars.

Exports resolve lazily so the command-line front end can configure BLAS
thread limits before any numerical library loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    # market
    "ConfigError": ".market",
    "MarketSpec": ".market",
    "Measure": ".market",
    "ModelError": ".market",
    "PathBatch": ".market",
    "TimeGrid": ".market",
    "cond_cov_delta_s": ".market",
    "dump_paths": ".market",
    "girsanov_shift": ".market",
    "normal_increments": ".market",
    "simulate": ".market",
    # chaos
    "ChaosBasis": ".chaos",
    "ChaosVector": ".chaos",
    "ShapeError": ".chaos",
    "delta_bracket": ".chaos",
    "eval_chaos": ".chaos",
    "fit_chaos": ".chaos",
    "hermite_eval": ".chaos",
    "hermite_values": ".chaos",
    "restrict_to_step": ".chaos",
    # strategy
    "StrategyMaps": ".strategy",
    "build_maps": ".strategy",
    "evaluate": ".strategy",
    "positions": ".strategy",
    "terminal_wealth": ".strategy",
    "trade_sizes": ".strategy",
    # optimizer
    "OptimizerConfig": ".optimizer",
    "OptimizerError": ".optimizer",
    "Solution": ".optimizer",
    "solve": ".optimizer",
    # benchmarks
    "BenchmarkRun": ".benchmarks",
    "EQUAL_WEIGHT": ".benchmarks",
    "MULTIPERIOD_IGNORECOST": ".benchmarks",
    "SolverError": ".benchmarks",
    "UNIPERIOD_IGNORECOST": ".benchmarks",
    "UNIPERIOD_WITHCOST": ".benchmarks",
    "run_equal_weight": ".benchmarks",
    "run_multiperiod_ignore_cost": ".benchmarks",
    "run_sequential": ".benchmarks",
    "uniperiod_ignorecost_controls": ".benchmarks",
    "uniperiod_withcost_controls": ".benchmarks",
    # metrics
    "MatchResult": ".metrics",
    "PerfStats": ".metrics",
    "match_risk_aversion": ".metrics",
    "perf": ".metrics",
    "scale_solution": ".metrics",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    value = getattr(import_module(module, __name__), name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
