"""Experiment stages wired end to end.

Stage order is fixed: fit -> optimize -> benchmark -> report -> match.
A run may execute any subset; each stage computes missing prerequisites
in memory (deterministically, from the config seeds) but writes only its
own output files.  The strategy-map tensors dominate memory, so training
maps are released before the test maps are materialized.

Everything a run writes is recomputable from the manifest alone: the
manifest embeds the fully resolved config (all defaults applied), the
seeds, library versions, and a content hash per output file.
"""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np

from .. import __version__, benchmarks, metrics, strategy
from ..chaos import ChaosBasis, ChaosVector
from ..market import Measure, simulate
from ..optimizer import solve
from .config import ExperimentConfig

STAGES = ("fit", "optimize", "benchmark", "report", "match")

ROW_ORDER = (
    "multiperiod_withcost",
    "multiperiod_ignorecost",
    "uniperiod_ignorecost",
    "uniperiod_withcost",
    "equal_weight",
)

FIT_CHUNK = 131_072


class StageFailure(RuntimeError):
    """Wraps an exception with the name of the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class ExperimentContext:
    """Mutable state shared by the stages of one run."""

    def __init__(self, cfg: ExperimentConfig, outdir: Path, stages):
        self.cfg = cfg
        self.outdir = Path(outdir)
        self.stages = tuple(stages)
        self.basis = ChaosBasis(cfg.grid.n_steps, cfg.market.d, cfg.order)
        self.etas = None
        self.train_maps = None
        self.test_maps = None
        self.test_batch = None
        self.solutions = {}
        self.runs = {}
        self.wealth = {}
        self.rows = {}
        self.match_info = None
        self.files = []

    def path(self, name: str) -> Path:
        self.outdir.mkdir(parents=True, exist_ok=True)
        p = self.outdir / name
        if name not in self.files:
            self.files.append(name)
        return p


def fit_etas(spec, grid, basis, n_paths: int, seed: int, chunk: int = FIT_CHUNK):
    """Chaos coefficients of each discounted terminal price, fitted on
    risk-neutral paths.

    Streams the fit in path chunks so the budget can exceed memory; the
    chunk size is fixed so results do not depend on available memory.
    Returns an array of shape (d, basis.size).
    """
    d = spec.d
    sum_y = np.zeros(d)
    sum_h = np.zeros(basis.size)
    sum_yh = np.zeros((d, basis.size))
    done = 0
    while done < n_paths:
        take = min(chunk, n_paths - done)
        batch = simulate(
            spec, grid, take, seed, measure=Measure.RISK_NEUTRAL, path_offset=done
        )
        h = basis.eval(batch.z)
        y = batch.s_tilde[:, -1, :]
        sum_y += y.sum(axis=0)
        sum_h += h.sum(axis=0)
        sum_yh += y.T @ h
        done += take
    mean_y = sum_y / n_paths
    # centered projection: E[(y - E y) H_l] / l!  (constant term = E y)
    coeffs = (sum_yh / n_paths - np.outer(mean_y, sum_h / n_paths)) / basis.factorials[None, :]
    coeffs[:, 0] = mean_y
    return coeffs


# ---------------------------------------------------------------- ensures

def _ensure_etas(ctx: ExperimentContext):
    if ctx.etas is None:
        cfg = ctx.cfg
        ctx.etas = fit_etas(
            cfg.market, cfg.grid, ctx.basis, cfg.fit_paths, cfg.seeds.fit
        )
    return ctx.etas


def _ensure_train_maps(ctx: ExperimentContext):
    if ctx.train_maps is None:
        cfg = ctx.cfg
        etas = _ensure_etas(ctx)
        batch = simulate(
            cfg.market, cfg.grid, cfg.train_paths, cfg.seeds.train,
            measure=Measure.PHYSICAL,
        )
        ctx.train_maps = strategy.build_maps(cfg.market, cfg.grid, ctx.basis, etas, batch)
    return ctx.train_maps


def _ensure_sol_cost(ctx: ExperimentContext):
    if "multiperiod_withcost" not in ctx.solutions:
        cfg = ctx.cfg
        ctx.solutions["multiperiod_withcost"] = solve(
            _ensure_train_maps(ctx), cfg.optimizer, charge_initial=cfg.charge_initial
        )
    return ctx.solutions["multiperiod_withcost"]


def _ensure_sol_free(ctx: ExperimentContext):
    if "multiperiod_ignorecost" not in ctx.solutions:
        cfg = ctx.cfg
        ctx.solutions["multiperiod_ignorecost"] = solve(
            _ensure_train_maps(ctx), cfg.optimizer, cost_rate=0.0,
            charge_initial=cfg.charge_initial,
        )
    return ctx.solutions["multiperiod_ignorecost"]


def _ensure_test_batch(ctx: ExperimentContext):
    if ctx.test_batch is None:
        cfg = ctx.cfg
        ctx.test_batch = simulate(
            cfg.market, cfg.grid, cfg.test_paths, cfg.seeds.test,
            measure=Measure.PHYSICAL,
        )
    return ctx.test_batch


def _ensure_test_maps(ctx: ExperimentContext):
    if ctx.test_maps is None:
        cfg = ctx.cfg
        # run every training-map consumer first, then release those maps:
        # the two map tensors are the dominant allocations of a run
        if any(s in ctx.stages for s in ("optimize", "report", "match")):
            _ensure_sol_cost(ctx)
        if "benchmark" in ctx.stages and "multiperiod_ignorecost" in cfg.benchmark_kinds:
            _ensure_sol_free(ctx)
        ctx.train_maps = None
        etas = _ensure_etas(ctx)
        ctx.test_maps = strategy.build_maps(
            cfg.market, cfg.grid, ctx.basis, etas, _ensure_test_batch(ctx)
        )
    return ctx.test_maps


def _ensure_uni_withcost_run(ctx: ExperimentContext):
    if "uniperiod_withcost" not in ctx.runs:
        cfg = ctx.cfg
        ctx.runs["uniperiod_withcost"] = benchmarks.run_sequential(
            cfg.market, cfg.grid, _ensure_test_batch(ctx),
            benchmarks.UNIPERIOD_WITHCOST, cfg.gamma_u,
            scalar_form=cfg.uniperiod_scalar_form,
            charge_initial=cfg.charge_initial,
        )
        ctx.wealth["uniperiod_withcost"] = ctx.runs["uniperiod_withcost"].wealth
    return ctx.runs["uniperiod_withcost"]


def _row(ctx: ExperimentContext, name: str, wealth: np.ndarray, gamma=None):
    cfg = ctx.cfg
    stats = metrics.perf(
        wealth,
        cfg.optimizer.gamma if gamma is None else gamma,
        cfg.market.v0,
        _ensure_test_batch(ctx).s0[-1],
    )
    ctx.rows[name] = stats
    return stats


def _write_wealth(ctx: ExperimentContext, name: str, wealth: np.ndarray):
    import csv

    with open(ctx.path(f"wealth_{name}.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "terminal_wealth"])
        for p, w in enumerate(wealth):
            writer.writerow([p, format(w, ".17g")])


def _write_trajectories(ctx: ExperimentContext, name: str, controls: np.ndarray):
    """Per-step holdings for the two named report paths, with the spot
    prices needed to redraw the trajectory plots."""
    import csv

    batch = _ensure_test_batch(ctx)
    labels = ("A", "B")
    with open(ctx.path(f"trajectories_{name}.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["realization", "path", "step", "asset", "quantity", "spot"])
        for label, pid in zip(labels, ctx.cfg.trajectory_paths):
            for t in range(controls.shape[1]):
                for i in range(controls.shape[2]):
                    writer.writerow(
                        [
                            label,
                            pid,
                            t,
                            i + 1,
                            format(controls[pid, t, i], ".17g"),
                            format(batch.s[pid, t, i], ".17g"),
                        ]
                    )


# ----------------------------------------------------------------- stages

def _stage_fit(ctx: ExperimentContext):
    cfg = ctx.cfg
    etas = _ensure_etas(ctx)
    for j in range(cfg.market.d):
        vec = ChaosVector(ctx.basis, etas[j])
        vec.save_csv(
            ctx.path(f"eta_asset{j + 1}.csv"),
            extra_header={
                "asset": str(j + 1),
                "fit_paths": str(cfg.fit_paths),
                "seed": str(cfg.seeds.fit),
            },
        )


def _stage_optimize(ctx: ExperimentContext):
    sol = _ensure_sol_cost(ctx)
    sol.save_csv(ctx.path("solution_multiperiod_withcost.csv"), ctx.basis)
    sol.save_trace_csv(ctx.path("trace_multiperiod_withcost.csv"))


def _stage_benchmark(ctx: ExperimentContext):
    cfg = ctx.cfg
    batch = _ensure_test_batch(ctx)
    gamma = cfg.optimizer.gamma
    for kind in cfg.benchmark_kinds:
        if kind == benchmarks.MULTIPERIOD_IGNORECOST:
            sol = _ensure_sol_free(ctx)
            _, run = benchmarks.run_multiperiod_ignore_cost(
                None, cfg.optimizer, eval_maps=_ensure_test_maps(ctx),
                charge_initial=cfg.charge_initial, solution=sol,
            )
            sol.save_csv(ctx.path("solution_multiperiod_ignorecost.csv"), ctx.basis)
            sol.save_trace_csv(ctx.path("trace_multiperiod_ignorecost.csv"))
        elif kind == benchmarks.EQUAL_WEIGHT:
            run = benchmarks.run_equal_weight(
                cfg.market, cfg.grid, batch, charge_initial=cfg.charge_initial
            )
        elif kind == benchmarks.UNIPERIOD_WITHCOST:
            run = _ensure_uni_withcost_run(ctx)
        else:
            run = benchmarks.run_sequential(
                cfg.market, cfg.grid, batch, kind, cfg.gamma_u,
                scalar_form=cfg.uniperiod_scalar_form,
                charge_initial=cfg.charge_initial,
            )
        ctx.runs[kind] = run
        ctx.wealth[kind] = run.wealth
        _row(ctx, kind, run.wealth, gamma=gamma)
        _write_wealth(ctx, kind, run.wealth)


def _stage_report(ctx: ExperimentContext):
    cfg = ctx.cfg
    sol = _ensure_sol_cost(ctx)
    maps = _ensure_test_maps(ctx)
    wealth = strategy.terminal_wealth(maps, sol.beta, charge_initial=cfg.charge_initial)
    ctx.wealth["multiperiod_withcost"] = wealth
    _row(ctx, "multiperiod_withcost", wealth)
    _write_wealth(ctx, "multiperiod_withcost", wealth)

    _write_trajectories(
        ctx, "multiperiod_withcost", strategy.positions(maps, sol.beta)
    )
    if "uniperiod_withcost" in cfg.benchmark_kinds:
        _write_trajectories(
            ctx, "uniperiod_withcost", _ensure_uni_withcost_run(ctx).controls
        )

    from . import report

    report.write_summary(ctx.path("summary.txt"), ctx)
    if cfg.figures:
        report.write_figures(ctx)


def _stage_match(ctx: ExperimentContext):
    cfg = ctx.cfg
    v0 = cfg.market.v0
    sol = _ensure_sol_cost(ctx)
    maps = _ensure_test_maps(ctx)
    if "multiperiod_withcost" not in ctx.rows:
        wealth = strategy.terminal_wealth(maps, sol.beta, charge_initial=cfg.charge_initial)
        ctx.wealth["multiperiod_withcost"] = wealth
        _row(ctx, "multiperiod_withcost", wealth)
    uni = _ensure_uni_withcost_run(ctx)

    base = ctx.rows["multiperiod_withcost"]
    target_vol = metrics.perf(uni.wealth, cfg.gamma_u, v0, _ensure_test_batch(ctx).s0[-1])
    mr = metrics.match_risk_aversion(
        base.sharpe, target_vol.volatility * v0, gamma=cfg.optimizer.gamma
    )
    beta_m = metrics.scale_solution(sol.beta, mr.scale, v0)
    wealth_m = strategy.terminal_wealth(maps, beta_m, charge_initial=cfg.charge_initial)
    ctx.wealth["multiperiod_matched"] = wealth_m
    stats_m = _row(ctx, "multiperiod_matched", wealth_m, gamma=mr.gamma_prime)
    stats_u = metrics.perf(uni.wealth, cfg.gamma_u, v0, _ensure_test_batch(ctx).s0[-1])
    ctx.match_info = {
        "gamma_prime": mr.gamma_prime,
        "scale": mr.scale,
        "target_vol": target_vol.volatility,
        "base_sharpe": base.sharpe,
    }

    ChaosVector(ctx.basis, beta_m).save_csv(
        ctx.path("solution_multiperiod_matched.csv"),
        extra_header={
            "gamma": format(mr.gamma_prime, ".17g"),
            "scale": format(mr.scale, ".17g"),
            "base_gamma": format(cfg.optimizer.gamma, ".17g"),
            "target_vol": format(target_vol.volatility, ".17g"),
            "cost_rate": format(cfg.market.cost_rate, ".17g"),
        },
    )
    _write_wealth(ctx, "multiperiod_matched", wealth_m)
    _write_trajectories(ctx, "multiperiod_matched", strategy.positions(maps, beta_m))
    if "uniperiod_withcost" not in ctx.rows:
        _row(ctx, "uniperiod_withcost", uni.wealth, gamma=cfg.gamma_u)

    from . import report

    report.write_stats_csv(
        ctx.path("table6.csv"),
        [
            ("multiperiod_matched", stats_m, mr.gamma_prime),
            ("uniperiod_withcost", stats_u, cfg.gamma_u),
        ],
    )


_FUNCS = {
    "fit": _stage_fit,
    "optimize": _stage_optimize,
    "benchmark": _stage_benchmark,
    "report": _stage_report,
    "match": _stage_match,
}


def normalize_stages(names) -> tuple:
    """Resolve user-facing stage names (plural forms allowed) to the fixed
    execution order."""
    alias = {"benchmarks": "benchmark", "fits": "fit", "reports": "report"}
    wanted = set()
    for raw in names:
        name = alias.get(raw.strip(), raw.strip())
        if name not in STAGES:
            raise ValueError(f"unknown stage {raw!r}; stages are {STAGES}")
        wanted.add(name)
    return tuple(s for s in STAGES if s in wanted)


def run_experiment(cfg: ExperimentConfig, outdir, stages=None, command="run"):
    """Execute the requested stages and finalize the run directory.

    Always writes the stats table for whatever rows were produced plus a
    manifest; returns the ExperimentContext for callers that want the
    in-memory results.
    """
    stage_list = normalize_stages(stages) if stages else STAGES
    ctx = ExperimentContext(cfg, Path(outdir), stage_list)
    failure = None
    for name in stage_list:
        try:
            _FUNCS[name](ctx)
        except Exception as exc:
            # later stages would only see partial state; stop here but
            # still leave an auditable manifest behind
            if isinstance(exc, StageFailure):
                failure = exc
            else:
                failure = StageFailure(name, exc)
                failure.__cause__ = exc
            break
    _finalize(ctx, command)
    if failure is not None:
        raise failure
    return ctx


def run_matched_comparison(cfg: ExperimentConfig, base_solution, outdir):
    """Table-6 flow against an existing cost-aware solution."""
    ctx = ExperimentContext(cfg, Path(outdir), ("match",))
    ctx.solutions["multiperiod_withcost"] = base_solution
    try:
        _stage_match(ctx)
    except StageFailure:
        _finalize(ctx, "match")
        raise
    except Exception as exc:
        _finalize(ctx, "match")
        raise StageFailure("match", exc) from exc
    _finalize(ctx, "match")
    return ctx


def _finalize(ctx: ExperimentContext, command: str):
    from . import report

    rows = [
        (name, ctx.rows[name], ctx.rows[name].gamma)
        for name in ROW_ORDER
        if name in ctx.rows
    ]
    if rows:
        report.write_stats_csv(ctx.path("table5.csv"), rows)
    _write_manifest(ctx, command)


def _write_manifest(ctx: ExperimentContext, command: str):
    import numpy
    import scipy

    # a stage can fail before its first output; the manifest must land anyway
    ctx.outdir.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name in sorted(ctx.files):
        p = ctx.outdir / name
        if p.exists():
            digests[name] = hashlib.sha256(p.read_bytes()).hexdigest()
    manifest = {
        "format": 1,
        "command": command,
        "stages": list(ctx.stages),
        "config": ctx.cfg.resolved,
        "config_sha256": ctx.cfg.config_hash,
        "versions": {
            "python": platform.python_version(),
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "chaosfolio": __version__,
        },
        "outputs": digests,
    }
    with open(ctx.outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
