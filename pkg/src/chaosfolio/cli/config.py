"""Experiment configuration: schema, defaults, presets, and file loading.

A config file is TOML (or JSON with the same nesting).  A manifest written
by a previous run is also accepted: its embedded "config" table is loaded,
which is what makes manifest reruns exact.

Schema (keys marked * are required):

    [market]   mu*[], sigma*[], rho*[][], r*, v0*, nu*, d, s_init[],
               s0_init, seed        (and optionally the [grid] keys inline)
    [grid]     n_days*, p*, day_count
    [chaos]    order, fit_paths
    [paths]    train*, test*        ("eval" accepted as alias for test)
    [seeds]    fit*, train*, test*  (must be pairwise distinct)
    [optimizer] gamma*, learning_rate, batch_size, iterations,
               lr_schedule, theta_mode, theta_decay, certificate_paths,
               certificate_bootstrap, certificate_seed
    [benchmarks] kinds[], gamma_u
    [flags]    first_trade_free, uniperiod_scalar_form, charge_initial
    [report]   trajectory_paths[2], figures
    [output]   dir
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..benchmarks import (
    EQUAL_WEIGHT,
    MULTIPERIOD_IGNORECOST,
    UNIPERIOD_IGNORECOST,
    UNIPERIOD_WITHCOST,
)
from ..market import ConfigError, MarketSpec, TimeGrid
from ..optimizer import OptimizerConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_BENCHMARKS = (
    MULTIPERIOD_IGNORECOST,
    UNIPERIOD_IGNORECOST,
    UNIPERIOD_WITHCOST,
    EQUAL_WEIGHT,
)

PRESETS = ("paper", "desk")


@dataclass(frozen=True)
class Seeds:
    fit: int
    train: int
    test: int

    def __post_init__(self):
        if len({self.fit, self.train, self.test}) != 3:
            raise ConfigError(
                "seeds.fit, seeds.train, seeds.test must be pairwise distinct"
            )


@dataclass(frozen=True)
class ExperimentConfig:
    market: MarketSpec
    grid: TimeGrid
    order: int
    fit_paths: int
    train_paths: int
    test_paths: int
    seeds: Seeds
    optimizer: OptimizerConfig
    benchmark_kinds: tuple
    gamma_u: float
    uniperiod_scalar_form: bool
    charge_initial: bool
    trajectory_paths: tuple
    figures: bool
    output_dir: str | None
    simulate_seed: int | None
    resolved: dict = field(repr=False, compare=False)

    @property
    def config_hash(self) -> str:
        return config_hash(self.resolved)


def config_hash(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing required config key [{where}] {key}")
    return table[key]


def _as_float_list(value, where):
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"[{where}] must be a list of numbers") from None


def from_mapping(mapping: dict) -> ExperimentConfig:
    """Validate a nested mapping and build the typed config.

    Unknown top-level tables or keys are rejected so typos fail loudly
    instead of silently falling back to defaults.
    """
    known = {
        "market", "grid", "chaos", "paths", "seeds", "optimizer",
        "benchmarks", "flags", "report", "output",
    }
    extra = set(mapping) - known
    if extra:
        raise ConfigError(f"unknown config table(s): {sorted(extra)}")

    market_tbl = dict(mapping.get("market", {}))
    grid_tbl = dict(mapping.get("grid", {}))
    # grid keys may be written inline under [market]
    for key in ("n_days", "p", "day_count"):
        if key in market_tbl and key not in grid_tbl:
            grid_tbl[key] = market_tbl.pop(key)

    mu = np.asarray(_as_float_list(_require(market_tbl, "mu", "market"), "market.mu"))
    sigma = np.asarray(
        _as_float_list(_require(market_tbl, "sigma", "market"), "market.sigma")
    )
    rho = np.asarray(
        [_as_float_list(row, "market.rho") for row in _require(market_tbl, "rho", "market")]
    )
    d_declared = market_tbl.get("d")
    if d_declared is not None and int(d_declared) != mu.size:
        raise ConfigError(
            f"[market] d = {d_declared} contradicts len(mu) = {mu.size}"
        )
    s_init = market_tbl.get("s_init")
    market = MarketSpec(
        mu=mu,
        sigma_marginal=sigma,
        rho=rho,
        rate=float(_require(market_tbl, "r", "market")),
        v0=float(_require(market_tbl, "v0", "market")),
        cost_rate=float(_require(market_tbl, "nu", "market")),
        s_init=None if s_init is None else np.asarray(_as_float_list(s_init, "market.s_init")),
        s0_init=float(market_tbl.get("s0_init", 1.0)),
    )
    simulate_seed = market_tbl.get("seed")

    n_days = int(_require(grid_tbl, "n_days", "grid"))
    p = int(_require(grid_tbl, "p", "grid"))
    day_count = grid_tbl.get("day_count")
    grid = TimeGrid.from_days(
        n_days, p, day_count=None if day_count is None else float(day_count)
    )

    chaos_tbl = mapping.get("chaos", {})
    order = int(chaos_tbl.get("order", 2))
    fit_paths = int(chaos_tbl.get("fit_paths", 200_000))
    if order < 1:
        raise ConfigError("[chaos] order must be >= 1")
    if fit_paths < 2:
        raise ConfigError("[chaos] fit_paths must be >= 2")

    paths_tbl = mapping.get("paths", {})
    train_paths = int(_require(paths_tbl, "train", "paths"))
    test_paths = int(paths_tbl.get("test", paths_tbl.get("eval", 0)))
    if test_paths < 2 or train_paths < 2:
        raise ConfigError("[paths] train and test must both be >= 2")

    seeds_tbl = mapping.get("seeds", {})
    seeds = Seeds(
        fit=int(_require(seeds_tbl, "fit", "seeds")),
        train=int(_require(seeds_tbl, "train", "seeds")),
        test=int(_require(seeds_tbl, "test", "seeds")),
    )

    opt_tbl = dict(mapping.get("optimizer", {}))
    if "gamma" not in opt_tbl:
        raise ConfigError("missing required config key [optimizer] gamma")
    try:
        optimizer = OptimizerConfig(
            gamma=float(opt_tbl.pop("gamma")),
            learning_rate=float(opt_tbl.pop("learning_rate", 8.5)),
            batch_size=int(opt_tbl.pop("batch_size", 100)),
            iterations=int(opt_tbl.pop("iterations", 1000)),
            lr_schedule=str(opt_tbl.pop("lr_schedule", "constant")),
            theta_mode=str(opt_tbl.pop("theta_mode", "running-mean")),
            theta_decay=float(opt_tbl.pop("theta_decay", 0.9)),
            certificate_paths=int(opt_tbl.pop("certificate_paths", 10_000)),
            certificate_bootstrap=int(opt_tbl.pop("certificate_bootstrap", 200)),
            certificate_seed=int(opt_tbl.pop("certificate_seed", 1)),
        )
    except ValueError as exc:
        raise ConfigError(f"[optimizer] {exc}") from None
    if opt_tbl:
        raise ConfigError(f"unknown [optimizer] key(s): {sorted(opt_tbl)}")

    bench_tbl = mapping.get("benchmarks", {})
    kinds = tuple(bench_tbl.get("kinds", DEFAULT_BENCHMARKS))
    unknown_kinds = set(kinds) - set(DEFAULT_BENCHMARKS)
    if unknown_kinds:
        raise ConfigError(f"unknown benchmark kind(s): {sorted(unknown_kinds)}")
    gamma_u = float(bench_tbl.get("gamma_u", optimizer.gamma))
    if gamma_u <= 0.0:
        raise ConfigError("[benchmarks] gamma_u must be positive")

    flags_tbl = mapping.get("flags", {})
    first_trade_free = bool(flags_tbl.get("first_trade_free", True))
    charge_initial = bool(flags_tbl.get("charge_initial", not first_trade_free))
    if charge_initial == first_trade_free:
        raise ConfigError(
            "[flags] first_trade_free and charge_initial contradict each other"
        )
    scalar_form = bool(flags_tbl.get("uniperiod_scalar_form", False))

    report_tbl = mapping.get("report", {})
    traj = tuple(int(p) for p in report_tbl.get("trajectory_paths", (0, 1)))
    if len(traj) != 2 or traj[0] == traj[1]:
        raise ConfigError("[report] trajectory_paths must be two distinct path ids")
    if any(p < 0 or p >= test_paths for p in traj):
        raise ConfigError("[report] trajectory_paths out of range for [paths] test")
    figures = bool(report_tbl.get("figures", True))

    output_dir = mapping.get("output", {}).get("dir")

    resolved = _resolve(
        market, grid, order, fit_paths, train_paths, test_paths, seeds,
        optimizer, kinds, gamma_u, scalar_form, charge_initial, traj,
        figures, output_dir, simulate_seed,
    )
    return ExperimentConfig(
        market=market,
        grid=grid,
        order=order,
        fit_paths=fit_paths,
        train_paths=train_paths,
        test_paths=test_paths,
        seeds=seeds,
        optimizer=optimizer,
        benchmark_kinds=kinds,
        gamma_u=gamma_u,
        uniperiod_scalar_form=scalar_form,
        charge_initial=charge_initial,
        trajectory_paths=traj,
        figures=figures,
        output_dir=output_dir,
        simulate_seed=None if simulate_seed is None else int(simulate_seed),
        resolved=resolved,
    )


def _resolve(
    market, grid, order, fit_paths, train_paths, test_paths, seeds,
    optimizer, kinds, gamma_u, scalar_form, charge_initial, traj,
    figures, output_dir, simulate_seed,
) -> dict:
    """Canonical plain-data image of the config: every defaulted value made
    explicit, suitable for hashing and for the run manifest."""
    out = {
        "market": {
            "mu": market.mu.tolist(),
            "sigma": market.sigma_marginal.tolist(),
            "rho": market.rho.tolist(),
            "r": market.rate,
            "v0": market.v0,
            "nu": market.cost_rate,
            "d": market.d,
            "s_init": market.s_init.tolist(),
            "s0_init": market.s0_init,
        },
        "grid": {
            "n_days": grid.n_days,
            "p": grid.days_per_period,
            "day_count": grid.day_count,
        },
        "chaos": {"order": order, "fit_paths": fit_paths},
        "paths": {"train": train_paths, "test": test_paths},
        "seeds": {"fit": seeds.fit, "train": seeds.train, "test": seeds.test},
        "optimizer": {
            "gamma": optimizer.gamma,
            "learning_rate": optimizer.learning_rate,
            "batch_size": optimizer.batch_size,
            "iterations": optimizer.iterations,
            "lr_schedule": optimizer.lr_schedule,
            "theta_mode": optimizer.theta_mode,
            "theta_decay": optimizer.theta_decay,
            "certificate_paths": optimizer.certificate_paths,
            "certificate_bootstrap": optimizer.certificate_bootstrap,
            "certificate_seed": optimizer.certificate_seed,
        },
        "benchmarks": {"kinds": list(kinds), "gamma_u": gamma_u},
        "flags": {
            "first_trade_free": not charge_initial,
            "uniperiod_scalar_form": scalar_form,
            "charge_initial": charge_initial,
        },
        "report": {"trajectory_paths": list(traj), "figures": figures},
    }
    if output_dir is not None:
        out["output"] = {"dir": output_dir}
    if simulate_seed is not None:
        out["market"]["seed"] = int(simulate_seed)
    return out


def _read_mapping(path: Path) -> dict:
    text = path.read_bytes()
    if path.suffix == ".json" or text.lstrip()[:1] == b"{":
        data = json.loads(text)
        # a manifest embeds the config it ran with
        if "config" in data and isinstance(data["config"], dict):
            return data["config"]
        return data
    try:
        return tomllib.loads(text.decode())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(source: str | Path) -> ExperimentConfig:
    """Load a config from a file path, a preset name, or a manifest."""
    name = str(source)
    if name in PRESETS:
        ref = resources.files("chaosfolio.presets").joinpath(f"{name}.cfg")
        with resources.as_file(ref) as real:
            return from_mapping(_read_mapping(real))
    path = Path(source)
    if not path.exists():
        raise ConfigError(
            f"config {name!r} is neither a file nor a preset {PRESETS}"
        )
    return from_mapping(_read_mapping(path))


def with_seed_overrides(cfg: ExperimentConfig, fit=None, train=None, test=None) -> ExperimentConfig:
    if fit is None and train is None and test is None:
        return cfg
    mapping = json.loads(json.dumps(cfg.resolved))
    if fit is not None:
        mapping["seeds"]["fit"] = int(fit)
    if train is not None:
        mapping["seeds"]["train"] = int(train)
    if test is not None:
        mapping["seeds"]["test"] = int(test)
    return from_mapping(mapping)
