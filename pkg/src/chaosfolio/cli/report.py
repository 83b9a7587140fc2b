"""Output rendering: stats tables, a plain-text summary, and figures.

Return and volatility columns are percent of initial capital over the
whole horizon (no annualization).  Figures are optional and rendered
headlessly; every number in them is also present in a CSV.
"""

from __future__ import annotations

import csv

import numpy as np

STATS_COLUMNS = [
    "model",
    "n_paths",
    "gamma",
    "return_pct",
    "vol_pct",
    "min_var",
    "sharpe",
    "stderr_return_pct",
    "stderr_vol_pct",
    "stderr_min_var",
    "stderr_sharpe",
]


def write_stats_csv(path, rows) -> None:
    """rows: iterable of (model name, PerfStats, gamma used for min_var)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_COLUMNS)
        for name, stats, gamma in rows:
            writer.writerow(
                [
                    name,
                    stats.n_paths,
                    format(gamma, ".17g"),
                    format(100.0 * stats.rate_of_return, ".17g"),
                    format(100.0 * stats.volatility, ".17g"),
                    format(stats.min_var, ".17g"),
                    format(stats.sharpe, ".17g"),
                    format(100.0 * stats.stderr_rate_of_return, ".17g"),
                    format(100.0 * stats.stderr_volatility, ".17g"),
                    format(stats.stderr_min_var, ".17g"),
                    format(stats.stderr_sharpe, ".17g"),
                ]
            )


def write_summary(path, ctx) -> None:
    cfg = ctx.cfg
    lines = []
    lines.append("portfolio strategy comparison")
    lines.append("")
    lines.append(
        f"assets={cfg.market.d}  steps={cfg.grid.n_steps}  dt={cfg.grid.dt:g}  "
        f"nu={cfg.market.cost_rate:g}  gamma={cfg.optimizer.gamma:g}  "
        f"v0={cfg.market.v0:g}"
    )
    lines.append(
        f"paths: fit={cfg.fit_paths}  train={cfg.train_paths}  test={cfg.test_paths}  "
        f"seeds: {cfg.seeds.fit}/{cfg.seeds.train}/{cfg.seeds.test}"
    )
    lines.append("")
    header = f"{'model':28s} {'return%':>9s} {'vol%':>9s} {'min_var':>10s} {'sharpe':>8s}"
    lines.append(header)
    lines.append("-" * len(header))
    from .pipeline import ROW_ORDER

    for name in ROW_ORDER:
        if name not in ctx.rows:
            continue
        s = ctx.rows[name]
        lines.append(
            f"{name:28s} {100 * s.rate_of_return:9.3f} {100 * s.volatility:9.3f} "
            f"{s.min_var:10.4f} {s.sharpe:8.4f}"
        )
    sol = ctx.solutions.get("multiperiod_withcost")
    if sol is not None:
        lines.append("")
        lines.append(
            f"optimizer: objective={sol.objective_estimate:.6f}  "
            f"certificate residual={sol.residual:.4g} (stderr {sol.residual_stderr:.2g})"
        )
    if ctx.match_info:
        mi = ctx.match_info
        lines.append(
            f"matched: gamma'={mi['gamma_prime']:.4f}  scale={mi['scale']:.4f}  "
            f"target vol={100 * mi['target_vol']:.2f}%"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def write_figures(ctx) -> None:
    plt = _pyplot()
    if ctx.wealth:
        _wealth_hist(plt, ctx)
    sol = ctx.solutions.get("multiperiod_withcost") or ctx.solutions.get(
        "multiperiod_ignorecost"
    )
    if sol is not None and sol.trace.size:
        _trace_fig(plt, ctx, sol)
    _controls_figs(plt, ctx)


def _wealth_hist(plt, ctx) -> None:
    fig, ax = plt.subplots(figsize=(8, 5))
    for name, wealth in ctx.wealth.items():
        ax.hist(wealth, bins=80, density=True, histtype="step", label=name)
    ax.set_xlabel("terminal wealth")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(ctx.path("fig_wealth_hist.png"), dpi=110)
    plt.close(fig)


def _trace_fig(plt, ctx, sol) -> None:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    it = sol.trace[:, 0]
    ax1.plot(it, sol.trace[:, 1], lw=0.8)
    ax1.set_ylabel("objective")
    ax2.plot(it, sol.trace[:, 3], lw=0.8)
    ax2.set_ylabel("theta")
    ax2.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(ctx.path("fig_trace.png"), dpi=110)
    plt.close(fig)


def _controls_figs(plt, ctx) -> None:
    """Step plots of holdings along the two named paths, one file each."""
    from .. import strategy

    series = {}
    sol = ctx.solutions.get("multiperiod_withcost")
    if sol is not None and ctx.test_maps is not None:
        series["multiperiod_withcost"] = strategy.positions(ctx.test_maps, sol.beta)
    for kind in ("uniperiod_withcost", "uniperiod_ignorecost", "equal_weight"):
        if kind in ctx.runs:
            series[kind] = ctx.runs[kind].controls
    if not series:
        return
    d = ctx.cfg.market.d
    steps = ctx.cfg.grid.n_steps
    for label, pid in zip(("A", "B"), ctx.cfg.trajectory_paths):
        fig, axes = plt.subplots(d, 1, figsize=(8, 2.4 * d), sharex=True)
        axes = np.atleast_1d(axes)
        for i in range(d):
            for name, ctrl in series.items():
                axes[i].step(
                    np.arange(steps), ctrl[pid, :, i], where="post", label=name, lw=1.0
                )
            axes[i].set_ylabel(f"asset {i + 1} qty")
        axes[0].legend(fontsize=7)
        axes[-1].set_xlabel("trading date")
        fig.suptitle(f"holdings, realization {label} (path {pid})")
        fig.tight_layout()
        fig.savefig(ctx.path(f"fig_controls_{label.lower()}.png"), dpi=110)
        plt.close(fig)
