"""Sequential single-period comparison strategies and the equal-weight mix.

The single-period Markowitz rules maximize, date by date, the conditional
mean-variance tradeoff of next-period wealth.  Both variants are computed
in the scaled variable xi = 2 gamma_u alpha, which does not depend on
gamma_u at all; quantities are xi / (2 gamma_u).  This makes the
1/gamma_u control scaling exact in floating point (for power-of-two gamma
ratios), not just up to solver tolerance.

Wealth recursions track discounted excess wealth E_n = V_n/S0_n - v0,
so terminal wealth is (v0 + E_N) S0_N.  Proportional costs are charged at
each rebalance; the first trade out of cash is free unless charge_initial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import MarketSpec, PathBatch, TimeGrid


class SolverError(RuntimeError):
    pass


UNIPERIOD_IGNORECOST = "uniperiod_ignorecost"
UNIPERIOD_WITHCOST = "uniperiod_withcost"
EQUAL_WEIGHT = "equal_weight"
MULTIPERIOD_IGNORECOST = "multiperiod_ignorecost"


@dataclass(frozen=True)
class BenchmarkRun:
    kind: str
    gamma_u: float | None
    wealth: np.ndarray  # (P,) terminal, currency
    excess: np.ndarray  # (P,) discounted excess over v0
    controls: np.ndarray  # (P, M, d) quantities held per period
    costs: np.ndarray  # (P,) total discounted costs paid


def growth_matrix(spec: MarketSpec, dt: float) -> np.ndarray:
    """Diagonal of per-period price growth factors exp(mu_i dt)."""
    return np.exp(spec.mu * dt)


def second_moment_factor(spec: MarketSpec, dt: float) -> np.ndarray:
    """Matrix of exp((mu_i+mu_j) dt) (exp(cov_log_ij dt) - 1): the
    per-period covariance of price ratios S_{n+1}/S_n."""
    g = np.exp(spec.mu * dt)
    return np.outer(g, g) * (np.exp(spec.cov_log * dt) - 1.0)


def _excess_mean(spec, dt, s):
    # a_i = E[S^i_{n+1}|S_n] - S^i_n e^{r dt}, per path
    return s * (np.exp(spec.mu * dt) - np.exp(spec.rate * dt))[None, :]


def _quad_matrix(spec, dt, s, scalar_form):
    b = second_moment_factor(spec, dt)
    if scalar_form:
        # literal scalar denominator: variance collapsed to s' B s per path
        q_scal = np.einsum("pi,ij,pj->p", s, b, s)
        return q_scal[:, None, None] * np.eye(spec.d)[None, :, :]
    return s[:, :, None] * s[:, None, :] * b[None, :, :]


def uniperiod_ignorecost_controls(
    spec: MarketSpec,
    dt: float,
    s: np.ndarray,
    gamma_u: float,
    scalar_form: bool = False,
) -> np.ndarray:
    """Closed-form cost-blind single-period controls, batched over paths.

    Solves Q alpha = (A S - S e^{r dt}) / (2 gamma_u) with
    Q = Diag(S) B Diag(S) (or the scalar-denominator variant).
    """
    if gamma_u <= 0.0:
        raise ValueError("gamma_u must be positive")
    s = np.atleast_2d(np.asarray(s, dtype=float))
    # rhs gains a trailing axis: solve wants a stack of column vectors
    xi = np.linalg.solve(
        _quad_matrix(spec, dt, s, scalar_form), _excess_mean(spec, dt, s)[:, :, None]
    )[:, :, 0]
    return xi / (2.0 * gamma_u)


def uniperiod_withcost_controls(
    spec: MarketSpec,
    dt: float,
    s: np.ndarray,
    alpha_prev: np.ndarray,
    gamma_u: float,
    scalar_form: bool = False,
    tol: float = 1e-10,
    max_sweeps: int = 10_000,
) -> np.ndarray:
    """Cost-aware single-period controls via cyclic coordinate ascent.

    Maximizes the concave per-step objective (quadratic plus separable L1
    anchored at alpha_prev); coordinate updates are exact soft-threshold
    steps, so a prior position inside the no-trade region is returned
    unchanged, exactly.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    alpha_prev = np.atleast_2d(np.asarray(alpha_prev, dtype=float))
    xi_prev = 2.0 * gamma_u * alpha_prev
    xi = _withcost_solve_scaled(spec, dt, s, xi_prev, scalar_form, tol, max_sweeps)
    return xi / (2.0 * gamma_u)


def _withcost_solve_scaled(spec, dt, s, xi_prev, scalar_form, tol=1e-10, max_sweeps=10_000):
    """Solve the cost-aware step in the gamma-free variable xi.

    Objective (up to the positive factor 1/(2 gamma_u)):
    xi . a - xi' Q xi / 2 - sum_i c_i |xi_i - xi_prev_i|,
    a = A S - S e^{r dt}, c_i = nu S_i e^{r dt}.
    """
    a = _excess_mean(spec, dt, s)
    q = _quad_matrix(spec, dt, s, scalar_form)
    if spec.cost_rate == 0.0:
        # no threshold: the optimum is the plain linear solve, bit-identical
        # to the cost-blind rule
        return np.linalg.solve(q, a[:, :, None])[:, :, 0]
    c = spec.cost_rate * s * np.exp(spec.rate * dt)
    d = spec.d
    xi = xi_prev.copy()
    for _ in range(max_sweeps):
        for i in range(d):
            # gradient of the smooth part holding other coordinates fixed
            h = a[:, i] - np.einsum("pj,pj->p", q[:, i, :], xi) + q[:, i, i] * xi[:, i]
            u = h - q[:, i, i] * xi_prev[:, i]
            step = np.sign(u) * np.maximum(np.abs(u) - c[:, i], 0.0)
            xi[:, i] = xi_prev[:, i] + step / q[:, i, i]
        grad = a - np.einsum("pij,pj->pi", q, xi)
        moved = xi != xi_prev
        viol_moved = np.abs(grad - c * np.sign(xi - xi_prev))
        viol_still = np.maximum(np.abs(grad) - c, 0.0)
        viol = np.where(moved, viol_moved, viol_still)
        if viol.max() <= tol:
            return xi
    raise SolverError(
        f"coordinate ascent did not reach tol={tol} in {max_sweeps} sweeps "
        f"(worst violation {viol.max():.3e})"
    )


def run_sequential(
    spec: MarketSpec,
    grid: TimeGrid,
    batch: PathBatch,
    kind: str,
    gamma_u: float,
    scalar_form: bool = False,
    charge_initial: bool = False,
) -> BenchmarkRun:
    """Apply a single-period rule date by date along each path.

    The cost-blind variant picks controls as if nu were zero but its
    realized wealth still pays the actual costs.
    """
    if kind not in (UNIPERIOD_IGNORECOST, UNIPERIOD_WITHCOST):
        raise ValueError(f"unknown sequential kind {kind!r}")
    if gamma_u <= 0.0:
        raise ValueError("gamma_u must be positive")
    m = grid.n_steps
    n_paths = batch.n_paths
    d = spec.d
    s_tilde = batch.s_tilde
    scale = 2.0 * gamma_u

    xi_prev = np.zeros((n_paths, d))
    excess_xi = np.zeros(n_paths)  # excess and costs accumulated in xi units
    costs_xi = np.zeros(n_paths)
    controls = np.empty((n_paths, m, d))
    for t in range(m):
        s_t = batch.s[:, t, :]
        if kind == UNIPERIOD_IGNORECOST:
            xi = np.linalg.solve(
                _quad_matrix(spec, grid.dt, s_t, scalar_form),
                _excess_mean(spec, grid.dt, s_t)[:, :, None],
            )[:, :, 0]
        else:
            xi = _withcost_solve_scaled(spec, grid.dt, s_t, xi_prev, scalar_form)
        if t > 0 or charge_initial:
            cost_t = spec.cost_rate * (np.abs(xi - xi_prev) * s_tilde[:, t, :]).sum(axis=1)
            excess_xi -= cost_t
            costs_xi += cost_t
        excess_xi += ((s_tilde[:, t + 1, :] - s_tilde[:, t, :]) * xi).sum(axis=1)
        controls[:, t, :] = xi / scale
        xi_prev = xi

    excess = excess_xi / scale
    wealth = (spec.v0 + excess) * batch.s0[-1]
    return BenchmarkRun(
        kind=kind, gamma_u=gamma_u, wealth=wealth, excess=excess,
        controls=controls, costs=costs_xi / scale,
    )


def run_equal_weight(
    spec: MarketSpec,
    grid: TimeGrid,
    batch: PathBatch,
    charge_initial: bool = False,
) -> BenchmarkRun:
    """Hold equal cash amounts in each risky asset, rebalanced every
    trading date (no cash leg; costs are borrowed against the position)."""
    m = grid.n_steps
    n_paths = batch.n_paths
    d = spec.d
    s_tilde = batch.s_tilde

    alpha_prev = np.zeros((n_paths, d))
    excess = np.zeros(n_paths)
    costs = np.zeros(n_paths)
    controls = np.empty((n_paths, m, d))
    for t in range(m):
        wealth_t = spec.v0 + excess
        alpha = wealth_t[:, None] / (d * s_tilde[:, t, :])
        if t > 0 or charge_initial:
            cost_t = spec.cost_rate * (np.abs(alpha - alpha_prev) * s_tilde[:, t, :]).sum(axis=1)
            excess -= cost_t
            costs += cost_t
        excess += ((s_tilde[:, t + 1, :] - s_tilde[:, t, :]) * alpha).sum(axis=1)
        controls[:, t, :] = alpha
        alpha_prev = alpha

    wealth = (spec.v0 + excess) * batch.s0[-1]
    return BenchmarkRun(
        kind=EQUAL_WEIGHT, gamma_u=None, wealth=wealth, excess=excess,
        controls=controls, costs=costs,
    )


def run_multiperiod_ignore_cost(
    train_maps,
    config,
    eval_maps=None,
    charge_initial: bool = False,
    solution=None,
):
    """Optimize the chaos coefficients as if trading were free, then charge
    the realized wealth the actual costs.

    Returns (solution, run): the cost-blind Solution and a BenchmarkRun with
    wealth evaluated on eval_maps (default: the training maps themselves).
    A precomputed cost-blind solution can be passed to skip the solve.
    """
    from .optimizer import solve
    from .strategy import evaluate, positions

    if solution is None:
        solution = solve(train_maps, config, cost_rate=0.0, charge_initial=charge_initial)
    maps = train_maps if eval_maps is None else eval_maps
    excess = evaluate(maps, solution.beta, charge_initial=charge_initial) - maps.v0
    # costs actually paid = frictionless result minus charged result
    frictionless = evaluate(maps, solution.beta, cost_rate=0.0, charge_initial=charge_initial)
    return solution, BenchmarkRun(
        kind=MULTIPERIOD_IGNORECOST,
        gamma_u=config.gamma,
        wealth=(maps.v0 + excess) * maps.s0_terminal,
        excess=excess,
        controls=positions(maps, solution.beta),
        costs=frictionless - (maps.v0 + excess),
    )


def dump_wealth_csv(run: BenchmarkRun, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "terminal_wealth"])
        for p, w in enumerate(run.wealth):
            writer.writerow([p, format(w, ".17g")])


def dump_controls_csv(controls: np.ndarray, path, path_ids=None) -> None:
    """Trajectory dump: one row per (path id, step, asset)."""
    import csv

    if path_ids is None:
        path_ids = range(controls.shape[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "step", "asset", "quantity"])
        for p in path_ids:
            for t in range(controls.shape[1]):
                for i in range(controls.shape[2]):
                    writer.writerow([p, t, i, format(controls[p, t, i], ".17g")])
