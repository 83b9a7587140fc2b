"""Per-path linear maps turning chaos coefficients into tradable strategies.

For a fixed path, every quantity of interest is linear (or piecewise linear)
in the coefficient vector beta: positions alpha_{n+1} = B_{n+1} beta, trades
K_n beta with K_n = B_{n+1} - B_n and B_0 = 0 (all cash at the start), and
the gains D . beta so that the discounted terminal value before costs is
v0 + D . beta.  The maps are beta-independent, so they are materialized once
per path batch and every optimizer step reduces to matrix-vector products.

Proportional costs subtract cost_rate * |K_n^i . beta| * s_tilde_n^i per
rebalance; the first rebalance (from all cash) is free unless
charge_initial is set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .chaos import ChaosBasis, ShapeError, build_bracket_tables, bracket_matrix
from .market import Measure, MarketSpec, PathBatch, TimeGrid, cond_cov_delta_s, girsanov_shift


@dataclass(frozen=True)
class StrategyMaps:
    """Materialized linear maps for a batch of paths.

    d_vec: (P, m) gains map; k_maps: (P, M, d, m) per-step trade maps;
    cost_base: (P, M, d) discounted prices at the rebalancing dates;
    s0_terminal: numeraire at the horizon.
    """

    d_vec: np.ndarray
    k_maps: np.ndarray
    cost_base: np.ndarray
    s0_terminal: float
    v0: float
    cost_rate: float
    basis: ChaosBasis

    @property
    def n_paths(self) -> int:
        return self.d_vec.shape[0]

    @property
    def n_steps(self) -> int:
        return self.k_maps.shape[1]

    def slice(self, lo: int, hi: int) -> "StrategyMaps":
        """View of a contiguous path range (no copy)."""
        return replace(
            self,
            d_vec=self.d_vec[lo:hi],
            k_maps=self.k_maps[lo:hi],
            cost_base=self.cost_base[lo:hi],
        )


def build_maps(
    spec: MarketSpec,
    grid: TimeGrid,
    basis: ChaosBasis,
    etas: np.ndarray,
    batch: PathBatch,
    chunk_size: int = 32768,
) -> StrategyMaps:
    """Build the per-path strategy maps from fitted asset expansions.

    etas is (d, m): one chaos coefficient row per discounted asset.
    Physical batches are girsanov-shifted internally so the basis always
    sees risk-neutral increments.  Positions solve
    cond_cov(s_tilde_n) alpha_{n+1} = bracket-vector at every step, hence
    B_{n+1} = cond_cov^{-1} N_t with N_t the linear-in-beta bracket matrix.
    """
    etas = np.asarray(etas, dtype=float)
    d = spec.d
    m_steps = grid.n_steps
    if etas.shape != (d, basis.size):
        raise ShapeError(f"etas must be ({d}, {basis.size}), got {etas.shape}")
    if basis.n_steps != m_steps or basis.n_assets != d:
        raise ShapeError("basis grid does not match the market grid")
    tables = build_bracket_tables(basis)
    n_paths = batch.n_paths
    m = basis.size
    d_vec = np.zeros((n_paths, m))
    k_maps = np.empty((n_paths, m_steps, d, m))
    s_tilde = batch.s_tilde
    cost_base = np.ascontiguousarray(s_tilde[:, :m_steps, :])

    for lo in range(0, n_paths, chunk_size):
        hi = min(lo + chunk_size, n_paths)
        z = batch.z[lo:hi]
        if batch.measure is Measure.PHYSICAL:
            z = girsanov_shift(spec, grid, z)
        h = basis.eval(z)
        st = s_tilde[lo:hi]
        b_prev = np.zeros((hi - lo, d, m))
        for t in range(m_steps):
            numer = np.stack(
                [bracket_matrix(etas[j], tables[t], h, m) for j in range(d)],
                axis=1,
            )
            cov = cond_cov_delta_s(spec, grid, st[:, t, :])
            b_now = np.linalg.solve(cov, numer)
            k_maps[lo:hi, t] = b_now - b_prev
            ds = st[:, t + 1, :] - st[:, t, :]
            d_vec[lo:hi] += np.einsum("pim,pi->pm", b_now, ds)
            b_prev = b_now

    return StrategyMaps(
        d_vec=d_vec,
        k_maps=k_maps,
        cost_base=cost_base,
        s0_terminal=float(batch.s0[-1]),
        v0=spec.v0,
        cost_rate=spec.cost_rate,
        basis=basis,
    )


def trade_sizes(maps: StrategyMaps, beta: np.ndarray) -> np.ndarray:
    """Per-path trades K_n . beta, shape (P, M, d)."""
    return maps.k_maps @ np.asarray(beta, dtype=float)


def positions(maps: StrategyMaps, beta: np.ndarray) -> np.ndarray:
    """Per-path positions held over each period, shape (P, M, d).

    Entry [:, n] is the position bought at trading date n (cumulative
    trades through that date)."""
    return np.cumsum(trade_sizes(maps, beta), axis=1)


def _charged_costs(maps, trades, cost_rate, charge_initial):
    start = 0 if charge_initial else 1
    per_step = cost_rate * np.abs(trades[:, start:, :]) * maps.cost_base[:, start:, :]
    return per_step.sum(axis=(1, 2))


def evaluate(
    maps: StrategyMaps,
    beta: np.ndarray,
    cost_rate: float | None = None,
    charge_initial: bool = False,
) -> np.ndarray:
    """Discounted terminal value R(beta) per path.

    R = v0 + D . beta - sum_n cost_rate |K_n . beta| s_tilde_n over the
    charged rebalances; undiscounted wealth is R * s0_terminal.
    """
    beta = np.asarray(beta, dtype=float)
    nu = maps.cost_rate if cost_rate is None else cost_rate
    gains = maps.d_vec @ beta
    if nu == 0.0:
        return maps.v0 + gains
    trades = trade_sizes(maps, beta)
    return maps.v0 + gains - _charged_costs(maps, trades, nu, charge_initial)


def terminal_wealth(
    maps: StrategyMaps,
    beta: np.ndarray,
    cost_rate: float | None = None,
    charge_initial: bool = False,
) -> np.ndarray:
    return evaluate(maps, beta, cost_rate, charge_initial) * maps.s0_terminal


def grad_r(
    maps: StrategyMaps,
    beta: np.ndarray,
    cost_rate: float | None = None,
    charge_initial: bool = False,
) -> np.ndarray:
    """Per-path subgradient of R, shape (P, m), with sign(0) := 0.

    grad R = D - sum_{n,i} cost_rate sign(K_n^i . beta) s_tilde_n^i K_n^i;
    satisfies beta . grad R(beta) = R(beta) - v0 exactly.
    """
    beta = np.asarray(beta, dtype=float)
    nu = maps.cost_rate if cost_rate is None else cost_rate
    if nu == 0.0:
        return maps.d_vec.copy()
    trades = trade_sizes(maps, beta)
    start = 0 if charge_initial else 1
    weights = nu * np.sign(trades[:, start:, :]) * maps.cost_base[:, start:, :]
    return maps.d_vec - np.einsum(
        "pni,pnim->pm", weights, maps.k_maps[:, start:, :, :]
    )
