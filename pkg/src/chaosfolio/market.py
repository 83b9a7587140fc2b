"""Correlated lognormal market model on a coarse rebalancing grid.

Assets follow geometric Brownian motion with constant drift, volatility and
correlation; the numeraire grows at a constant risk-free rate.  Simulation
happens directly at the rebalancing dates (period = ``days_per_period`` steps
of size ``day_count`` years), since with constant parameters intermediate
observations add nothing to the optimal controls.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri


class Measure(enum.Enum):
    PHYSICAL = "physical"
    RISK_NEUTRAL = "risk_neutral"


class ModelError(ValueError):
    """Invalid market parameters (bad correlation, shapes, signs)."""


class ConfigError(ValueError):
    """Invalid grid or experiment configuration."""


def _as_vector(x, d: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (d,):
        raise ModelError(f"{name} must have shape ({d},), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class MarketSpec:
    """Market parameters: drifts, vols, correlation, rate, wealth, cost rate.

    ``sigma_marginal[i]`` is the per-asset volatility per sqrt(year);
    ``rho`` the instantaneous correlation of the driving Brownian motions.
    The volatility matrix has row i equal to ``sigma_marginal[i]`` times row
    i of the lower Cholesky factor of ``rho``, so row_i . row_j equals
    sigma_i sigma_j rho_ij.
    """

    mu: np.ndarray
    sigma_marginal: np.ndarray
    rho: np.ndarray
    rate: float
    v0: float
    cost_rate: float
    s_init: np.ndarray | None = None
    s0_init: float = 1.0
    # derived, filled in __post_init__
    vol_matrix: np.ndarray = field(init=False, repr=False)
    cov_log: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = np.asarray(self.mu).size
        mu = _as_vector(self.mu, d, "mu")
        sig = _as_vector(self.sigma_marginal, d, "sigma_marginal")
        rho = np.asarray(self.rho, dtype=float)
        if rho.shape != (d, d):
            raise ModelError(f"rho must be {d}x{d}, got {rho.shape}")
        if not np.allclose(rho, rho.T, atol=1e-12):
            raise ModelError("rho must be symmetric")
        if not np.allclose(np.diag(rho), 1.0, atol=1e-12):
            raise ModelError("rho must have unit diagonal")
        if np.any(sig <= 0.0):
            raise ModelError("sigma_marginal must be positive")
        if self.v0 <= 0.0:
            raise ModelError("v0 must be positive")
        if self.cost_rate < 0.0:
            raise ModelError("cost_rate must be nonnegative")
        try:
            chol = np.linalg.cholesky(rho)
        except np.linalg.LinAlgError as exc:
            raise ModelError("rho is not positive definite") from exc
        s_init = self.s_init
        if s_init is None:
            s_init = np.full(d, 100.0)
        s_init = _as_vector(s_init, d, "s_init")
        if np.any(s_init <= 0.0):
            raise ModelError("s_init must be positive")
        if self.s0_init <= 0.0:
            raise ModelError("s0_init must be positive")
        vol = sig[:, None] * chol
        for name, val in (
            ("mu", mu), ("sigma_marginal", sig), ("rho", rho),
            ("s_init", s_init), ("vol_matrix", vol),
            ("cov_log", vol @ vol.T),
        ):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def d(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class TimeGrid:
    """Uniform rebalancing grid: n_days steps of day_count years, traded every
    days_per_period steps."""

    n_days: int
    days_per_period: int
    day_count: float

    def __post_init__(self):
        if self.n_days <= 0 or self.days_per_period <= 0:
            raise ConfigError("n_days and days_per_period must be positive")
        if self.n_days % self.days_per_period != 0:
            raise ConfigError(
                f"n_days={self.n_days} not divisible by days_per_period={self.days_per_period}"
            )
        if self.day_count <= 0.0:
            raise ConfigError("day_count must be positive")

    @classmethod
    def from_days(cls, n_days: int, days_per_period: int, day_count: float | None = None) -> "TimeGrid":
        # default day-count makes the whole horizon one year
        if day_count is None:
            if n_days <= 0:
                raise ConfigError("n_days and days_per_period must be positive")
            day_count = 1.0 / n_days
        return cls(n_days, days_per_period, day_count)

    @property
    def n_steps(self) -> int:
        return self.n_days // self.days_per_period

    @property
    def dt(self) -> float:
        return self.days_per_period * self.day_count

    @property
    def horizon(self) -> float:
        return self.n_days * self.day_count

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class PathBatch:
    """Simulated increments and derived prices under a declared measure.

    z holds the standard-normal draws actually used: shape (n_paths, n_steps,
    d). s has shape (n_paths, n_steps+1, d); s0 is the deterministic
    numeraire per trading date.
    """

    measure: Measure
    z: np.ndarray
    s: np.ndarray
    s0: np.ndarray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.z.shape[0]

    @property
    def s_tilde(self) -> np.ndarray:
        return self.s / self.s0[None, :, None]


def normal_increments(
    seed: int, n_paths: int, n_steps: int, d: int, path_offset: int = 0
) -> np.ndarray:
    """Counter-based standard normals, one substream per path.

    Global path index k (= path_offset + row) consumes a fixed block of the
    Philox word stream, so its draws depend on neither n_paths nor the chunk
    layout: simulating 50 paths gives the exact prefix of simulating 100,
    and chunked generation with matching offsets reproduces one big batch.
    Uniforms come from the top 53 bits of each word and are mapped through
    the inverse normal CDF.
    """
    # Philox advances in 4-word counter blocks, so pad each path's block.
    per_path = 4 * ((n_steps * d + 3) // 4)
    bitgen = np.random.Philox(key=seed)
    if path_offset:
        bitgen.advance(path_offset * (per_path // 4))
    words = bitgen.random_raw(n_paths * per_path).reshape(n_paths, per_path)
    words = words[:, : n_steps * d]
    u = (words >> np.uint64(11)) * 2.0 ** -53 + 2.0 ** -54
    return ndtri(u).reshape(n_paths, n_steps, d)


def simulate(
    spec: MarketSpec,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    measure: Measure = Measure.PHYSICAL,
    path_offset: int = 0,
) -> PathBatch:
    """Simulate a batch of price paths at the rebalancing dates.

    Per period of length dt, log(S_{k+1}/S_k) = (m - diag(cov)/2) dt
    + vol_matrix @ z_k sqrt(dt), with m = mu under PHYSICAL and m = rate
    under RISK_NEUTRAL.  Same (seed, n_paths, grid) give bit-identical
    output; path_offset selects a window of the seed's path stream so
    large batches can be produced chunk by chunk.
    """
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    m = grid.n_steps
    d = spec.d
    z = normal_increments(seed, n_paths, m, d, path_offset=path_offset)
    drift_rate = spec.mu if measure is Measure.PHYSICAL else np.full(d, spec.rate)
    drift = (drift_rate - 0.5 * np.diag(spec.cov_log)) * grid.dt
    shock = np.sqrt(grid.dt) * (z @ spec.vol_matrix.T)
    log_s = np.cumsum(drift[None, None, :] + shock, axis=1)
    s = np.empty((n_paths, m + 1, d))
    s[:, 0, :] = spec.s_init
    s[:, 1:, :] = spec.s_init[None, None, :] * np.exp(log_s)
    s0 = spec.s0_init * np.exp(spec.rate * grid.times)
    z.setflags(write=False)
    s.setflags(write=False)
    s0.setflags(write=False)
    return PathBatch(measure=measure, z=z, s=s, s0=s0, seed=seed)


def girsanov_shift(spec: MarketSpec, grid: TimeGrid, z_physical: np.ndarray) -> np.ndarray:
    """Shift physical-measure increments to their risk-neutral counterparts.

    Adds phi sqrt(dt) per step and factor, phi = vol_matrix^{-1} (mu - r).
    Feeding the result to the chaos basis makes risk-neutral-parametrized
    strategies evaluable on physical paths.
    """
    phi = solve_triangular(spec.vol_matrix, spec.mu - spec.rate, lower=True)
    return z_physical + np.sqrt(grid.dt) * phi[None, None, :]


def cond_cov_delta_s(spec: MarketSpec, grid: TimeGrid, s_tilde_n: np.ndarray) -> np.ndarray:
    """One-period conditional covariance of discounted price increments.

    Entry (i, j) is s̃_i s̃_j (exp(cov_log_ij dt) - 1); symmetric positive
    definite for positive prices.  s_tilde_n may be batched (..., d).
    """
    factor = np.exp(spec.cov_log * grid.dt) - 1.0
    return s_tilde_n[..., :, None] * s_tilde_n[..., None, :] * factor


def dump_paths(batch: PathBatch, path) -> None:
    """Write one CSV row per (path, step): prices then numeraire."""
    d = batch.s.shape[2]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "step"] + [f"s{i + 1}" for i in range(d)] + ["s0"])
        for p in range(batch.n_paths):
            for k in range(batch.s.shape[1]):
                writer.writerow(
                    [p, k]
                    + [format(v, ".17g") for v in batch.s[p, k]]
                    + [format(batch.s0[k], ".17g")]
                )
