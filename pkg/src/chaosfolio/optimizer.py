"""Stochastic gradient ascent on the mean-variance surrogate objective.

The problem over (beta, theta) maximizes the expectation of
G(beta, theta) = R(beta) S0_N - gamma ((R(beta) - theta) S0_N)^2 under the
physical measure; for fixed beta the optimal theta is E[R(beta)], so theta
is tracked as an exponentially weighted running mean of batch means instead
of taking explicit theta gradient steps.  beta[0] stays pinned to v0.

The stationarity certificate is the Euclidean norm of the estimated
expected gradient at theta = mean R, computed on a held-out slice of paths
never touched by the SGD batches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .chaos import ChaosBasis, ChaosVector
from .strategy import StrategyMaps, evaluate, grad_r


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    gamma: float
    learning_rate: float = 8.5
    batch_size: int = 100
    iterations: int = 1000
    lr_schedule: str = "constant"  # or "inverse-sqrt"
    theta_mode: str = "running-mean"  # or "batch-mean"
    theta_decay: float = 0.9
    certificate_paths: int = 10000
    certificate_bootstrap: int = 200
    certificate_seed: int = 1

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch_size and iterations must be >= 1")
        if self.lr_schedule not in ("constant", "inverse-sqrt"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.theta_mode not in ("running-mean", "batch-mean"):
            raise ValueError(f"unknown theta_mode {self.theta_mode!r}")


@dataclass
class Solution:
    beta: np.ndarray
    theta: float
    gamma: float
    objective_estimate: float
    residual: float
    residual_stderr: float
    trace: np.ndarray  # columns: iteration, objective, residual, theta
    cost_rate: float

    def save_csv(self, path, basis: ChaosBasis) -> None:
        extra = {
            "gamma": format(self.gamma, ".17g"),
            "theta": format(self.theta, ".17g"),
            "objective": format(self.objective_estimate, ".17g"),
            "residual": format(self.residual, ".17g"),
            "residual_stderr": format(self.residual_stderr, ".17g"),
            "cost_rate": format(self.cost_rate, ".17g"),
        }
        ChaosVector(basis, self.beta).save_csv(path, extra_header=extra)

    @classmethod
    def load_csv(cls, path) -> "Solution":
        vec, header = ChaosVector.load_csv(path)
        return cls(
            beta=vec.coeffs,
            theta=float(header["theta"]),
            gamma=float(header["gamma"]),
            objective_estimate=float(header.get("objective", "nan")),
            residual=float(header["residual"]),
            residual_stderr=float(header.get("residual_stderr", "nan")),
            trace=np.empty((0, 4)),
            cost_rate=float(header.get("cost_rate", "nan")),
        )

    def save_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "grad_norm", "theta"])
            for row in self.trace:
                writer.writerow(
                    [int(row[0])] + [format(v, ".17g") for v in row[1:]]
                )


def objective(
    maps: StrategyMaps,
    beta: np.ndarray,
    theta: float,
    gamma: float,
    cost_rate: float | None = None,
    charge_initial: bool = False,
) -> float:
    """Monte Carlo mean of G over the batch."""
    s0 = maps.s0_terminal
    r = evaluate(maps, beta, cost_rate, charge_initial)
    g = r * s0 - gamma * ((r - theta) * s0) ** 2
    return float(g.mean())


def gradient(
    maps: StrategyMaps,
    beta: np.ndarray,
    theta: float,
    gamma: float,
    cost_rate: float | None = None,
    charge_initial: bool = False,
) -> tuple[np.ndarray, float]:
    """MC means of the per-path gradients of G in beta and theta."""
    s0 = maps.s0_terminal
    r = evaluate(maps, beta, cost_rate, charge_initial)
    gr = grad_r(maps, beta, cost_rate, charge_initial)
    weight = s0 * (1.0 - 2.0 * gamma * s0 * (r - theta))
    grad_beta = (gr * weight[:, None]).mean(axis=0)
    grad_theta = float(2.0 * gamma * s0 * s0 * (r - theta).mean())
    return grad_beta, grad_theta


def certificate(
    maps: StrategyMaps,
    beta: np.ndarray,
    gamma: float,
    cost_rate: float | None = None,
    charge_initial: bool = False,
    n_bootstrap: int = 200,
    seed: int = 1,
) -> tuple[float, float]:
    """Stationarity residual norm and its bootstrap stderr.

    Residual = || mean over paths of the G gradient at theta = mean R ||.
    The bootstrap resamples paths with replacement and recenters theta per
    resample.
    """
    s0 = maps.s0_terminal
    r = evaluate(maps, beta, cost_rate, charge_initial)
    gr = grad_r(maps, beta, cost_rate, charge_initial)

    def norm_at(r_sub, gr_sub):
        weight = s0 * (1.0 - 2.0 * gamma * s0 * (r_sub - r_sub.mean()))
        return float(np.linalg.norm((gr_sub * weight[:, None]).mean(axis=0)))

    residual = norm_at(r, gr)
    n = r.shape[0]
    rng = np.random.default_rng(seed)
    norms = np.empty(n_bootstrap)
    for b in range(n_bootstrap):
        idx = rng.integers(0, n, size=n)
        norms[b] = norm_at(r[idx], gr[idx])
    return residual, float(norms.std(ddof=1))


def solve(
    maps: StrategyMaps,
    config: OptimizerConfig,
    cost_rate: float | None = None,
    charge_initial: bool = False,
) -> Solution:
    """Run SGD ascent over contiguous path batches; last
    certificate_paths paths are held out for the residual estimate."""
    m = maps.basis.size
    v0 = maps.v0
    n_total = maps.n_paths
    n_held = min(config.certificate_paths, max(n_total // 5, 1))
    n_train = n_total - n_held
    if n_train < config.batch_size:
        raise OptimizerError(
            f"not enough paths: {n_total} total, {n_held} held out, "
            f"batch_size {config.batch_size}"
        )

    beta = np.zeros(m)
    beta[0] = v0
    theta = v0
    trace = np.empty((config.iterations, 4))
    cursor = 0
    for it in range(config.iterations):
        if cursor + config.batch_size > n_train:
            cursor = 0
        batch = maps.slice(cursor, cursor + config.batch_size)
        cursor += config.batch_size

        r = evaluate(batch, beta, cost_rate, charge_initial)
        if config.theta_mode == "running-mean":
            theta = config.theta_decay * theta + (1.0 - config.theta_decay) * float(r.mean())
        else:
            theta = float(r.mean())

        s0 = maps.s0_terminal
        gr = grad_r(batch, beta, cost_rate, charge_initial)
        weight = s0 * (1.0 - 2.0 * config.gamma * s0 * (r - theta))
        grad_beta = (gr * weight[:, None]).mean(axis=0)
        grad_beta[0] = 0.0  # beta[0] is pinned

        lr = config.learning_rate
        if config.lr_schedule == "inverse-sqrt":
            lr = lr / np.sqrt(it + 1.0)
        beta = beta + lr * grad_beta
        beta[0] = v0

        with np.errstate(over="ignore", invalid="ignore"):
            obj = float((r * s0 - config.gamma * ((r - theta) * s0) ** 2).mean())
        if not np.isfinite(obj) or not np.all(np.isfinite(beta)):
            raise OptimizerError(
                f"objective diverged at iteration {it}; trace so far:\n{trace[:it]}"
            )
        trace[it] = (it + 1, obj, float(np.linalg.norm(grad_beta)), theta)

    held = maps.slice(n_train, n_total)
    residual, stderr = certificate(
        held, beta, config.gamma, cost_rate, charge_initial,
        n_bootstrap=config.certificate_bootstrap, seed=config.certificate_seed,
    )
    r_held = evaluate(held, beta, cost_rate, charge_initial)
    theta_star = float(r_held.mean())
    obj_star = objective(held, beta, theta_star, config.gamma, cost_rate, charge_initial)
    return Solution(
        beta=beta,
        theta=theta_star,
        gamma=config.gamma,
        objective_estimate=obj_star,
        residual=residual,
        residual_stderr=stderr,
        trace=trace,
        cost_rate=maps.cost_rate if cost_rate is None else cost_rate,
    )
