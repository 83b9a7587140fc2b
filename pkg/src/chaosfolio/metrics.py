"""Performance statistics over terminal wealth samples, with jackknife
standard errors, plus the risk-aversion matching construction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PerfStats:
    n_paths: int
    gamma: float
    mean_terminal: float  # currency
    rate_of_return: float  # fraction of v0
    volatility: float  # std of terminal wealth / v0
    min_var: float  # mean - gamma * variance, currency
    sharpe: float  # nan when variance degenerates
    stderr_mean: float
    stderr_rate_of_return: float
    stderr_volatility: float
    stderr_min_var: float
    stderr_sharpe: float


def _jackknife_stderr(loo: np.ndarray) -> float:
    n = loo.size
    return float(np.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum()))


def perf(wealth: np.ndarray, gamma: float, v0: float, s0_terminal: float) -> PerfStats:
    """Sample statistics of terminal wealth with leave-one-out stderrs.

    sharpe = (mean - v0 * s0_terminal) / std; volatility and return are
    fractions of v0 over the whole horizon (no annualization); min_var =
    mean - gamma * variance.  Zero variance makes sharpe nan ("absent").
    """
    w = np.asarray(wealth, dtype=float)
    n = w.size
    if n < 2:
        raise ValueError("need at least 2 samples")
    mean = float(w.mean())
    var = float(w.var(ddof=1))
    std = math.sqrt(var)
    baseline = v0 * s0_terminal

    s1 = w.sum()
    s2 = (w * w).sum()
    loo_mean = (s1 - w) / (n - 1)
    stderr_mean = _jackknife_stderr(loo_mean)
    # variance at rounding-noise level counts as degenerate
    tiny = 1e-13 * max(abs(mean), 1.0)
    sharpe = (mean - baseline) / std if std > tiny else float("nan")

    # leave-one-out variances need a third sample
    if n >= 3:
        loo_var = np.maximum((s2 - w * w - (n - 1) * loo_mean**2) / (n - 2), 0.0)
        loo_std = np.sqrt(loo_var)
        stderr_vol = _jackknife_stderr(loo_std / v0)
        stderr_minvar = _jackknife_stderr(loo_mean - gamma * loo_var)
        if std > tiny and np.all(loo_std > tiny):
            stderr_sharpe = _jackknife_stderr((loo_mean - baseline) / loo_std)
        else:
            stderr_sharpe = float("nan")
    else:
        stderr_vol = float("nan")
        stderr_minvar = float("nan")
        stderr_sharpe = float("nan")

    return PerfStats(
        n_paths=n,
        gamma=gamma,
        mean_terminal=mean,
        rate_of_return=(mean - v0) / v0,
        volatility=std / v0,
        min_var=mean - gamma * var,
        sharpe=sharpe,
        stderr_mean=stderr_mean,
        stderr_rate_of_return=stderr_mean / v0,
        stderr_volatility=stderr_vol,
        stderr_min_var=stderr_minvar,
        stderr_sharpe=stderr_sharpe,
    )


@dataclass(frozen=True)
class MatchResult:
    gamma_prime: float
    scale: float | None  # gamma / gamma_prime when the source gamma is known


def match_risk_aversion(sharpe: float, target_vol: float, gamma: float | None = None) -> MatchResult:
    """Risk aversion whose optimal portfolio attains a target volatility.

    gamma_prime = sharpe / (2 * target_vol), target_vol in currency (std of
    terminal wealth).  When the source gamma is supplied, also returns the
    control scale factor u = gamma / gamma_prime = 2 gamma target_vol / sharpe
    that carries the source solution onto the target.
    """
    if sharpe <= 0.0 or target_vol <= 0.0:
        raise ValueError("sharpe and target_vol must be positive")
    gamma_prime = sharpe / (2.0 * target_vol)
    scale = None if gamma is None else gamma / gamma_prime
    return MatchResult(gamma_prime=gamma_prime, scale=scale)


def scale_solution(beta: np.ndarray, u: float, v0: float) -> np.ndarray:
    """Scale all non-constant coefficients by u, keeping beta[0] = v0.

    Controls scale exactly by u per path; the Sharpe ratio is unchanged."""
    if u <= 0.0:
        raise ValueError("u must be positive")
    out = u * np.asarray(beta, dtype=float)
    out[0] = v0
    return out
