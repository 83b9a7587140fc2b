"""Truncated Wiener chaos calculus over (trading step, asset factor) slots.

The basis enumerates every multi-index of Hermite degrees with total degree
at most K over n_steps * n_assets slots, graded-lexicographically (grade
first, then lexicographic on the flattened degree tuple; position 0 is the
constant term).  Members evaluate as tensor products of probabilists'
Hermite polynomials of the normalized increments, which are orthogonal with
E[H_a H_b] = 1_{a=b} prod(a!).

Three pieces of calculus are provided on top of evaluation:

* ``fit_chaos``: Monte Carlo projection of a payoff sample onto the basis.
* ``restrict_to_step``: conditional expectation given the first n steps,
  implemented by zeroing coefficients that touch later steps.
* ``delta_bracket``: the order-K expansion of the conditional covariation
  between one step's increment of two expanded martingales; precompiled to
  a sparse pair table per step because its structure is path-independent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class ShapeError(ValueError):
    """Dimension or basis mismatch."""


def hermite_values(x: np.ndarray, max_degree: int) -> np.ndarray:
    """Probabilists' Hermite values H_0..H_max_degree, stacked on a new last axis.

    Uses the recurrence H_{i+1}(x) = x H_i(x) - i H_{i-1}(x) with H_0 = 1,
    H_1 = x.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = x
    for i in range(1, max_degree):
        out[..., i + 1] = x * out[..., i] - i * out[..., i - 1]
    return out


def hermite_eval(degree: int, x):
    """Value of the probabilists' Hermite polynomial of one degree."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    return hermite_values(np.asarray(x, dtype=float), degree)[..., degree]


def _compositions(total: int, slots: int):
    # weak compositions of `total` into `slots` parts, lexicographically
    if slots == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, slots - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class ChaosBasis:
    """All multi-indices with total degree <= order over an
    (n_steps, n_assets) slot grid, in graded-lex order."""

    n_steps: int
    n_assets: int
    order: int

    def __post_init__(self):
        if self.n_steps < 1 or self.n_assets < 1 or self.order < 0:
            raise ShapeError("n_steps, n_assets must be >= 1 and order >= 0")

    @cached_property
    def indices(self) -> np.ndarray:
        dims = self.n_steps * self.n_assets
        rows = []
        for grade in range(self.order + 1):
            rows.extend(sorted(_compositions(grade, dims)))
        arr = np.array(rows, dtype=np.int64).reshape(-1, self.n_steps, self.n_assets)
        arr.setflags(write=False)
        return arr

    @cached_property
    def size(self) -> int:
        return math.comb(self.n_steps * self.n_assets + self.order, self.order)

    @cached_property
    def factorials(self) -> np.ndarray:
        fact = np.array(
            [math.prod(math.factorial(int(v)) for v in idx.ravel()) for idx in self.indices],
            dtype=float,
        )
        fact.setflags(write=False)
        return fact

    @cached_property
    def max_step(self) -> np.ndarray:
        """Last step (0-based) with a nonzero degree; -1 for the constant."""
        nonzero = self.indices.sum(axis=2) > 0
        # argmax on the reversed mask finds the last nonzero step
        ms = np.where(
            nonzero.any(axis=1),
            self.n_steps - 1 - nonzero[:, ::-1].argmax(axis=1),
            -1,
        )
        ms.setflags(write=False)
        return ms

    @cached_property
    def lookup(self) -> dict:
        return {
            tuple(idx.ravel()): pos for pos, idx in enumerate(self.indices)
        }

    @property
    def dims(self) -> int:
        return self.n_steps * self.n_assets

    def position(self, degrees) -> int:
        key = tuple(int(v) for v in np.asarray(degrees).ravel())
        try:
            return self.lookup[key]
        except KeyError:
            raise ShapeError(f"degrees {key} not in basis (order {self.order})") from None

    def eval(self, z: np.ndarray) -> np.ndarray:
        """Evaluate every basis member at increments z of shape
        (..., n_steps, n_assets); returns (..., size)."""
        z = np.asarray(z, dtype=float)
        if z.shape[-2:] != (self.n_steps, self.n_assets):
            raise ShapeError(
                f"z must end in ({self.n_steps}, {self.n_assets}), got {z.shape}"
            )
        h = hermite_values(z, self.order)
        lead = z.shape[:-2]
        out = np.ones(lead + (self.size,))
        for pos, idx in enumerate(self.indices):
            ks, js = np.nonzero(idx)
            for k, j in zip(ks, js):
                out[..., pos] *= h[..., k, j, idx[k, j]]
        return out


@dataclass
class ChaosVector:
    """Coefficient vector tied to a basis; the serialization boundary."""

    basis: ChaosBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.basis.size,):
            raise ShapeError(
                f"coeffs must have shape ({self.basis.size},), got {self.coeffs.shape}"
            )
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")

    def save_csv(self, path, extra_header: dict | None = None) -> None:
        b = self.basis
        with open(path, "w", newline="") as fh:
            fh.write(f"# n_steps={b.n_steps} n_assets={b.n_assets} order={b.order} ordering=graded-lex\n")
            for key, val in (extra_header or {}).items():
                fh.write(f"# {key}={val}\n")
            writer = csv.writer(fh)
            writer.writerow(
                [f"deg_s{k}_a{j}" for k in range(b.n_steps) for j in range(b.n_assets)]
                + ["coefficient"]
            )
            for idx, c in zip(b.indices, self.coeffs):
                writer.writerow([int(v) for v in idx.ravel()] + [format(c, ".17g")])

    @classmethod
    def load_csv(cls, path) -> tuple["ChaosVector", dict]:
        header = {}
        rows = []
        with open(path, newline="") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    for tok in line[1:].strip().split():
                        if "=" in tok:
                            k, v = tok.split("=", 1)
                            header[k] = v
                    continue
                rows.append(line)
        basis = ChaosBasis(
            n_steps=int(header["n_steps"]),
            n_assets=int(header["n_assets"]),
            order=int(header["order"]),
        )
        reader = csv.reader(rows)
        next(reader)  # column names
        coeffs = np.zeros(basis.size)
        for row in reader:
            degrees = [int(v) for v in row[:-1]]
            coeffs[basis.position(degrees)] = float(row[-1])
        return cls(basis, coeffs), header


def fit_chaos(y: np.ndarray, z: np.ndarray, basis: ChaosBasis) -> np.ndarray:
    """Monte Carlo projection: coeffs[a] = mean(y H_a(z)) / prod(a!).

    The constant coefficient is the plain sample mean and the remaining
    projections are taken against y - mean(y), so a constant sample yields
    exactly (c, 0, ..., 0).  z must be increments under the same measure the
    expansion is meant for (risk-neutral, or physical already shifted).
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("samples must be finite")
    if y.shape[0] != z.shape[0]:
        raise ShapeError("y and z must agree on the path axis")
    h = basis.eval(z)
    coeffs = np.empty(basis.size)
    c0 = y.mean()
    coeffs[0] = c0
    resid = y - c0
    coeffs[1:] = (resid[:, None] * h[:, 1:]).mean(axis=0) / basis.factorials[1:]
    return coeffs


def eval_chaos(coeffs: np.ndarray, z: np.ndarray, basis: ChaosBasis) -> np.ndarray:
    """Evaluate the expansion with the given coefficients at z."""
    return basis.eval(z) @ np.asarray(coeffs, dtype=float)


def restrict_to_step(coeffs: np.ndarray, n: int, basis: ChaosBasis) -> np.ndarray:
    """Conditional expectation given the first n steps: zero every
    coefficient whose index touches step n or later.  n = 0 keeps only the
    constant; n = n_steps is the identity.  Idempotent."""
    if not 0 <= n <= basis.n_steps:
        raise ShapeError(f"step {n} outside [0, {basis.n_steps}]")
    out = np.array(coeffs, dtype=float, copy=True)
    out[basis.max_step >= n] = 0.0
    return out


@dataclass(frozen=True)
class StepBracketTable:
    """Sparse pair structure of the bracket at one step.

    Arrays of equal length: positions a (taken from the left vector), b
    (right vector), the factorial weight of their shared step-n block, and
    the positions of their histories (indices with the step-n block zeroed).
    """

    a: np.ndarray
    b: np.ndarray
    weight: np.ndarray
    hist_a: np.ndarray
    hist_b: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.a.size


def build_bracket_tables(basis: ChaosBasis) -> list[StepBracketTable]:
    """Precompile the bracket pair lists for every step.

    A pair (a, b) contributes at step t when both indices live on steps
    <= t, share an identical nonzero step-t block, and their history
    degrees (the shared block excluded, since conditioning integrates it
    out) sum to at most the basis order.  The contribution is
    coeff_a * coeff_b * prod(block!) * H_{hist_a}(z) * H_{hist_b}(z).
    """
    idx = basis.indices
    tables = []
    for t in range(basis.n_steps):
        live = np.nonzero((basis.max_step == t))[0]
        a_list, b_list, w_list, ha_list, hb_list = [], [], [], [], []
        for a in live:
            block_a = idx[a, t]
            block_deg = int(block_a.sum())
            hist_deg_a = int(idx[a].sum()) - block_deg
            weight = math.prod(math.factorial(int(v)) for v in block_a)
            hist = idx[a].copy()
            hist[t] = 0
            ha = basis.position(hist)
            for b in live:
                if not np.array_equal(idx[b, t], block_a):
                    continue
                if int(idx[b].sum()) - block_deg + hist_deg_a > basis.order:
                    continue
                hist_b = idx[b].copy()
                hist_b[t] = 0
                a_list.append(a)
                b_list.append(b)
                w_list.append(float(weight))
                ha_list.append(ha)
                hb_list.append(basis.position(hist_b))
        tables.append(
            StepBracketTable(
                a=np.array(a_list, dtype=np.int64),
                b=np.array(b_list, dtype=np.int64),
                weight=np.array(w_list, dtype=float),
                hist_a=np.array(ha_list, dtype=np.int64),
                hist_b=np.array(hb_list, dtype=np.int64),
            )
        )
    return tables


def bracket_matrix(
    eta: np.ndarray, table: StepBracketTable, h_values: np.ndarray, size: int
) -> np.ndarray:
    """Linear-in-beta form of the bracket at one step.

    Returns N of shape (n_paths, size) with bracket(beta) = N @ beta:
    N[:, a] = sum over pairs with left position a of
    eta[b] * weight * H[hist_a] * H[hist_b].
    """
    n_paths = h_values.shape[0]
    out = np.zeros((size, n_paths))
    if table.n_pairs:
        contrib = (
            eta[table.b]
            * table.weight
            * h_values[:, table.hist_a]
            * h_values[:, table.hist_b]
        )
        np.add.at(out, table.a, contrib.T)
    return out.T


def delta_bracket(
    beta: np.ndarray,
    eta: np.ndarray,
    step: int,
    z: np.ndarray,
    basis: ChaosBasis,
    table: StepBracketTable | None = None,
) -> np.ndarray:
    """Order-K conditional covariation bracket at one step.

    Evaluates, per path, the truncated expansion of the conditional
    expectation of the product of step ``step`` increments of the two
    expanded martingales given the history before that step.  Bilinear in
    (beta, eta); a function of z only through steps before ``step``.
    """
    beta = np.asarray(beta, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if beta.shape != (basis.size,) or eta.shape != (basis.size,):
        raise ShapeError("beta and eta must match the basis size")
    if not 0 <= step < basis.n_steps:
        raise ShapeError(f"step {step} outside [0, {basis.n_steps})")
    if table is None:
        table = build_bracket_tables(basis)[step]
    z = np.asarray(z, dtype=float)
    single = z.ndim == 2
    if single:
        z = z[None]
    h = basis.eval(z)
    n = bracket_matrix(eta, table, h, basis.size)
    out = n @ beta
    return out[0] if single else out
