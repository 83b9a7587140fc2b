"""Hermite tensor basis, chaos fits, and the conditional covariation bracket."""

import math

import numpy as np
import numpy.polynomial.hermite_e as hermite_e
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaosfolio.chaos import (
    ChaosBasis,
    ChaosVector,
    ShapeError,
    bracket_matrix,
    build_bracket_tables,
    delta_bracket,
    eval_chaos,
    fit_chaos,
    hermite_eval,
    hermite_values,
    restrict_to_step,
)
from chaosfolio.market import TimeGrid, simulate


# ------------------------------------------------------------ hermite


@given(
    x=st.floats(min_value=-10.0, max_value=10.0),
    degree=st.integers(min_value=0, max_value=8),
)
@settings(max_examples=200, deadline=None)
def test_hermite_matches_reference(x, degree):
    # independent route: numpy's probabilists' Hermite evaluator
    unit = np.zeros(degree + 1)
    unit[degree] = 1.0
    expected = hermite_e.hermeval(x, unit)
    npt.assert_allclose(hermite_eval(degree, x), expected, rtol=1e-10, atol=1e-10)


def test_hermite_hand_values():
    assert hermite_eval(0, 1.7) == 1.0
    assert hermite_eval(1, 1.7) == 1.7
    assert hermite_eval(2, 0.0) == -1.0
    assert hermite_eval(3, 2.0) == 2.0  # x^3 - 3x at 2
    assert hermite_eval(4, 0.0) == 3.0
    with pytest.raises(ValueError):
        hermite_eval(-1, 0.0)


def test_hermite_values_stacks_degrees():
    x = np.array([0.5, -1.0])
    vals = hermite_values(x, 3)
    assert vals.shape == (2, 4)
    npt.assert_allclose(vals[:, 2], x * x - 1.0, rtol=1e-15)
    npt.assert_allclose(vals[:, 3], x**3 - 3 * x, rtol=1e-14)


def test_hermite_orthonormality_sampled():
    """E[H_j(Z) H_k(Z)] = delta_jk k! against a fixed-seed sample."""
    rng = np.random.default_rng(123)
    n = 400_000
    z = rng.standard_normal(n)
    h = hermite_values(z, 4)
    for j in range(5):
        for k in range(j, 5):
            prod = h[:, j] * h[:, k]
            target = math.factorial(k) if j == k else 0.0
            se = prod.std(ddof=1) / math.sqrt(n)
            if se == 0.0:  # the (0, 0) pair is identically one
                assert prod.mean() == target
            else:
                assert abs(prod.mean() - target) < 3.5 * se, (j, k)


# ------------------------------------------------------------ basis


def test_basis_size_and_grading():
    basis = ChaosBasis(n_steps=2, n_assets=1, order=2)
    assert basis.size == math.comb(2 + 2, 2)
    assert basis.dims == 2
    idx = basis.indices
    assert idx.shape == (6, 2, 1)
    degrees = idx.sum(axis=(1, 2))
    npt.assert_array_equal(np.sort(degrees), [0, 1, 1, 2, 2, 2])
    # graded ordering: total degree never decreases along the enumeration
    assert (np.diff(degrees) >= 0).all()
    npt.assert_array_equal(idx[0], 0)


def test_basis_position_roundtrip():
    basis = ChaosBasis(n_steps=3, n_assets=2, order=2)
    for row in range(basis.size):
        assert basis.position(basis.indices[row]) == row
    with pytest.raises(ShapeError):
        basis.position(np.zeros((2, 2), dtype=int))
    with pytest.raises(ShapeError):
        basis.position(np.full((3, 2), 5, dtype=int))  # beyond the order


def test_basis_max_step():
    basis = ChaosBasis(n_steps=3, n_assets=1, order=2)
    assert basis.max_step[0] == -1  # constant element
    for row in range(1, basis.size):
        nz = np.nonzero(basis.indices[row].sum(axis=1))[0]
        assert basis.max_step[row] == nz.max()


def test_basis_eval_is_tensor_product():
    basis = ChaosBasis(n_steps=2, n_assets=2, order=3)
    rng = np.random.default_rng(5)
    z = rng.standard_normal((7, 2, 2))
    got = basis.eval(z)
    assert got.shape == (7, basis.size)
    for row in range(basis.size):
        manual = np.ones(7)
        for t in range(2):
            for j in range(2):
                manual *= hermite_eval(int(basis.indices[row, t, j]), z[:, t, j])
        npt.assert_allclose(got[:, row], manual, rtol=1e-12)


def test_basis_eval_single_path():
    basis = ChaosBasis(n_steps=2, n_assets=1, order=2)
    z = np.array([[0.3], [-1.2]])
    single = basis.eval(z)
    batched = basis.eval(z[None])
    npt.assert_allclose(single, batched[0], rtol=1e-15)


def test_basis_indices_are_write_locked():
    basis = ChaosBasis(n_steps=2, n_assets=1, order=2)
    with pytest.raises(ValueError):
        basis.indices[0, 0, 0] = 3


# ------------------------------------------------------------ fits


def test_fit_constant_is_exact():
    basis = ChaosBasis(n_steps=2, n_assets=1, order=2)
    rng = np.random.default_rng(7)
    z = rng.standard_normal((500, 2, 1))
    coeffs = fit_chaos(np.full(500, 7.25), z, basis)
    npt.assert_array_equal(coeffs[0], 7.25)
    npt.assert_array_equal(coeffs[1:], 0.0)


def test_fit_recovers_known_coefficients():
    basis = ChaosBasis(n_steps=2, n_assets=1, order=2)
    rng = np.random.default_rng(11)
    z = rng.standard_normal((400_000, 2, 1))
    truth = np.array([1.5, 0.8, -0.4, 0.25, 0.6, -0.1])
    y = eval_chaos(truth, z, basis)
    coeffs = fit_chaos(y, z, basis)
    npt.assert_allclose(coeffs, truth, atol=0.02)


def test_fit_lognormal_coefficients():
    """exp(a z - a^2/2) has coefficient a^k / k! on degree k; a = 0.2
    gives 1, 0.2, 0.02."""
    basis = ChaosBasis(n_steps=1, n_assets=1, order=2)
    rng = np.random.default_rng(13)
    n = 500_000
    z = rng.standard_normal((n, 1, 1))
    a = 0.2
    y = np.exp(a * z[:, 0, 0] - a * a / 2.0)
    coeffs = fit_chaos(y, z, basis)
    h = basis.eval(z)
    for k, target in enumerate([1.0, 0.2, 0.02]):
        se = (y * h[:, k]).std(ddof=1) / math.sqrt(n) / basis.factorials[k]
        assert abs(coeffs[k] - target) < 3.0 * se


def test_eval_chaos_is_basis_contraction():
    basis = ChaosBasis(n_steps=2, n_assets=2, order=2)
    rng = np.random.default_rng(17)
    z = rng.standard_normal((20, 2, 2))
    coeffs = rng.standard_normal(basis.size)
    npt.assert_allclose(
        eval_chaos(coeffs, z, basis), basis.eval(z) @ coeffs, rtol=1e-13
    )


def test_fit_terminal_price_within_two_percent(one_asset_spec):
    """Order-2 fit of the discounted terminal price of a 20 percent vol
    asset keeps the relative L2 error under 2 percent out of sample."""
    grid = TimeGrid.from_days(368, 92)
    basis = ChaosBasis(grid.n_steps, 1, 2)
    from chaosfolio.market import Measure

    train = simulate(one_asset_spec, grid, 300_000, seed=101, measure=Measure.RISK_NEUTRAL)
    coeffs = fit_chaos(train.s_tilde[:, -1, 0], train.z, basis)
    test = simulate(one_asset_spec, grid, 100_000, seed=102, measure=Measure.RISK_NEUTRAL)
    y = test.s_tilde[:, -1, 0]
    err = y - eval_chaos(coeffs, test.z, basis)
    rel = math.sqrt(np.mean(err**2) / np.mean(y**2))
    assert rel < 0.02


def test_projection_error_shrinks_with_order(one_asset_spec):
    """Exact-coefficient projections of the lognormal terminal price: the
    residual is strictly smaller at each higher order. Exact coefficients
    (product of a^k/k! per step) keep fit noise out of the comparison."""
    grid = TimeGrid.from_days(368, 92)
    from chaosfolio.market import Measure

    test = simulate(one_asset_spec, grid, 50_000, seed=104, measure=Measure.RISK_NEUTRAL)
    y = test.s_tilde[:, -1, 0]
    a = 0.2 * math.sqrt(grid.dt)
    errs = []
    for order in (1, 2, 3):
        basis = ChaosBasis(grid.n_steps, 1, order)
        coeffs = np.empty(basis.size)
        for row in range(basis.size):
            degs = basis.indices[row, :, 0]
            coeffs[row] = 100.0 * math.prod(a**k / math.factorial(k) for k in degs)
        err = y - eval_chaos(coeffs, test.z, basis)
        errs.append(math.sqrt(np.mean(err**2) / np.mean(y**2)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] < 0.005  # order-2 residual well under a percent


# ------------------------------------------------------------ restriction


def test_restrict_to_step_zeroing():
    basis = ChaosBasis(n_steps=3, n_assets=1, order=2)
    rng = np.random.default_rng(19)
    coeffs = rng.standard_normal(basis.size)
    r0 = restrict_to_step(coeffs, 0, basis)
    assert r0[0] == coeffs[0]
    npt.assert_array_equal(r0[1:], 0.0)
    npt.assert_array_equal(restrict_to_step(coeffs, 3, basis), coeffs)
    r1 = restrict_to_step(coeffs, 1, basis)
    kept = basis.max_step < 1
    npt.assert_array_equal(r1[kept], coeffs[kept])
    npt.assert_array_equal(r1[~kept], 0.0)
    # projections: idempotent and nested
    npt.assert_array_equal(restrict_to_step(r1, 1, basis), r1)
    r2 = restrict_to_step(coeffs, 2, basis)
    npt.assert_array_equal(restrict_to_step(r2, 1, basis), r1)


def test_restrict_is_conditional_expectation():
    """Averaging the chaos value over fresh continuations of a frozen
    history reproduces the restricted vector's value at that history."""
    basis = ChaosBasis(n_steps=2, n_assets=1, order=2)
    rng = np.random.default_rng(23)
    coeffs = rng.standard_normal(basis.size)
    z0 = 0.7
    n = 200_000
    z = np.zeros((n, 2, 1))
    z[:, 0, 0] = z0
    z[:, 1, 0] = rng.standard_normal(n)
    vals = eval_chaos(coeffs, z, basis)
    se = vals.std(ddof=1) / math.sqrt(n)
    expected = eval_chaos(restrict_to_step(coeffs, 1, basis), z[:1], basis)[0]
    assert abs(vals.mean() - expected) < 3 * se


# ------------------------------------------------------------ bracket


def test_bracket_tables_structure():
    basis = ChaosBasis(n_steps=2, n_assets=2, order=2)
    tables = build_bracket_tables(basis)
    assert len(tables) == 2
    idx = basis.indices
    for t, table in enumerate(tables):
        for a, b in zip(table.a, table.b):
            npt.assert_array_equal(idx[a, t], idx[b, t])  # shared step block
            assert idx[a, t].sum() > 0
            assert basis.max_step[a] == t and basis.max_step[b] == t
            hist = idx[a].sum() + idx[b].sum() - 2 * idx[a, t].sum()
            assert hist <= basis.order


def test_delta_bracket_single_step_hand_value():
    """One step, one asset, order 2: the bracket is constant and equals
    b1 e1 1! + b2 e2 2!."""
    basis = ChaosBasis(n_steps=1, n_assets=1, order=2)
    beta = np.array([9.0, 3.0, 5.0])
    eta = np.array([-2.0, 4.0, 7.0])
    z = np.random.default_rng(29).standard_normal((10, 1, 1))
    got = delta_bracket(beta, eta, 0, z, basis)
    npt.assert_allclose(got, 3 * 4 * 1 + 5 * 7 * 2, rtol=1e-14)


def test_delta_bracket_two_step_hand_value():
    """With history, the pair (step-1 block, degree-1 history) times a
    pure step-1 element contributes beta eta H_1(z0)."""
    basis = ChaosBasis(n_steps=2, n_assets=1, order=2)
    beta = np.zeros(basis.size)
    eta = np.zeros(basis.size)
    beta[basis.position(np.array([[1], [1]]))] = 3.0
    eta[basis.position(np.array([[0], [1]]))] = 5.0
    z = np.random.default_rng(31).standard_normal((8, 2, 1))
    got = delta_bracket(beta, eta, 1, z, basis)
    npt.assert_allclose(got, 15.0 * z[:, 0, 0], rtol=1e-13)
    # and it never looks at the step being bracketed
    z2 = z.copy()
    z2[:, 1, 0] = 99.0
    npt.assert_allclose(delta_bracket(beta, eta, 1, z2, basis), got, rtol=1e-15)


def test_delta_bracket_symmetry_and_bilinearity():
    basis = ChaosBasis(n_steps=2, n_assets=2, order=2)
    rng = np.random.default_rng(37)
    z = rng.standard_normal((25, 2, 2))
    b1 = rng.standard_normal(basis.size)
    b2 = rng.standard_normal(basis.size)
    eta = rng.standard_normal(basis.size)
    npt.assert_allclose(
        delta_bracket(b1, eta, 1, z, basis),
        delta_bracket(eta, b1, 1, z, basis),
        rtol=1e-12, atol=1e-12,
    )
    lhs = delta_bracket(2.5 * b1 - b2, eta, 1, z, basis)
    rhs = 2.5 * delta_bracket(b1, eta, 1, z, basis) - delta_bracket(b2, eta, 1, z, basis)
    npt.assert_allclose(lhs, rhs, rtol=1e-11, atol=1e-11)


def test_delta_bracket_agrees_with_product_fit():
    """Brute-force route: expand the product of the two step innovations
    on a fresh sample, condition by restriction, evaluate. Monte Carlo
    noise in the fitted coefficients is the only gap."""
    basis = ChaosBasis(n_steps=2, n_assets=1, order=2)
    rng = np.random.default_rng(41)
    beta = rng.standard_normal(basis.size)
    eta = rng.standard_normal(basis.size)
    step = 1
    innov = np.where(basis.max_step == step, 1.0, 0.0)

    z_fit = rng.standard_normal((1_000_000, 2, 1))
    a_vals = eval_chaos(beta * innov, z_fit, basis)
    b_vals = eval_chaos(eta * innov, z_fit, basis)
    product_coeffs = fit_chaos(a_vals * b_vals, z_fit, basis)
    conditioned = restrict_to_step(product_coeffs, step, basis)

    z_eval = rng.standard_normal((200, 2, 1))
    brute = eval_chaos(conditioned, z_eval, basis)
    direct = delta_bracket(beta, eta, step, z_eval, basis)
    scale = np.abs(direct).max()
    assert np.abs(brute - direct).max() < 0.02 * scale


def test_bracket_matrix_linear_form():
    basis = ChaosBasis(n_steps=3, n_assets=2, order=2)
    rng = np.random.default_rng(43)
    z = rng.standard_normal((15, 3, 2))
    eta = rng.standard_normal(basis.size)
    table = build_bracket_tables(basis)[2]
    h = basis.eval(z)
    n = bracket_matrix(eta, table, h, basis.size)
    assert n.shape == (15, basis.size)
    for _ in range(3):
        beta = rng.standard_normal(basis.size)
        npt.assert_allclose(
            n @ beta, delta_bracket(beta, eta, 2, z, basis, table=table), rtol=1e-12
        )
    zero = bracket_matrix(np.zeros(basis.size), table, h, basis.size)
    npt.assert_array_equal(zero, 0.0)


def test_delta_bracket_validates_inputs():
    basis = ChaosBasis(n_steps=2, n_assets=1, order=2)
    z = np.zeros((3, 2, 1))
    good = np.zeros(basis.size)
    with pytest.raises(ShapeError):
        delta_bracket(good[:-1], good, 0, z, basis)
    with pytest.raises(ShapeError):
        delta_bracket(good, good, 2, z, basis)


# ------------------------------------------------------------ serialization


def test_chaos_vector_roundtrip(tmp_path):
    basis = ChaosBasis(n_steps=2, n_assets=2, order=2)
    rng = np.random.default_rng(47)
    vec = ChaosVector(basis, rng.standard_normal(basis.size))
    out = tmp_path / "vec.csv"
    vec.save_csv(out, extra_header={"label": "test"})
    loaded, header = ChaosVector.load_csv(out)
    npt.assert_array_equal(loaded.coeffs, vec.coeffs)
    assert loaded.basis.n_steps == 2
    assert loaded.basis.n_assets == 2
    assert loaded.basis.order == 2
    assert header["label"] == "test"


def test_chaos_vector_size_mismatch():
    basis = ChaosBasis(n_steps=2, n_assets=1, order=2)
    with pytest.raises(ShapeError):
        ChaosVector(basis, np.zeros(basis.size + 1))
