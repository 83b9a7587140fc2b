"""Market model: parameter validation, path simulation, measure change."""

import csv
import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy.linalg import solve_triangular

from chaosfolio.market import (
    ConfigError,
    MarketSpec,
    Measure,
    ModelError,
    TimeGrid,
    cond_cov_delta_s,
    dump_paths,
    girsanov_shift,
    normal_increments,
    simulate,
)


# ------------------------------------------------------------ validation


def test_spec_defaults(desk_spec):
    npt.assert_array_equal(desk_spec.s_init, [100.0, 100.0, 100.0])
    assert desk_spec.s0_init == 1.0
    assert desk_spec.d == 3


def test_vol_matrix_reproduces_log_covariance(desk_spec):
    sig = desk_spec.sigma_marginal
    rho = desk_spec.rho
    expected = np.outer(sig, sig) * rho
    npt.assert_allclose(desk_spec.cov_log, expected, rtol=1e-14)
    npt.assert_allclose(
        desk_spec.vol_matrix @ desk_spec.vol_matrix.T, expected, rtol=1e-13
    )
    # lower triangular by construction
    npt.assert_array_equal(np.triu(desk_spec.vol_matrix, 1), 0.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(rho=[[1.0, 0.5], [0.4, 1.0]]),  # asymmetric
        dict(rho=[[1.0, 1.1], [1.1, 1.0]]),  # not positive definite
        dict(rho=[[0.9, 0.0], [0.0, 1.0]]),  # diagonal off one
        dict(sigma_marginal=[0.1, -0.2]),
        dict(v0=0.0),
        dict(cost_rate=-0.01),
        dict(s_init=[100.0, 0.0]),
        dict(s0_init=0.0),
        dict(mu=[0.05]),  # wrong length
    ],
)
def test_spec_rejects_bad_parameters(kwargs):
    base = dict(
        mu=[0.05, 0.05],
        sigma_marginal=[0.1, 0.2],
        rho=[[1.0, 0.0], [0.0, 1.0]],
        rate=0.0,
        v0=100.0,
        cost_rate=0.01,
    )
    base.update(kwargs)
    with pytest.raises(ModelError):
        MarketSpec(**base)


def test_grid_divisibility():
    grid = TimeGrid.from_days(368, 92)
    assert grid.n_steps == 4
    assert grid.dt == pytest.approx(0.25, rel=1e-15)
    assert grid.horizon == pytest.approx(1.0, rel=1e-15)
    npt.assert_allclose(grid.times, [0.0, 0.25, 0.5, 0.75, 1.0], rtol=1e-15)
    with pytest.raises(ConfigError):
        TimeGrid.from_days(368, 90)
    with pytest.raises(ConfigError):
        TimeGrid.from_days(0, 1)
    with pytest.raises(ConfigError):
        TimeGrid(368, 92, -1.0)


def test_grid_explicit_day_count():
    grid = TimeGrid(10, 5, day_count=0.1)
    assert grid.n_steps == 2
    assert grid.dt == pytest.approx(0.5)
    assert grid.horizon == pytest.approx(1.0)


# ------------------------------------------------------------ increments


def test_increments_deterministic():
    a = normal_increments(7, 50, 4, 3)
    b = normal_increments(7, 50, 4, 3)
    npt.assert_array_equal(a, b)
    c = normal_increments(8, 50, 4, 3)
    assert np.abs(a - c).max() > 0.1


def test_increments_prefix_property():
    # path k's draws do not depend on how many paths are requested
    small = normal_increments(11, 10, 4, 3)
    large = normal_increments(11, 1000, 4, 3)
    npt.assert_array_equal(small, large[:10])


def test_increments_chunk_equivalence():
    whole = normal_increments(13, 100, 4, 3)
    parts = [
        normal_increments(13, 30, 4, 3, path_offset=0),
        normal_increments(13, 50, 4, 3, path_offset=30),
        normal_increments(13, 20, 4, 3, path_offset=80),
    ]
    npt.assert_array_equal(whole, np.concatenate(parts, axis=0))


def test_increments_are_standard_normal():
    z = normal_increments(17, 200_000, 2, 2)
    flat = z.reshape(-1)
    n = flat.size
    assert abs(flat.mean()) < 3.0 / math.sqrt(n)
    assert abs(flat.var() - 1.0) < 3.0 * math.sqrt(2.0 / n)
    # no cross-coordinate correlation
    corr = np.corrcoef(z.reshape(z.shape[0], -1), rowvar=False)
    off = corr[~np.eye(4, dtype=bool)]
    assert np.abs(off).max() < 4.0 / math.sqrt(z.shape[0])


# ------------------------------------------------------------ simulation


def test_simulate_shapes_and_numeraire(desk_spec, desk_grid):
    batch = simulate(desk_spec, desk_grid, 10, seed=1)
    assert batch.z.shape == (10, 4, 3)
    assert batch.s.shape == (10, 5, 3)
    assert batch.s0.shape == (5,)
    npt.assert_allclose(batch.s0, np.exp(0.001 * desk_grid.times), rtol=1e-15)
    assert (batch.s > 0).all()
    npt.assert_array_equal(batch.s[:, 0, :], 100.0)
    assert batch.measure is Measure.PHYSICAL
    assert batch.seed == 1


def test_log_return_variance():
    # one asset, sigma 0.2, dt 0.25: Var[log(S_1/S_0)] = 0.01
    spec = MarketSpec(
        mu=[0.06], sigma_marginal=[0.2], rho=[[1.0]], rate=0.001, v0=100.0,
        cost_rate=0.0,
    )
    grid = TimeGrid.from_days(4, 1, day_count=0.25)
    batch = simulate(spec, grid, 400_000, seed=5)
    logret = np.log(batch.s[:, 1, 0] / batch.s[:, 0, 0])
    target = 0.2 * 0.2 * 0.25
    assert logret.var(ddof=1) == pytest.approx(target, rel=0.02)
    assert logret.mean() == pytest.approx((0.06 - 0.02) * 0.25, abs=3 * 0.1 / 632.0)


def test_physical_drift_and_riskneutral_martingale(desk_spec, desk_grid):
    n = 200_000
    phys = simulate(desk_spec, desk_grid, n, seed=21, measure=Measure.PHYSICAL)
    mean_s = phys.s[:, -1, :].mean(axis=0)
    for i in range(3):
        se = phys.s[:, -1, i].std(ddof=1) / math.sqrt(n)
        target = 100.0 * math.exp(desk_spec.mu[i])
        assert abs(mean_s[i] - target) < 3 * se

    rn = simulate(desk_spec, desk_grid, n, seed=22, measure=Measure.RISK_NEUTRAL)
    tilde = rn.s_tilde
    for i in range(3):
        diff = tilde[:, -1, i] - tilde[:, 0, i]
        se = diff.std(ddof=1) / math.sqrt(n)
        assert abs(diff.mean()) < 3 * se


def test_simulate_rejects_empty(desk_spec, desk_grid):
    with pytest.raises(ConfigError):
        simulate(desk_spec, desk_grid, 0, seed=1)


# ------------------------------------------------------------ measure change


def test_girsanov_shift_one_asset():
    # (mu - r) / sigma = (0.06 - 0.001) / 0.2 = 0.295
    spec = MarketSpec(
        mu=[0.06], sigma_marginal=[0.2], rho=[[1.0]], rate=0.001, v0=100.0,
        cost_rate=0.0,
    )
    grid = TimeGrid.from_days(4, 1, day_count=0.25)
    z = np.zeros((1, 4, 1))
    shifted = girsanov_shift(spec, grid, z)
    npt.assert_allclose(shifted, 0.295 * math.sqrt(0.25), rtol=1e-14)


def test_girsanov_shift_solves_drift_identity(desk_spec, desk_grid):
    z = np.zeros((1, 4, 3))
    shifted = girsanov_shift(desk_spec, desk_grid, z)
    phi = shifted[0, 0] / math.sqrt(desk_grid.dt)
    npt.assert_allclose(
        desk_spec.vol_matrix @ phi, desk_spec.mu - desk_spec.rate, rtol=1e-12
    )
    expected = solve_triangular(
        desk_spec.vol_matrix, desk_spec.mu - desk_spec.rate, lower=True
    )
    npt.assert_allclose(phi, expected, rtol=1e-13)


def test_girsanov_shift_identity_when_mu_equals_rate():
    spec = MarketSpec(
        mu=[0.01, 0.01], sigma_marginal=[0.1, 0.2],
        rho=[[1.0, 0.3], [0.3, 1.0]], rate=0.01, v0=100.0, cost_rate=0.0,
    )
    grid = TimeGrid.from_days(2, 1, day_count=0.5)
    z = np.random.default_rng(3).standard_normal((5, 2, 2))
    npt.assert_array_equal(girsanov_shift(spec, grid, z), z)


def test_shifted_increments_distribution(desk_spec, desk_grid):
    """The shift moves each coordinate's mean by phi sqrt(dt) and leaves
    the variance alone, so the shifted draws are the market-price-of-risk
    translated normals the basis is evaluated at."""
    n = 200_000
    batch = simulate(desk_spec, desk_grid, n, seed=31, measure=Measure.PHYSICAL)
    z_q = girsanov_shift(desk_spec, desk_grid, batch.z)
    phi = solve_triangular(
        desk_spec.vol_matrix, desk_spec.mu - desk_spec.rate, lower=True
    )
    target = phi * math.sqrt(desk_grid.dt)
    flat = z_q.reshape(-1, 3)
    se = 1.0 / math.sqrt(flat.shape[0])
    for i in range(3):
        assert abs(flat[:, i].mean() - target[i]) < 3 * se
        assert abs(flat[:, i].var(ddof=1) - 1.0) < 3 * math.sqrt(2.0 / flat.shape[0])


# ------------------------------------------------------------ conditional covariance


def test_cond_cov_closed_form_pair():
    # sigma_i sigma_j rho_ij dt = 0.3 * 0.3 * (4/9) * 0.25 = 0.01 exactly
    spec = MarketSpec(
        mu=[0.05, 0.05], sigma_marginal=[0.3, 0.3],
        rho=[[1.0, 4.0 / 9.0], [4.0 / 9.0, 1.0]], rate=0.0, v0=100.0,
        cost_rate=0.0,
    )
    grid = TimeGrid.from_days(4, 1, day_count=0.25)
    s = np.array([[100.0, 100.0]])
    cov = cond_cov_delta_s(spec, grid, s)
    assert cov.shape == (1, 2, 2)
    npt.assert_allclose(cov[0, 0, 1], 1.0e4 * (math.exp(0.01) - 1.0), rtol=1e-14)
    npt.assert_allclose(cov[0, 1, 0], cov[0, 0, 1], rtol=1e-15)


def test_cond_cov_matches_monte_carlo(desk_spec, desk_grid):
    """One-step sample covariance of the discounted price increments,
    started from the initial prices, against the formula entries."""
    n = 1_000_000
    batch = simulate(desk_spec, desk_grid, n, seed=41, measure=Measure.RISK_NEUTRAL)
    delta = batch.s_tilde[:, 1, :] - batch.s_tilde[:, 0, :]
    cov_mc = np.cov(delta, rowvar=False, ddof=1)
    cov_th = cond_cov_delta_s(desk_spec, desk_grid, batch.s_tilde[:, 0, :][:1])[0]
    # entry (1, 3): 1e4 (e^{0.1*0.2*0.3*0.25} - 1)
    npt.assert_allclose(cov_th[0, 2], 1.0e4 * (math.exp(0.0015) - 1.0), rtol=1e-12)
    for i in range(3):
        for j in range(3):
            prod = delta[:, i] * delta[:, j]
            se = prod.std(ddof=1) / math.sqrt(n)
            assert abs(cov_mc[i, j] - cov_th[i, j]) < 3 * se


def test_cond_cov_identity_correlation_is_diagonal():
    spec = MarketSpec(
        mu=[0.05, 0.05], sigma_marginal=[0.1, 0.2],
        rho=[[1.0, 0.0], [0.0, 1.0]], rate=0.01, v0=100.0, cost_rate=0.0,
    )
    grid = TimeGrid.from_days(2, 1, day_count=0.5)
    s = np.array([[90.0, 110.0], [80.0, 120.0]])
    cov = cond_cov_delta_s(spec, grid, s)
    npt.assert_array_equal(cov[:, 0, 1], 0.0)
    npt.assert_array_equal(cov[:, 1, 0], 0.0)
    npt.assert_allclose(
        cov[:, 0, 0], s[:, 0] ** 2 * (math.exp(0.1 * 0.1 * 0.5) - 1.0), rtol=1e-14
    )


def test_cond_cov_is_positive_definite(desk_spec, desk_grid):
    rng = np.random.default_rng(9)
    s = 100.0 * np.exp(rng.standard_normal((50, 3)) * 0.1)
    cov = cond_cov_delta_s(desk_spec, desk_grid, s)
    eig = np.linalg.eigvalsh(cov)
    assert (eig > 0).all()


# ------------------------------------------------------------ dumps


def test_dump_paths_roundtrip(tmp_path, desk_spec, desk_grid):
    batch = simulate(desk_spec, desk_grid, 3, seed=2)
    out = tmp_path / "paths.csv"
    dump_paths(batch, out)
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["path", "step", "s1", "s2", "s3", "s0"]
    assert len(rows) == 1 + 3 * 5
    got = np.array(
        [[float(v) for v in row[2:5]] for row in rows[1:]]
    ).reshape(3, 5, 3)
    npt.assert_array_equal(got, batch.s)  # %.17g roundtrips float64 exactly
    s0 = np.array([float(row[5]) for row in rows[1:6]])
    npt.assert_array_equal(s0, batch.s0)
