"""Shared fixtures: the standard three-asset market and small variants."""

import os

import pytest

os.environ.setdefault("MPLBACKEND", "Agg")

from chaosfolio.market import MarketSpec, TimeGrid


@pytest.fixture(scope="session")
def desk_spec():
    return MarketSpec(
        mu=[0.06, 0.02, 0.14],
        sigma_marginal=[0.10, 0.06, 0.20],
        rho=[[1.0, -0.2, 0.3], [-0.2, 1.0, -0.2], [0.3, -0.2, 1.0]],
        rate=0.001,
        v0=100.0,
        cost_rate=0.01,
    )


@pytest.fixture(scope="session")
def desk_grid():
    return TimeGrid.from_days(368, 92)


@pytest.fixture(scope="session")
def one_asset_spec():
    return MarketSpec(
        mu=[0.06],
        sigma_marginal=[0.2],
        rho=[[1.0]],
        rate=0.001,
        v0=100.0,
        cost_rate=0.01,
    )
