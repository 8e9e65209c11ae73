import numpy as np
import pandas as pd
import pytest

from regimefolio import PriceTable, RegimeSpec


def make_price_table(prices, assets=None, start="2020-01-02"):
    prices = np.atleast_2d(np.asarray(prices, dtype=float))
    if prices.shape[0] == 1:
        prices = prices.T
    n = prices.shape[1]
    assets = tuple(assets) if assets is not None else tuple(f"A{i + 1}" for i in range(n))
    dates = pd.bdate_range(start=start, periods=prices.shape[0])
    return PriceTable(dates=dates, assets=assets, prices=prices)


@pytest.fixture
def price_table_factory():
    return make_price_table


def three_regime_spec():
    """Well-separated persistent 3-regime market.

    Regimes differ in both location and scale, so the induced feature-space
    clusters are separated in every block (mean gaps are 2-6x the largest
    daily vol; vol levels differ by factors of 2-3)."""
    means = np.array(
        [
            [0.020, 0.010, -0.015],
            [-0.020, 0.015, 0.010],
            [0.005, -0.020, 0.020],
        ]
    )
    vols = [0.007, 0.013, 0.022]
    covs = np.stack([np.eye(3) * v**2 for v in vols])
    trans = np.full((3, 3), 0.01)
    np.fill_diagonal(trans, 0.98)
    return RegimeSpec(means=means, covs=covs, transition=trans)


def _corr_cov(vols, c_eq_def=0.0):
    v = np.asarray(vols)
    corr = np.eye(3)
    corr[0, 1] = corr[1, 0] = c_eq_def
    return corr * np.outer(v, v)


def crash_market_spec():
    """Cross-asset market with a stress regime: negative equity mean, positive
    defensive mean, elevated equity vol. Equity earns its risk in calm regimes."""
    means = np.array(
        [
            [0.0035, 0.0001, 0.0005],   # bull
            [-0.0070, 0.0012, 0.0018],  # stress
            [0.0010, 0.0003, 0.0004],   # neutral
        ]
    )
    covs = np.stack(
        [
            _corr_cov([0.007, 0.005, 0.006], -0.1),
            _corr_cov([0.025, 0.006, 0.011], -0.4),
            _corr_cov([0.011, 0.005, 0.007], 0.0),
        ]
    )
    trans = np.array(
        [
            [0.983, 0.012, 0.005],
            [0.030, 0.960, 0.010],
            [0.012, 0.010, 0.978],
        ]
    )
    return RegimeSpec(means=means, covs=covs, transition=trans, assets=("EQ", "DEF", "ALT"))


def calm_market_spec():
    """Slow two-regime market: regime structure is stable for long stretches,
    so moment estimates barely move from day to day."""
    means = np.array([[0.0008, 0.0002, 0.0004], [-0.0010, 0.0004, 0.0002]])
    covs = np.stack(
        [np.diag([0.008, 0.004, 0.006]) ** 2, np.diag([0.016, 0.005, 0.009]) ** 2]
    )
    trans = np.array([[0.995, 0.005], [0.010, 0.990]])
    return RegimeSpec(means=means, covs=covs, transition=trans, assets=("EQ", "DEF", "ALT"))


@pytest.fixture(scope="session")
def spec3():
    return three_regime_spec()


@pytest.fixture(scope="session")
def market():
    return crash_market_spec()


def reference_ledoit_wolf(R):
    """Independently coded shrinkage reference: explicit per-sample outer
    products and explicit Frobenius norms, zero-mean form."""
    R = np.asarray(R, dtype=float)
    n, p = R.shape
    S = np.zeros((p, p))
    for t in range(n):
        S += np.outer(R[t], R[t])
    S /= n
    m = np.trace(S) / p
    d2 = np.linalg.norm(S - m * np.eye(p), "fro") ** 2 / p
    if d2 == 0.0:
        return S, 0.0
    b2_bar = 0.0
    for t in range(n):
        b2_bar += np.linalg.norm(np.outer(R[t], R[t]) - S, "fro") ** 2 / p
    b2_bar /= n**2
    b2 = min(b2_bar, d2)
    rho = b2 / d2
    return (1 - rho) * S + rho * m * np.eye(p), rho
