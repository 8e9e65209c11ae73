"""Price ingestion, log returns and the strictly causal feature matrix.

The feature row dated t is a function of returns dated <= t-1 only:
the return slot holds r_{t-1}, the volatility slot the sample standard
deviation of the w_sigma returns ending at t-1, and the momentum slot
the mean of the w_m returns ending at t-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ConfigError, DataError
from .validation import as_float_array


@dataclass(frozen=True)
class PriceTable:
    """Dated panel of adjusted close prices (strictly increasing dates, all > 0)."""

    dates: pd.DatetimeIndex
    assets: tuple[str, ...]
    prices: np.ndarray  # (T, N)
    dropped_rows: int = 0

    def __post_init__(self):
        prices = as_float_array(self.prices, "prices", ndim=2)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "assets", tuple(self.assets))
        if len(self.dates) != prices.shape[0]:
            raise DataError("dates and price rows disagree in length")
        if prices.shape[1] != len(self.assets):
            raise DataError("assets and price columns disagree in length")
        if prices.shape[0] == 0:
            raise DataError("no usable price rows")
        if (prices <= 0.0).any():
            raise DataError("prices must be strictly positive")
        d = self.dates
        if d.has_duplicates:
            raise DataError("duplicate dates in price table")
        if not d.is_monotonic_increasing:
            raise DataError("dates must be strictly increasing")

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def truncate_after(self, date) -> "PriceTable":
        """Keep rows dated <= date (used by causality tests and replay)."""
        mask = self.dates <= pd.Timestamp(date)
        return PriceTable(self.dates[mask], self.assets, self.prices[mask])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.prices, index=self.dates, columns=list(self.assets))


@dataclass(frozen=True)
class ReturnTable:
    """Daily log returns; row t is log(P_t) - log(P_{t-1}), dated at the later price."""

    dates: pd.DatetimeIndex
    assets: tuple[str, ...]
    returns: np.ndarray  # (T-1, N)

    def __post_init__(self):
        object.__setattr__(self, "returns", as_float_array(self.returns, "returns", ndim=2))
        object.__setattr__(self, "assets", tuple(self.assets))
        if len(self.dates) != self.returns.shape[0]:
            raise DataError("dates and return rows disagree in length")

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def __len__(self) -> int:
        return self.returns.shape[0]


@dataclass(frozen=True)
class FeatureConfig:
    """Rolling windows for the volatility and momentum feature blocks."""

    w_sigma: int = 60
    w_m: int = 20

    def __post_init__(self):
        bad = [k for k, v in (("w_sigma", self.w_sigma), ("w_m", self.w_m)) if int(v) < 2]
        if bad:
            raise ConfigError(f"feature windows must be >= 2: {bad}", keys=bad)

    @property
    def warmup(self) -> int:
        """Number of return rows consumed before the first feature row exists."""
        return max(self.w_sigma, self.w_m)


@dataclass(frozen=True)
class FeatureTable:
    """Dated feature rows [r_{t-1}; sigma_t; m_t] in R^{3N}."""

    dates: pd.DatetimeIndex
    assets: tuple[str, ...]
    values: np.ndarray  # (M, 3N)

    def __post_init__(self):
        object.__setattr__(self, "values", as_float_array(self.values, "features", ndim=2))
        object.__setattr__(self, "assets", tuple(self.assets))
        if self.values.shape[1] != 3 * len(self.assets):
            raise DataError("feature dimension must be 3N")
        if len(self.dates) != self.values.shape[0]:
            raise DataError("dates and feature rows disagree in length")

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def __len__(self) -> int:
        return self.values.shape[0]


def load_prices(path, date_column: str = "date", assets=None) -> PriceTable:
    """Load a daily price CSV (header `date,ASSET1,...`) into a PriceTable.

    Rows containing any missing or non-positive price are dropped; the count of
    dropped rows is kept on the returned table. Out-of-order or duplicate dates
    are an error rather than silently fixed.
    """
    try:
        raw = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read price file {path}: {e}") from e
    if raw.shape[1] < 2:
        raise DataError(f"{path}: need a date column plus at least one asset column")
    date_col = date_column if date_column in raw.columns else raw.columns[0]
    try:
        dates = pd.to_datetime(raw[date_col], format="ISO8601")
    except (ValueError, TypeError) as e:
        raise DataError(f"{path}: first column is not parseable as ISO dates: {e}") from e

    cols = [c for c in raw.columns if c != date_col]
    if assets is not None:
        missing = [a for a in assets if a not in cols]
        if missing:
            raise DataError(f"{path}: requested assets not in file: {missing}")
        cols = list(assets)
    values = raw[cols].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)

    keep = np.isfinite(values).all(axis=1) & (values > 0.0).all(axis=1)
    dropped = int((~keep).sum())
    values = values[keep]
    dates = pd.DatetimeIndex(dates[keep])
    if values.shape[0] == 0:
        raise DataError(f"{path}: zero usable rows after dropping bad rows")
    if dates.has_duplicates:
        raise DataError(f"{path}: duplicate dates")
    if not dates.is_monotonic_increasing:
        raise DataError(f"{path}: dates are not sorted ascending")
    return PriceTable(dates=dates, assets=tuple(cols), prices=values, dropped_rows=dropped)


def log_returns(p: PriceTable) -> ReturnTable:
    """Elementwise log(P_{t+1}) - log(P_t), dated at the later of each pair."""
    if p.prices.shape[0] < 2:
        raise DataError("need at least 2 price rows to compute returns")
    rets = np.diff(np.log(p.prices), axis=0)
    return ReturnTable(dates=p.dates[1:], assets=p.assets, returns=rets)


def build_features(r: ReturnTable, cfg: FeatureConfig = FeatureConfig()) -> FeatureTable:
    """Build the 3N-dimensional causal feature matrix from a return table.

    The row dated r.dates[j] exists for j >= warmup and uses only return rows
    strictly before j. Per-window statistics are computed independently per
    window (no running sums), so truncating the input reproduces a bit-identical
    prefix.
    """
    W = cfg.warmup
    T, N = r.returns.shape
    if T < W + 1:
        raise DataError(f"need at least {W + 1} return rows, got {T}")
    rets = r.returns
    M = T - W

    # windows ending at j-1 for feature row j = W .. T-1
    sig_wins = sliding_window_view(rets, cfg.w_sigma, axis=0)  # (T-w+1, N, w)
    sigma = sig_wins.std(axis=-1, ddof=1)[W - cfg.w_sigma : W - cfg.w_sigma + M]
    m_wins = sliding_window_view(rets, cfg.w_m, axis=0)
    mom = m_wins.mean(axis=-1)[W - cfg.w_m : W - cfg.w_m + M]
    lagged = rets[W - 1 : T - 1]

    values = np.concatenate([lagged, sigma, mom], axis=1)
    return FeatureTable(dates=r.dates[W:], assets=r.assets, values=values)


def features_to_csv(ft: FeatureTable, path) -> None:
    """Write the feature matrix with header date,r_1..r_N,sigma_1..sigma_N,m_1..m_N."""
    n = ft.n_assets
    cols = (
        [f"r_{i + 1}" for i in range(n)]
        + [f"sigma_{i + 1}" for i in range(n)]
        + [f"m_{i + 1}" for i in range(n)]
    )
    df = pd.DataFrame(ft.values, columns=cols)
    df.insert(0, "date", ft.dates.strftime("%Y-%m-%d"))
    df.to_csv(path, index=False)


class FeatureBuilder(BaseEstimator, TransformerMixin):
    """Stateless transformer from return rows to causal feature rows.

    transform() accepts a ReturnTable (returning a FeatureTable) or a plain
    (T, N) return array (returning the (T-warmup, 3N) feature matrix).
    """

    def __init__(self, w_sigma: int = 60, w_m: int = 20):
        self.w_sigma = w_sigma
        self.w_m = w_m

    def _cfg(self) -> FeatureConfig:
        return FeatureConfig(w_sigma=self.w_sigma, w_m=self.w_m)

    def fit(self, X=None, y=None):
        self._cfg()  # validates windows
        return self

    def transform(self, X):
        cfg = self._cfg()
        if isinstance(X, ReturnTable):
            return build_features(X, cfg)
        arr = as_float_array(X, "returns", ndim=2)
        fake_dates = pd.RangeIndex(arr.shape[0] + 1)
        table = ReturnTable(
            dates=pd.DatetimeIndex(pd.to_datetime(fake_dates[1:], unit="D")),
            assets=tuple(f"a{i}" for i in range(arr.shape[1])),
            returns=arr,
        )
        return build_features(table, cfg).values
