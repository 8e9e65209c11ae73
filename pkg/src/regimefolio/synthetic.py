"""Regime-switching market simulator with ground-truth labels.

Regimes emit asset returns directly; features are then derived by the
production pipeline, so tests exercise the same code path end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import PriceTable
from .errors import DataError
from .ot_geometry import sqrtm_psd
from .validation import as_float_array


@dataclass(frozen=True)
class RegimeSpec:
    """Per-regime return means/covariances plus the hidden-chain dynamics."""

    means: np.ndarray  # (K, N)
    covs: np.ndarray  # (K, N, N)
    transition: np.ndarray  # (K, K) row-stochastic
    init_state: int = 0
    assets: tuple[str, ...] | None = None

    def __post_init__(self):
        means = as_float_array(self.means, "means", ndim=2)
        covs = as_float_array(self.covs, "covs", ndim=3)
        trans = as_float_array(self.transition, "transition", ndim=2)
        k, n = means.shape
        if covs.shape != (k, n, n):
            raise DataError(f"covs must have shape (K, N, N)=({k},{n},{n})")
        if trans.shape != (k, k):
            raise DataError("transition matrix shape must be (K, K)")
        if (trans < 0).any() or np.abs(trans.sum(axis=1) - 1.0).max() > 1e-10:
            raise DataError("transition matrix rows must be nonnegative and sum to 1")
        for j in range(k):
            if np.abs(covs[j] - covs[j].T).max() > 1e-10:
                raise DataError(f"regime {j} covariance is not symmetric")
            if np.linalg.eigvalsh(0.5 * (covs[j] + covs[j].T)).min() < -1e-10:
                raise DataError(f"regime {j} covariance is not PSD")
        if not (0 <= self.init_state < k):
            raise DataError("init_state out of range")
        assets = self.assets if self.assets is not None else tuple(
            f"A{i + 1}" for i in range(n)
        )
        if len(assets) != n:
            raise DataError("asset name count must match N")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "assets", tuple(assets))

    @property
    def n_regimes(self) -> int:
        return self.means.shape[0]

    @property
    def n_assets(self) -> int:
        return self.means.shape[1]

    @classmethod
    def from_dict(cls, d: dict) -> "RegimeSpec":
        return cls(
            means=np.asarray(d["means"], dtype=float),
            covs=np.asarray(d["covs"], dtype=float),
            transition=np.asarray(d["transition"], dtype=float),
            init_state=int(d.get("init_state", 0)),
            assets=tuple(d["assets"]) if "assets" in d else None,
        )


def generate(
    spec: RegimeSpec,
    n_days: int,
    seed: int = 0,
    start_price: float = 100.0,
    start_date: str = "2015-01-02",
) -> tuple[PriceTable, np.ndarray]:
    """Sample a hidden chain and regime-conditional returns; accumulate prices.

    Returns (PriceTable with n_days rows starting at start_price, label path of
    length n_days - 1 aligned to the return rows). Deterministic per seed.
    """
    if n_days < 2:
        raise DataError("need at least 2 days")
    rng = np.random.default_rng(seed)
    k, n = spec.n_regimes, spec.n_assets
    n_rets = n_days - 1

    labels = np.empty(n_rets, dtype=np.int64)
    state = spec.init_state
    for t in range(n_rets):
        labels[t] = state
        state = int(rng.choice(k, p=spec.transition[state]))

    factors = np.stack([sqrtm_psd(spec.covs[j], name=f"regime {j} covariance") for j in range(k)])
    shocks = rng.standard_normal((n_rets, n))
    rets = spec.means[labels] + np.einsum("tij,tj->ti", factors[labels], shocks)

    log_prices = np.concatenate([[np.zeros(n)], np.cumsum(rets, axis=0)])
    prices = start_price * np.exp(log_prices)
    dates = pd.bdate_range(start=start_date, periods=n_days)
    table = PriceTable(dates=dates, assets=spec.assets, prices=prices)
    return table, labels


def write_market(outdir, table: PriceTable, labels: np.ndarray) -> tuple[str, str]:
    """Write prices.csv and true_labels.csv (labels aligned to return dates)."""
    import os

    os.makedirs(outdir, exist_ok=True)
    prices_path = os.path.join(outdir, "prices.csv")
    labels_path = os.path.join(outdir, "true_labels.csv")
    df = table.to_frame()
    df.index.name = "date"
    df.to_csv(prices_path, date_format="%Y-%m-%d")
    lab = pd.DataFrame({"date": table.dates[1:].strftime("%Y-%m-%d"), "label": labels})
    lab.to_csv(labels_path, index=False)
    return prices_path, labels_path
