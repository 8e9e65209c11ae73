"""Non-parametric KNN conditional moments and Ledoit-Wolf shrinkage covariance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigError, DataError
from .validation import as_float_array, check_matching_dim


def ledoit_wolf(R) -> tuple[np.ndarray, float]:
    """Shrinkage covariance toward the scaled-identity target.

    Implements the 2004 zero-mean equations on the rows as given (callers that
    want a true covariance, like knn_moments, center first): with
    S = R'R / n, m = trace(S)/p, the estimator is

        sigma = (1 - rho) * S + rho * m * I,  rho in [0, 1]

    where rho = min(b2, d2) / d2, d2 = ||S - mI||_F^2 / p and
    b2 = (1/n^2) sum_t ||x_t x_t' - S||_F^2 / p.
    """
    R = as_float_array(R, "samples", ndim=2)
    n, p = R.shape
    if n < 2:
        raise DataError("need at least 2 sample rows for shrinkage covariance")
    S = R.T @ R / n
    m = float(np.trace(S)) / p
    delta2 = float(((S - m * np.eye(p)) ** 2).sum()) / p
    if delta2 == 0.0:
        return S.copy(), 0.0
    # (1/n^2) * sum_t ||x_t x_t' - S||_F^2 / p, expanded to avoid forming outer products
    xtx = (R**2).sum(axis=1)
    cross = np.einsum("ti,ij,tj->t", R, S, R)
    beta2_bar = float((xtx**2).sum() - 2.0 * cross.sum() + n * (S**2).sum()) / (n**2 * p)
    beta2 = min(beta2_bar, delta2)
    rho = beta2 / delta2
    sigma = (1.0 - rho) * S + rho * m * np.eye(p)
    return 0.5 * (sigma + sigma.T), float(rho)


class LedoitWolfCovariance(BaseEstimator):
    """Estimator wrapper around ledoit_wolf(); fit sets covariance_ and shrinkage_."""

    def fit(self, X, y=None):
        self.covariance_, self.shrinkage_ = ledoit_wolf(X)
        return self


@dataclass(frozen=True)
class KnnConfig:
    """Neighbor count, minimum feature lookback, and causal z-scoring toggle."""

    n_neighbors: int = 25
    min_lookback: int = 60
    standardize: bool = True

    def __post_init__(self):
        bad = []
        if self.n_neighbors < 2:
            bad.append("n_neighbors")
        if self.min_lookback < 1:
            bad.append("min_lookback")
        if bad:
            raise ConfigError(f"invalid KNN config: {bad}", keys=bad)


def expanding_standardize(X_hist: np.ndarray, x_query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Z-score history and query with mean/std computed from the history only.

    Coordinates with zero dispersion are left unscaled (divisor 1).
    """
    mean = X_hist.mean(axis=0)
    std = X_hist.std(axis=0, ddof=1)
    std = np.where(std > 0.0, std, 1.0)
    return (X_hist - mean) / std, (x_query - mean) / std


def knn_neighbors(
    X_hist,
    x_query,
    k: int,
    hist_dates=None,
    query_date=None,
    standardize: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Indices (and distances) of the k nearest history rows to the query.

    Ties break toward more recent indices. When dates are supplied, any row
    dated at or after the query date is excluded before the scan.
    """
    X_hist = as_float_array(X_hist, "X_hist", ndim=2)
    x_query = as_float_array(x_query, "x_query", ndim=1)
    check_matching_dim(X_hist, x_query, "feature")
    usable = np.arange(X_hist.shape[0])
    if hist_dates is not None and query_date is not None:
        hist_dates = np.asarray(hist_dates)
        usable = usable[hist_dates < query_date]
    if usable.size < k:
        raise DataError(f"insufficient history: {usable.size} usable rows < k={k}")
    H = X_hist[usable]
    if standardize:
        H, x_query = expanding_standardize(H, x_query)
    dist = np.sqrt(((H - x_query) ** 2).sum(axis=1))
    order = np.lexsort((-usable, dist))[:k]  # equal distance -> larger (more recent) index
    return usable[order], dist[order]


def knn_moments(returns, neighbor_idx) -> "MomentEstimate":
    """Neighbor-sample mean and Ledoit-Wolf covariance of the selected return rows.

    The rows are centered by the neighbor mean before shrinkage, so sigma is a
    covariance (not a second moment): identical neighbor rows give sigma = 0.
    """
    returns = as_float_array(returns, "returns", ndim=2)
    idx = np.asarray(neighbor_idx, dtype=np.int64)
    if idx.size < 2:
        raise DataError("need at least 2 neighbors for moment estimation")
    rows = returns[idx]
    mu = rows.mean(axis=0)
    sigma, rho = ledoit_wolf(rows - mu)
    return MomentEstimate(mu=mu, sigma=sigma, source="knn", diagnostics={"shrinkage": rho})


@dataclass(frozen=True)
class MomentEstimate:
    """Expected daily log returns and covariance in asset space, with provenance."""

    mu: np.ndarray
    sigma: np.ndarray
    source: str  # "knn" | "template-mixture"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mu", as_float_array(self.mu, "mu", ndim=1))
        object.__setattr__(self, "sigma", as_float_array(self.sigma, "sigma", ndim=2))
        if self.sigma.shape != (self.mu.shape[0],) * 2:
            raise DataError("sigma shape must match mu")


class KnnMomentEstimator(BaseEstimator):
    """KNN conditional moment estimator over an expanding feature history.

    fit() stores the feature/return history; estimate() returns the local
    moments for a query feature vector, never touching rows dated at or after
    the query date.
    """

    def __init__(self, n_neighbors: int = 25, min_lookback: int = 60, standardize: bool = True):
        self.n_neighbors = n_neighbors
        self.min_lookback = min_lookback
        self.standardize = standardize

    def fit(self, X, returns, dates=None):
        KnnConfig(self.n_neighbors, self.min_lookback, self.standardize)  # validate
        self.X_ = as_float_array(X, "X", ndim=2)
        self.returns_ = as_float_array(returns, "returns", ndim=2)
        if self.X_.shape[0] != self.returns_.shape[0]:
            raise DataError("feature and return histories disagree in length")
        if self.X_.shape[0] < max(self.min_lookback, self.n_neighbors):
            raise DataError("history shorter than the minimum lookback / neighbor count")
        self.dates_ = np.asarray(dates) if dates is not None else None
        return self

    def estimate(self, x_query, query_date=None) -> MomentEstimate:
        idx, dist = knn_neighbors(
            self.X_,
            x_query,
            self.n_neighbors,
            hist_dates=self.dates_,
            query_date=query_date,
            standardize=self.standardize,
        )
        est = knn_moments(self.returns_, idx)
        diag = dict(est.diagnostics)
        diag["neighbor_idx"] = idx
        diag["neighbor_dist"] = dist
        return MomentEstimate(mu=est.mu, sigma=est.sigma, source="knn", diagnostics=diag)
