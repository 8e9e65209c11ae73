"""Regime-aware daily portfolio backtesting.

A rolling Gaussian HMM with predictive model-order selection and
2-Wasserstein template tracking feeds a transaction-cost-aware mean-variance
optimizer; a KNN conditional-moment baseline and passive benchmarks run
through the identical optimization layer for comparison.
"""

from ._version import __version__
from .backtest import (
    BacktestConfig,
    BacktestResult,
    PerfReport,
    neff_series,
    perf_metrics,
    regime_attribution,
    run_benchmarks,
    run_knn,
    run_parametric,
    turnover_series,
)
from .data import (
    FeatureBuilder,
    FeatureConfig,
    FeatureTable,
    PriceTable,
    ReturnTable,
    build_features,
    load_prices,
    log_returns,
)
from .errors import ConfigError, DataError, NumericalError, RegimefolioError
from .estimators import (
    KnnConfig,
    KnnMomentEstimator,
    LedoitWolfCovariance,
    MomentEstimate,
    knn_moments,
    knn_neighbors,
    ledoit_wolf,
)
from .hmm import (
    EmConfig,
    FilterResult,
    GaussianComponent,
    GaussianHMM,
    OrderSelectionConfig,
    complexity_free_params,
    fit_hmm,
    predictive_log_score,
    select_order,
)
from .optimizer import MvoConfig, MvoSolution, kkt_residual, solve_mvo
from .ot_geometry import (
    AssignmentResult,
    TemplateSet,
    TemplateTracker,
    assign_components,
    init_templates,
    mixture_moments,
    sqrtm_psd,
    update_templates,
    w2_distance,
)
from .synthetic import RegimeSpec, generate

__all__ = [
    "__version__",
    "AssignmentResult",
    "BacktestConfig",
    "BacktestResult",
    "ConfigError",
    "DataError",
    "EmConfig",
    "FeatureBuilder",
    "FeatureConfig",
    "FeatureTable",
    "FilterResult",
    "GaussianComponent",
    "GaussianHMM",
    "KnnConfig",
    "KnnMomentEstimator",
    "LedoitWolfCovariance",
    "MomentEstimate",
    "MvoConfig",
    "MvoSolution",
    "NumericalError",
    "OrderSelectionConfig",
    "PerfReport",
    "PriceTable",
    "RegimeSpec",
    "RegimefolioError",
    "ReturnTable",
    "TemplateSet",
    "TemplateTracker",
    "assign_components",
    "build_features",
    "complexity_free_params",
    "fit_hmm",
    "generate",
    "init_templates",
    "kkt_residual",
    "knn_moments",
    "knn_neighbors",
    "ledoit_wolf",
    "load_prices",
    "log_returns",
    "mixture_moments",
    "neff_series",
    "perf_metrics",
    "predictive_log_score",
    "regime_attribution",
    "run_benchmarks",
    "run_knn",
    "run_parametric",
    "select_order",
    "solve_mvo",
    "sqrtm_psd",
    "turnover_series",
    "update_templates",
    "w2_distance",
]
