"""Strictly causal daily backtests: the parametric regime strategy, the KNN
baseline, passive benchmarks, and all performance / stability diagnostics.

Every quantity dated t is a function of data dated <= t-1 only; truncating
the inputs after t and re-running reproduces a bit-identical prefix.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from ._version import __version__
from .data import FeatureConfig, FeatureTable, PriceTable, build_features, log_returns
from .errors import ConfigError, DataError, NumericalError
from .estimators import KnnConfig, knn_moments, knn_neighbors
from .hmm import EmConfig, GaussianHMM, OrderSelectionConfig, fit_hmm, select_order
from .optimizer import MvoConfig, solve_mvo
from .ot_geometry import (
    TemplateSet,
    assign_components,
    init_templates,
    mixture_moments,
    update_templates,
)
from .validation import as_float_array


def _seed_for(master: int, *tags: int) -> int:
    """Stable per-stage seed; unchanged under truncation of future data."""
    return int(np.random.SeedSequence((int(master),) + tuple(int(t) for t in tags)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class PerfReport:
    """Annualized performance summary of a daily return series."""

    ann_mean: float
    ann_vol: float
    sharpe: float | None
    sortino: float | None
    max_drawdown: float
    hit_rate: float
    cum_log_return: float
    n_days: int

    def as_dict(self) -> dict:
        return asdict(self)


def perf_metrics(returns, annualization_days: int = 252, risk_free_rate: float = 0.0) -> PerfReport:
    """Annualized mean/vol, Sharpe, Sortino, max drawdown, hit rate.

    Sharpe is reported as absent (None) when the volatility is zero rather
    than infinity; likewise Sortino when there are no negative returns.
    Max drawdown is measured on the cumulative log-return path from a zero
    starting point.
    """
    r = as_float_array(returns, "returns", ndim=1)
    if r.size == 0:
        raise DataError("empty return series")
    ann = float(annualization_days)
    excess = r - risk_free_rate / ann
    ann_mean = float(excess.mean() * ann)
    ann_vol = float(excess.std(ddof=1) * np.sqrt(ann)) if r.size >= 2 else 0.0
    # a dispersion at floating-point noise level counts as zero volatility
    tiny = 1e-12 * max(1.0, float(np.abs(excess).max(initial=0.0)))
    sharpe = ann_mean / ann_vol if ann_vol > tiny else None
    downside = float(np.sqrt(np.mean(np.minimum(excess, 0.0) ** 2)) * np.sqrt(ann))
    sortino = ann_mean / downside if downside > tiny else None
    cum = np.cumsum(r)
    peak = np.maximum.accumulate(np.concatenate([[0.0], cum]))
    max_dd = float(np.min(cum - peak[1:], initial=0.0))
    return PerfReport(
        ann_mean=ann_mean,
        ann_vol=ann_vol,
        sharpe=sharpe,
        sortino=sortino,
        max_drawdown=max_dd,
        hit_rate=float(np.mean(r > 0.0)),
        cum_log_return=float(r.sum()),
        n_days=int(r.size),
    )


def turnover_series(weights, w_start=None) -> np.ndarray:
    """Daily turnover 0.5 * ||w_t - w_{t-1}||_1; includes day one when w_start is given."""
    W = as_float_array(weights, "weights", ndim=2)
    if w_start is not None:
        W = np.vstack([as_float_array(w_start, "w_start", ndim=1), W])
    return 0.5 * np.abs(np.diff(W, axis=0)).sum(axis=1)


def neff_series(weights) -> np.ndarray:
    """Effective number of assets (inverse Herfindahl of the weight vector)."""
    W = as_float_array(weights, "weights", ndim=2)
    return 1.0 / (W**2).sum(axis=1)


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class BacktestConfig:
    """Everything a run needs: split, calibration, sub-configs, master seed."""

    split_date: str
    calibration_days: int = 252
    n_templates: int = 6
    eta: float = 0.05
    equity_asset: str | None = None
    seed: int = 0
    warm_start: bool = True
    annualization_days: int = 252
    risk_free_rate: float = 0.0
    features: FeatureConfig = field(default_factory=FeatureConfig)
    order: OrderSelectionConfig = field(default_factory=OrderSelectionConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    mvo: MvoConfig = field(default_factory=MvoConfig)
    em: EmConfig = field(default_factory=EmConfig)

    def __post_init__(self):
        bad = []
        if self.calibration_days < self.n_templates + 2:
            bad.append("calibration_days")
        if not (0.0 < self.eta <= 1.0):
            bad.append("eta")
        if self.n_templates < 1:
            bad.append("n_templates")
        if self.annualization_days < 1:
            bad.append("annualization_days")
        if self.knn.min_lookback < self.features.warmup:
            bad.append("knn.min_lookback")
        if bad:
            raise ConfigError(f"invalid backtest config: {bad}", keys=bad)

    def as_dict(self) -> dict:
        return asdict(self)

    def sha256(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class BacktestResult:
    """Daily weights, returns and diagnostic paths for one strategy run."""

    strategy: str
    dates: pd.DatetimeIndex
    assets: tuple[str, ...]
    weights: np.ndarray  # (T, N)
    returns_gross: np.ndarray  # (T,)
    returns_net: np.ndarray  # (T,)
    turnover: np.ndarray  # (T,)
    neff: np.ndarray  # (T,)
    asset_returns: np.ndarray  # (T, N) realized asset log returns over the OOS window
    initial_weights: np.ndarray
    k_path: np.ndarray | None = None
    label_path: np.ndarray | None = None
    template_probs: np.ndarray | None = None  # (T, G)
    initial_templates: TemplateSet | None = None
    final_templates: TemplateSet | None = None
    holds: list = field(default_factory=list)
    score_rows: list = field(default_factory=list)
    solver_rows: list = field(default_factory=list)
    template_rows: list = field(default_factory=list)
    neighbor_rows: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def perf(self, annualization_days: int = 252, risk_free_rate: float = 0.0) -> PerfReport:
        return perf_metrics(self.returns_gross, annualization_days, risk_free_rate)


@dataclass(frozen=True)
class _Prepared:
    returns: np.ndarray  # (T-1, N)
    features: FeatureTable
    warmup: int
    i0: int  # first out-of-sample feature index
    assets: tuple[str, ...]


def _prepare(prices: PriceTable, cfg: BacktestConfig) -> _Prepared:
    rt = log_returns(prices)
    ft = build_features(rt, cfg.features)
    split = pd.Timestamp(cfg.split_date)
    i0 = int(np.searchsorted(ft.dates.values, split.to_datetime64(), side="left"))
    if i0 >= len(ft):
        raise DataError(f"split date {cfg.split_date} leaves no out-of-sample days")
    if i0 < 1:
        raise DataError(f"split date {cfg.split_date} leaves no history")
    return _Prepared(
        returns=rt.returns, features=ft, warmup=cfg.features.warmup, i0=i0, assets=ft.assets
    )


def _result_shell(strategy: str, prep: _Prepared, cfg: BacktestConfig, n_days: int) -> dict:
    dates = prep.features.dates[prep.i0 : prep.i0 + n_days]
    rows = prep.warmup + prep.i0 + np.arange(n_days)
    return {
        "strategy": strategy,
        "dates": dates,
        "assets": prep.assets,
        "asset_returns": prep.returns[rows],
        "manifest": {
            "strategy": strategy,
            "seed": cfg.seed,
            "config_sha256": cfg.sha256(),
            "code_version": __version__,
        },
    }


# ---------------------------------------------------------------------------
# engines


def run_parametric(
    prices: PriceTable, cfg: BacktestConfig, initial_weights=None
) -> BacktestResult:
    """Daily loop: periodic predictive order selection, expanding HMM refit,
    Wasserstein template assignment/update, mixture moments, MVO solve.

    initial_weights defaults to equal weight; the zero vector selects the
    optimizer's cold start.
    """
    prep = _prepare(prices, cfg)
    X = prep.features.values
    N = len(prep.assets)
    M = len(prep.features)
    i0 = prep.i0
    min_hist = max(cfg.calibration_days, cfg.order.v_len + cfg.order.k_max + 2)
    if i0 < min_hist:
        raise DataError(
            f"need {min_hist} feature rows before the split (calibration and "
            f"order selection), got {i0}"
        )

    calib = X[i0 - cfg.calibration_days : i0]
    tset = init_templates(calib, cfg.n_templates, cfg.eta, seed=_seed_for(cfg.seed, 1), em=cfg.em)
    initial_templates = tset
    G = cfg.n_templates

    n_days = M - i0
    weights = np.empty((n_days, N))
    gross = np.empty(n_days)
    tmpl_probs = np.empty((n_days, G))
    k_path = np.empty(n_days, dtype=np.int64)
    labels = np.empty(n_days, dtype=np.int64)
    to = np.empty(n_days)
    holds: list = []
    score_rows: list = []
    solver_rows: list = []
    template_rows: list = []

    w_prev = (
        np.full(N, 1.0 / N)
        if initial_weights is None
        else as_float_array(initial_weights, "initial_weights", ndim=1)
    )
    initial_weights = w_prev.copy()
    model: GaussianHMM | None = None
    k_t = cfg.order.k_min
    prev_pg = np.zeros(G)
    prev_label = -1

    for off in range(n_days):
        i = i0 + off
        date = prep.features.dates[i]
        date_s = date.strftime("%Y-%m-%d")
        H = X[:i]
        try:
            if off % cfg.order.freq == 0:
                k_t, table = select_order(H, cfg.order, seed=_seed_for(cfg.seed, 2, off), em=cfg.em)
                for row in table:
                    score_rows.append({"date": date_s, **row})
                model = fit_hmm(H, k_t, seed=_seed_for(cfg.seed, 3, off), em=cfg.em)
            elif cfg.warm_start and model is not None and model.n_states == k_t:
                model = fit_hmm(H, k_t, seed=_seed_for(cfg.seed, 3, off), em=cfg.em, warm_from=model)
            else:
                model = fit_hmm(H, k_t, seed=_seed_for(cfg.seed, 3, off), em=cfg.em)

            p_k = model.predict_next_proba(H)
            comps = model.components()
            assignment = assign_components(comps, p_k, tset)
            new_tset = update_templates(tset, assignment, comps, p_k)
            mu_full, sigma_full = mixture_moments(new_tset, assignment.probs)
            sol = solve_mvo(mu_full[:N], sigma_full[:N, :N], w_prev, cfg.mvo)

            tset = new_tset
            w = sol.w
            pg = assignment.probs
            label = int(np.argmax(pg))
            solver_rows.append(sol.log_row(date_s))
            for g in range(G):
                template_rows.append(
                    {
                        "date": date_s,
                        "g": g,
                        "p_tg": float(pg[g]),
                        "mu_g": ";".join(f"{v:.10g}" for v in tset.templates[g].mu),
                        "trace_sigma_g": float(np.trace(tset.templates[g].sigma)),
                    }
                )
        except NumericalError:
            w = w_prev.copy()
            pg = prev_pg.copy()
            label = prev_label
            holds.append(date_s)

        weights[off] = w
        to[off] = 0.5 * float(np.abs(w - w_prev).sum())
        gross[off] = float(w @ prep.returns[prep.warmup + i])
        tmpl_probs[off] = pg
        k_path[off] = k_t
        labels[off] = label
        w_prev = w
        prev_pg, prev_label = pg, label

    shell = _result_shell("parametric", prep, cfg, n_days)
    return BacktestResult(
        weights=weights,
        returns_gross=gross,
        returns_net=gross - 2.0 * cfg.mvo.tau * to,
        turnover=to,
        neff=neff_series(weights),
        initial_weights=initial_weights,
        k_path=k_path,
        label_path=labels,
        template_probs=tmpl_probs,
        initial_templates=initial_templates,
        final_templates=tset,
        holds=holds,
        score_rows=score_rows,
        solver_rows=solver_rows,
        template_rows=template_rows,
        **shell,
    )


def run_knn(prices: PriceTable, cfg: BacktestConfig, initial_weights=None) -> BacktestResult:
    """Daily loop: causal nearest-neighbor query on the expanding feature
    history, local moments with shrinkage covariance, same MVO solve."""
    prep = _prepare(prices, cfg)
    X = prep.features.values
    N = len(prep.assets)
    M = len(prep.features)
    i0 = prep.i0
    kc = cfg.knn
    if i0 < max(kc.min_lookback, kc.n_neighbors):
        raise DataError(
            f"need {max(kc.min_lookback, kc.n_neighbors)} feature rows before the split, got {i0}"
        )

    n_days = M - i0
    weights = np.empty((n_days, N))
    gross = np.empty(n_days)
    to = np.empty(n_days)
    holds: list = []
    solver_rows: list = []
    neighbor_rows: list = []

    w_prev = (
        np.full(N, 1.0 / N)
        if initial_weights is None
        else as_float_array(initial_weights, "initial_weights", ndim=1)
    )
    initial_weights = w_prev.copy()

    for off in range(n_days):
        i = i0 + off
        date_s = prep.features.dates[i].strftime("%Y-%m-%d")
        try:
            idx, dist = knn_neighbors(X[:i], X[i], kc.n_neighbors, standardize=kc.standardize)
            est = knn_moments(prep.returns, prep.warmup + idx)
            sol = solve_mvo(est.mu, est.sigma, w_prev, cfg.mvo)
            w = sol.w
            solver_rows.append(sol.log_row(date_s))
            row = {"date": date_s}
            for j, (s, d) in enumerate(zip(idx, dist), start=1):
                row[f"neighbor_date_{j}"] = prep.features.dates[s].strftime("%Y-%m-%d")
                row[f"distance_{j}"] = float(d)
            neighbor_rows.append(row)
        except NumericalError:
            w = w_prev.copy()
            holds.append(date_s)

        weights[off] = w
        to[off] = 0.5 * float(np.abs(w - w_prev).sum())
        gross[off] = float(w @ prep.returns[prep.warmup + i])
        w_prev = w

    shell = _result_shell("knn", prep, cfg, n_days)
    return BacktestResult(
        weights=weights,
        returns_gross=gross,
        returns_net=gross - 2.0 * cfg.mvo.tau * to,
        turnover=to,
        neff=neff_series(weights),
        initial_weights=initial_weights,
        holds=holds,
        solver_rows=solver_rows,
        neighbor_rows=neighbor_rows,
        **shell,
    )


def run_benchmarks(prices: PriceTable, cfg: BacktestConfig) -> dict[str, BacktestResult]:
    """Buy-and-hold on the designated equity column, and a static equal-weight
    portfolio whose return is the mean of asset log returns (a documented
    approximation: no rebalancing-drift simulation at daily horizon)."""
    prep = _prepare(prices, cfg)
    N = len(prep.assets)
    M = len(prep.features)
    n_days = M - prep.i0
    rows = prep.warmup + prep.i0 + np.arange(n_days)
    rets = prep.returns[rows]

    equity = cfg.equity_asset if cfg.equity_asset is not None else prep.assets[0]
    if equity not in prep.assets:
        raise DataError(f"designated equity asset {equity!r} not in universe {list(prep.assets)}")
    col = prep.assets.index(equity)

    out: dict[str, BacktestResult] = {}
    for name, w in (
        ("buy_and_hold", np.eye(N)[col]),
        ("equal_weight", np.full(N, 1.0 / N)),
    ):
        weights = np.tile(w, (n_days, 1))
        gross = rets @ w if name == "buy_and_hold" else rets.mean(axis=1)
        shell = _result_shell(name, prep, cfg, n_days)
        out[name] = BacktestResult(
            weights=weights,
            returns_gross=np.asarray(gross, dtype=float),
            returns_net=np.asarray(gross, dtype=float),
            turnover=np.zeros(n_days),
            neff=neff_series(weights),
            initial_weights=w.copy(),
            **shell,
        )
    return out


# ---------------------------------------------------------------------------
# attribution and output files


def regime_attribution(
    result: BacktestResult,
    annualization_days: int = 252,
    risk_free_rate: float = 0.0,
) -> tuple[list[dict], list[dict]]:
    """Per-dominant-regime performance of the portfolio and of each asset.

    Partitions the out-of-sample days by the dominant template label; the
    "within" max drawdown is computed on the concatenated subseries of each
    regime's days. Regimes with zero days are omitted.
    """
    if result.label_path is None:
        raise DataError(f"{result.strategy} result has no template label path")
    portfolio_rows: list[dict] = []
    asset_rows: list[dict] = []
    for g in np.unique(result.label_path):
        mask = result.label_path == g
        rep = perf_metrics(result.returns_gross[mask], annualization_days, risk_free_rate)
        portfolio_rows.append({"regime": int(g), "days": int(mask.sum()), **rep.as_dict()})
        row = {"regime": int(g)}
        for j, asset in enumerate(result.assets):
            arep = perf_metrics(result.asset_returns[mask, j], annualization_days, risk_free_rate)
            row[asset] = arep.sharpe
        asset_rows.append(row)
    return portfolio_rows, asset_rows


def _date_strings(dates: pd.DatetimeIndex) -> np.ndarray:
    return dates.strftime("%Y-%m-%d").to_numpy()


def write_result(outdir: str, result: BacktestResult, cfg: BacktestConfig) -> None:
    """Write one strategy's full artifact set under outdir."""
    os.makedirs(outdir, exist_ok=True)
    ds = _date_strings(result.dates)

    wdf = pd.DataFrame(result.weights, columns=list(result.assets))
    wdf.insert(0, "date", ds)
    wdf.to_csv(os.path.join(outdir, "weights.csv"), index=False)

    rdf = pd.DataFrame(
        {"date": ds, "return": result.returns_gross, "return_net": result.returns_net}
    )
    rdf.to_csv(os.path.join(outdir, "returns.csv"), index=False)

    diag = pd.DataFrame(
        {
            "date": ds,
            "turnover": result.turnover,
            "neff": result.neff,
            "k": result.k_path if result.k_path is not None else np.full(len(ds), -1),
            "g": result.label_path if result.label_path is not None else np.full(len(ds), -1),
        }
    )
    diag.to_csv(os.path.join(outdir, "diagnostics.csv"), index=False)

    for name, rows in (
        ("score_table.csv", result.score_rows),
        ("solver_log.csv", result.solver_rows),
        ("templates.csv", result.template_rows),
        ("neighbors.csv", result.neighbor_rows),
    ):
        if rows:
            pd.DataFrame(rows).to_csv(os.path.join(outdir, name), index=False)

    if result.label_path is not None:
        port, assets = regime_attribution(result, cfg.annualization_days, cfg.risk_free_rate)
        pd.DataFrame(port).to_csv(os.path.join(outdir, "regime_attribution.csv"), index=False)
        pd.DataFrame(assets).to_csv(
            os.path.join(outdir, "regime_asset_sharpe.csv"), index=False
        )

    if result.holds:
        pd.DataFrame({"date": result.holds}).to_csv(
            os.path.join(outdir, "holds.csv"), index=False
        )


def write_run(outdir: str, results: dict[str, BacktestResult], cfg: BacktestConfig, manifest: dict) -> None:
    """Write all strategy artifact sets plus perf.json and manifest.json."""
    os.makedirs(outdir, exist_ok=True)
    perf = {}
    for name, res in results.items():
        write_result(os.path.join(outdir, name), res, cfg)
        perf[name] = res.perf(cfg.annualization_days, cfg.risk_free_rate).as_dict()
    with open(os.path.join(outdir, "perf.json"), "w") as fh:
        json.dump(perf, fh, indent=2, sort_keys=True)
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
