"""Configuration-driven command line: `run`, `synth`, `report`.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
Configs are TOML (or JSON — a run's manifest.json is itself a valid config,
so any run can be replayed from its manifest alone).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np
import pandas as pd

from ._version import __version__
from .backtest import BacktestConfig, run_benchmarks, run_knn, run_parametric, write_run
from .data import FeatureConfig, load_prices
from .errors import ConfigError, DataError, NumericalError, RegimefolioError
from .estimators import KnnConfig
from .hmm import EmConfig, OrderSelectionConfig
from .optimizer import MvoConfig
from .synthetic import RegimeSpec, generate, write_market

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

_STRATEGIES = ("parametric", "knn", "benchmarks", "all")

_DEFAULTS: dict = {
    "data": {"prices": "", "date_column": "date", "assets": []},
    "features": {"w_sigma": 60, "w_m": 20},
    "order": {"k_min": 2, "k_max": 6, "freq": 5, "v_len": 63, "lambda_k": 1.0},
    "em": {"max_iters": 200, "tol": 1e-5, "ridge": None},
    "templates": {"count": 6, "eta": 0.05},
    "knn": {"n_neighbors": 25, "min_lookback": 60, "standardize": True},
    "mvo": {"gamma": 5.0, "tau": 0.001, "w_max": 0.35},
    "backtest": {
        "split_date": "",
        "calibration_days": 252,
        "equity_asset": None,
        "warm_start": True,
        "annualization_days": 252,
        "risk_free_rate": 0.0,
    },
    "run": {"strategy": "all", "seed": 0, "out_dir": "run_output"},
}


def _load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise DataError(f"config file does not exist: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if path.endswith(".json"):
        return json.loads(blob)
    try:
        return tomllib.loads(blob.decode())
    except tomllib.TOMLDecodeError:
        try:
            return json.loads(blob)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is neither valid TOML nor JSON: {e}") from e


def materialize_config(user: dict) -> dict:
    """Merge a user config over the defaults, rejecting unknown keys.

    Every effective parameter (defaults included) appears in the result, which
    is what the run manifest stores.
    """
    bad: list[str] = []
    full = {sec: dict(vals) for sec, vals in _DEFAULTS.items()}
    for sec, vals in user.items():
        if sec == "meta":
            continue  # manifest bookkeeping, ignored on replay
        if sec not in full:
            bad.append(sec)
            continue
        if not isinstance(vals, dict):
            bad.append(sec)
            continue
        for key, v in vals.items():
            if key not in full[sec]:
                bad.append(f"{sec}.{key}")
            else:
                full[sec][key] = v
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}", keys=sorted(bad))
    return full


def build_backtest_config(full: dict) -> BacktestConfig:
    """Construct the engine config, collecting every offending key at once."""
    bad: list[str] = []
    parts: dict = {}

    def _try(section: str, builder):
        try:
            return builder()
        except (ConfigError, TypeError, ValueError) as e:
            keys = getattr(e, "keys", None) or [section]
            bad.extend(f"{section}.{k}" if "." not in str(k) else str(k) for k in keys)
            return None

    parts["features"] = _try("features", lambda: FeatureConfig(**full["features"]))
    parts["order"] = _try("order", lambda: OrderSelectionConfig(**full["order"]))
    em = dict(full["em"])
    parts["em"] = _try("em", lambda: EmConfig(**em))
    parts["knn"] = _try("knn", lambda: KnnConfig(**full["knn"]))
    parts["mvo"] = _try("mvo", lambda: MvoConfig(**full["mvo"]))

    bt = full["backtest"]
    if not bt.get("split_date"):
        bad.append("backtest.split_date")
    if bad:
        raise ConfigError(f"invalid config values: {sorted(set(bad))}", keys=sorted(set(bad)))
    try:
        return BacktestConfig(
            split_date=bt["split_date"],
            calibration_days=int(bt["calibration_days"]),
            n_templates=int(full["templates"]["count"]),
            eta=float(full["templates"]["eta"]),
            equity_asset=bt["equity_asset"],
            seed=int(full["run"]["seed"]),
            warm_start=bool(bt["warm_start"]),
            annualization_days=int(bt["annualization_days"]),
            risk_free_rate=float(bt["risk_free_rate"]),
            features=parts["features"],
            order=parts["order"],
            knn=parts["knn"],
            mvo=parts["mvo"],
            em=parts["em"],
        )
    except ConfigError as e:
        raise ConfigError(f"invalid config values: {e.keys or e}", keys=e.keys) from e


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_run(args) -> int:
    user = _load_config_file(args.config)
    full = materialize_config(user)
    if args.strategy:
        full["run"]["strategy"] = args.strategy
    if args.seed is not None:
        full["run"]["seed"] = args.seed
    if args.out:
        full["run"]["out_dir"] = args.out

    strategy = full["run"]["strategy"]
    if strategy not in _STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}", keys=["run.strategy"])
    if not full["data"]["prices"]:
        raise ConfigError("missing config value: data.prices", keys=["data.prices"])
    cfg = build_backtest_config(full)

    assets = full["data"]["assets"] or None
    prices = load_prices(full["data"]["prices"], full["data"]["date_column"], assets)

    results = {}
    if strategy in ("parametric", "all"):
        results["parametric"] = run_parametric(prices, cfg)
    if strategy in ("knn", "all"):
        results["knn"] = run_knn(prices, cfg)
    if strategy in ("benchmarks", "all"):
        results.update(run_benchmarks(prices, cfg))

    manifest = dict(full)
    manifest["meta"] = {
        "package": "regimefolio",
        "version": __version__,
        "inputs": {
            "prices": {
                "path": os.path.abspath(full["data"]["prices"]),
                "sha256": _sha256_file(full["data"]["prices"]),
            }
        },
        "strategies": sorted(results),
    }
    outdir = full["run"]["out_dir"]
    write_run(outdir, results, cfg, manifest)
    print(f"wrote {len(results)} result set(s) to {outdir}")
    return 0


def cmd_synth(args) -> int:
    spec_dict = _load_config_file(args.spec)
    try:
        spec = RegimeSpec.from_dict(spec_dict)
    except KeyError as e:
        raise ConfigError(f"regime spec is missing key {e}", keys=[str(e)]) from e
    table, labels = generate(spec, n_days=args.days, seed=args.seed)
    prices_path, labels_path = write_market(args.out, table, labels)
    print(f"wrote {prices_path} and {labels_path}")
    return 0


def _turnover_stats(turnover: np.ndarray) -> dict:
    return {
        "average_daily_turnover": float(turnover.mean()),
        "turnover_q95": float(np.quantile(turnover, 0.95)),
        "pct_days_gt_1pct": float(np.mean(turnover > 0.01)),
        "pct_days_gt_5pct": float(np.mean(turnover > 0.05)),
    }


def _fmt_value(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _render_table(title: str, rows: list[dict], lines: list[str]) -> None:
    lines.append(title)
    if not rows:
        lines.append("  (none)")
        lines.append("")
        return
    cols = list(rows[0].keys())
    widths = {c: max(len(c), *(len(_fmt_value(r.get(c))) for r in rows)) for c in cols}
    lines.append("  " + "  ".join(c.ljust(widths[c]) for c in cols))
    for r in rows:
        lines.append("  " + "  ".join(_fmt_value(r.get(c)).ljust(widths[c]) for c in cols))
    lines.append("")


def cmd_report(args) -> int:
    rundir = args.run_dir
    perf_path = os.path.join(rundir, "perf.json")
    if not os.path.exists(perf_path):
        raise DataError(f"missing artifact: {perf_path}")
    with open(perf_path) as fh:
        perf = json.load(fh)

    report: dict = {"performance": perf, "turnover": {}, "concentration": {}, "regimes": {}}
    for name in sorted(perf):
        diag_path = os.path.join(rundir, name, "diagnostics.csv")
        if not os.path.exists(diag_path):
            raise DataError(f"missing artifact: {diag_path}")
        diag = pd.read_csv(diag_path)
        report["turnover"][name] = _turnover_stats(diag["turnover"].to_numpy())
        neff = diag["neff"].to_numpy()
        report["concentration"][name] = {
            "average_neff": float(neff.mean()),
            "median_neff": float(np.median(neff)),
        }
        attr_path = os.path.join(rundir, name, "regime_attribution.csv")
        if os.path.exists(attr_path):
            report["regimes"][name] = pd.read_csv(attr_path).to_dict(orient="records")

    lines: list[str] = [f"run report: {os.path.abspath(rundir)}", ""]
    _render_table(
        "performance",
        [
            {"strategy": n, **{k: perf[n][k] for k in (
                "sharpe", "sortino", "max_drawdown", "ann_mean", "ann_vol", "hit_rate")}}
            for n in sorted(perf)
        ],
        lines,
    )
    _render_table(
        "turnover",
        [{"strategy": n, **report["turnover"][n]} for n in sorted(perf)],
        lines,
    )
    _render_table(
        "concentration",
        [{"strategy": n, **report["concentration"][n]} for n in sorted(perf)],
        lines,
    )
    for name, rows in sorted(report["regimes"].items()):
        _render_table(f"regime attribution ({name})", rows, lines)

    text = "\n".join(lines) + "\n"
    with open(os.path.join(rundir, "report.txt"), "w") as fh:
        fh.write(text)
    with open(os.path.join(rundir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(text, end="")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regimefolio", description=__doc__)
    p.add_argument("--version", action="version", version=f"regimefolio {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run backtests from a config file")
    pr.add_argument("--config", required=True, help="TOML or JSON config (or a manifest.json)")
    pr.add_argument("--strategy", choices=_STRATEGIES, help="override [run].strategy")
    pr.add_argument("--seed", type=int, help="override [run].seed")
    pr.add_argument("--out", help="override [run].out_dir")
    pr.set_defaults(func=cmd_run)

    ps = sub.add_parser("synth", help="generate a synthetic regime-switching market")
    ps.add_argument("--spec", required=True, help="TOML or JSON regime spec")
    ps.add_argument("--days", type=int, required=True, help="number of price rows")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", required=True, help="output directory")
    ps.set_defaults(func=cmd_synth)

    pp = sub.add_parser("report", help="summarize a finished run directory")
    pp.add_argument("--run-dir", required=True)
    pp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (NumericalError, RegimefolioError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
