import filecmp
import json
import os

import numpy as np
import pandas as pd
import pytest

from regimefolio.cli import main

FIXTURE = os.path.join(os.path.dirname(__file__), "data", "prices_fixture.csv")

CONFIG_TMPL = """
[data]
prices = "{prices}"

[features]
w_sigma = 20
w_m = 10

[order]
k_min = 2
k_max = 3
freq = 25
v_len = 30

[em]
max_iters = 50

[templates]
count = 3
eta = 0.1

[knn]
n_neighbors = 15
min_lookback = 20

[mvo]
w_max = 0.6

[backtest]
split_date = "{split}"
calibration_days = 100
equity_asset = "SPX"

[run]
strategy = "{strategy}"
seed = 3
out_dir = "{out}"
"""


def write_config(tmp_path, strategy="benchmarks", out="out", prices=FIXTURE, split="2024-05-01"):
    cfg = tmp_path / "config.toml"
    cfg.write_text(
        CONFIG_TMPL.format(prices=prices, split=split, strategy=strategy, out=tmp_path / out)
    )
    return str(cfg), str(tmp_path / out)


SPEC_TOML = """
means = [[0.001, 0.0], [-0.002, 0.0005]]
covs = [[[0.0001, 0.0], [0.0, 0.000016]], [[0.0004, 0.0], [0.0, 0.000016]]]
transition = [[0.97, 0.03], [0.05, 0.95]]
assets = ["EQ", "DEF"]
"""


class TestRun:
    def test_benchmarks_run(self, tmp_path, capsys):
        cfg, out = write_config(tmp_path, strategy="benchmarks")
        assert main(["run", "--config", cfg]) == 0
        perf = json.load(open(os.path.join(out, "perf.json")))
        assert sorted(perf) == ["buy_and_hold", "equal_weight"]
        assert os.path.exists(os.path.join(out, "manifest.json"))

    def test_missing_input_names_path(self, tmp_path, capsys):
        cfg, _ = write_config(tmp_path, prices=str(tmp_path / "missing.csv"))
        assert main(["run", "--config", cfg]) == 3
        assert "missing.csv" in capsys.readouterr().err

    def test_config_error_lists_keys(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(
            f'[data]\nprices = "{FIXTURE}"\n'
            '[mvo]\ngamma = -2.0\nw_max = 3.0\n'
            '[order]\nk_min = 5\nk_max = 2\n'
            '[backtest]\nsplit_date = "2024-05-01"\n'
        )
        assert main(["run", "--config", str(cfg)]) == 2
        err = capsys.readouterr().err
        for key in ("mvo.gamma", "mvo.w_max", "order.k_min/k_max"):
            assert key in err

    def test_unknown_keys_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text('[data]\nprices = "x"\ntypo_key = 1\n[no_such_section]\na = 2\n')
        assert main(["run", "--config", str(cfg)]) == 2
        err = capsys.readouterr().err
        assert "data.typo_key" in err and "no_such_section" in err

    def test_strategy_all_shares_date_index(self, tmp_path):
        cfg, out = write_config(tmp_path, strategy="all")
        assert main(["run", "--config", cfg]) == 0
        frames = {
            name: pd.read_csv(os.path.join(out, name, "weights.csv"))
            for name in ("parametric", "knn", "buy_and_hold", "equal_weight")
        }
        dates = frames["parametric"]["date"]
        for name, df in frames.items():
            assert (df["date"] == dates).all(), name
        perf = json.load(open(os.path.join(out, "perf.json")))
        assert len(perf) == 4

    def test_manifest_replay_bit_identical(self, tmp_path):
        cfg, out = write_config(tmp_path, strategy="knn")
        assert main(["run", "--config", cfg]) == 0
        out2 = str(tmp_path / "replay")
        assert main(["run", "--config", os.path.join(out, "manifest.json"), "--out", out2]) == 0
        for sub in ("knn/weights.csv", "knn/returns.csv", "knn/diagnostics.csv", "perf.json"):
            assert filecmp.cmp(os.path.join(out, sub), os.path.join(out2, sub), shallow=False), sub

    def test_seed_override_recorded(self, tmp_path):
        cfg, out = write_config(tmp_path, strategy="benchmarks")
        assert main(["run", "--config", cfg, "--seed", "99"]) == 0
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert manifest["run"]["seed"] == 99
        assert manifest["meta"]["inputs"]["prices"]["sha256"]


class TestSynth:
    def test_flat_then_deterministic(self, tmp_path):
        spec = tmp_path / "spec.toml"
        spec.write_text(SPEC_TOML)
        out1, out2 = str(tmp_path / "m1"), str(tmp_path / "m2")
        assert main(["synth", "--spec", str(spec), "--days", "60", "--seed", "9", "--out", out1]) == 0
        assert main(["synth", "--spec", str(spec), "--days", "60", "--seed", "9", "--out", out2]) == 0
        assert filecmp.cmp(os.path.join(out1, "prices.csv"), os.path.join(out2, "prices.csv"), shallow=False)
        assert filecmp.cmp(os.path.join(out1, "true_labels.csv"), os.path.join(out2, "true_labels.csv"), shallow=False)

    def test_labels_aligned_to_returns(self, tmp_path):
        spec = tmp_path / "spec.toml"
        spec.write_text(SPEC_TOML)
        out = str(tmp_path / "m")
        assert main(["synth", "--spec", str(spec), "--days", "40", "--seed", "0", "--out", out]) == 0
        prices = pd.read_csv(os.path.join(out, "prices.csv"))
        labels = pd.read_csv(os.path.join(out, "true_labels.csv"))
        assert len(labels) == len(prices) - 1
        assert (labels["date"] == prices["date"].iloc[1:].to_numpy()).all()

    def test_invalid_spec(self, tmp_path, capsys):
        spec = tmp_path / "spec.toml"
        spec.write_text("means = [[0.0]]\n")
        assert main(["synth", "--spec", str(spec), "--days", "10", "--seed", "0", "--out", str(tmp_path / "x")]) == 2


class TestReport:
    def test_report_idempotent_and_complete(self, tmp_path, capsys):
        cfg, out = write_config(tmp_path, strategy="all")
        assert main(["run", "--config", cfg]) == 0
        assert main(["report", "--run-dir", out]) == 0
        first_txt = open(os.path.join(out, "report.txt")).read()
        first_json = open(os.path.join(out, "report.json")).read()
        assert main(["report", "--run-dir", out]) == 0
        assert open(os.path.join(out, "report.txt")).read() == first_txt
        assert open(os.path.join(out, "report.json")).read() == first_json
        rep = json.loads(first_json)
        assert "average_daily_turnover" in rep["turnover"]["parametric"]
        assert "average_neff" in rep["concentration"]["knn"]
        assert rep["regimes"]["parametric"]  # attribution table present

    def test_constant_weights_zero_turnover_stats(self, tmp_path):
        cfg, out = write_config(tmp_path, strategy="benchmarks")
        assert main(["run", "--config", cfg]) == 0
        assert main(["report", "--run-dir", out]) == 0
        rep = json.load(open(os.path.join(out, "report.json")))
        assert rep["turnover"]["equal_weight"]["average_daily_turnover"] == 0.0
        assert rep["concentration"]["equal_weight"]["average_neff"] == pytest.approx(5.0)

    def test_missing_artifacts(self, tmp_path, capsys):
        assert main(["report", "--run-dir", str(tmp_path)]) == 3
        assert "perf.json" in capsys.readouterr().err


class TestDataQuirks:
    def test_dirty_csv_rows_dropped(self, tmp_path):
        # inject a blank cell and a negative price into a copy of the fixture
        raw = open(FIXTURE).read().splitlines()
        parts = raw[5].split(",")
        parts[1] = ""
        raw[5] = ",".join(parts)
        parts = raw[9].split(",")
        parts[2] = "-1.0"
        raw[9] = ",".join(parts)
        dirty = tmp_path / "dirty.csv"
        dirty.write_text("\n".join(raw) + "\n")
        from regimefolio import load_prices

        pt = load_prices(str(dirty))
        assert pt.dropped_rows == 2
