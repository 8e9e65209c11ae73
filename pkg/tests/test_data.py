import math

import numpy as np
import pandas as pd
import pytest
from sklearn.base import clone

from regimefolio import (
    DataError,
    FeatureBuilder,
    FeatureConfig,
    build_features,
    load_prices,
    log_returns,
)
from regimefolio.data import features_to_csv

from conftest import make_price_table


def write_csv(tmp_path, text, name="prices.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestLoadPrices:
    def test_basic_parse(self, tmp_path):
        path = write_csv(tmp_path, "date,SPX\n2020-01-01,100\n2020-01-02,101\n2020-01-03,102\n")
        pt = load_prices(path)
        assert pt.prices.shape == (3, 1)
        assert pt.assets == ("SPX",)
        assert pt.dropped_rows == 0
        np.testing.assert_allclose(pt.prices[:, 0], [100, 101, 102])

    def test_blank_cell_row_dropped(self, tmp_path):
        path = write_csv(
            tmp_path, "date,A,B\n2020-01-01,100,50\n2020-01-02,,51\n2020-01-03,102,52\n"
        )
        pt = load_prices(path)
        assert pt.prices.shape == (2, 2)
        assert pt.dropped_rows == 1

    def test_nonpositive_row_dropped(self, tmp_path):
        path = write_csv(tmp_path, "date,A\n2020-01-01,100\n2020-01-02,-5\n2020-01-03,102\n")
        pt = load_prices(path)
        assert pt.prices.shape == (2, 1)
        assert pt.dropped_rows == 1

    def test_unsorted_dates_error(self, tmp_path):
        path = write_csv(tmp_path, "date,A\n2020-01-03,100\n2020-01-01,101\n2020-01-02,102\n")
        with pytest.raises(DataError, match="sorted"):
            load_prices(path)

    def test_duplicate_dates_error(self, tmp_path):
        path = write_csv(tmp_path, "date,A\n2020-01-01,100\n2020-01-01,101\n2020-01-02,102\n")
        with pytest.raises(DataError, match="duplicate"):
            load_prices(path)

    def test_zero_usable_rows(self, tmp_path):
        path = write_csv(tmp_path, "date,A\n2020-01-01,\n2020-01-02,-1\n")
        with pytest.raises(DataError, match="zero usable"):
            load_prices(path)

    def test_missing_file_names_path(self, tmp_path):
        missing = str(tmp_path / "nope.csv")
        with pytest.raises(DataError, match="nope.csv"):
            load_prices(missing)

    def test_asset_subset(self, tmp_path):
        path = write_csv(tmp_path, "date,A,B\n2020-01-01,100,50\n2020-01-02,101,51\n")
        pt = load_prices(path, assets=["B"])
        assert pt.assets == ("B",)
        with pytest.raises(DataError, match="not in file"):
            load_prices(path, assets=["C"])


class TestLogReturns:
    def test_log_e(self):
        pt = make_price_table([1.0, math.e])
        rt = log_returns(pt)
        np.testing.assert_allclose(rt.returns, [[1.0]], atol=1e-15)

    def test_constant_prices(self):
        rt = log_returns(make_price_table([100.0, 100.0, 100.0]))
        np.testing.assert_array_equal(rt.returns, np.zeros((2, 1)))

    def test_scalar_log_oracle(self):
        rt = log_returns(make_price_table([100.0, 110.0]))
        assert rt.returns[0, 0] == pytest.approx(math.log(1.1), abs=1e-15)

    def test_too_short(self):
        with pytest.raises(DataError):
            log_returns(make_price_table([100.0]))

    def test_dates_align_to_later_price(self):
        pt = make_price_table([100.0, 101.0, 102.0])
        rt = log_returns(pt)
        assert (rt.dates == pt.dates[1:]).all()


class TestBuildFeatures:
    def test_constant_returns(self):
        c = 0.01
        prices = 100.0 * np.exp(np.arange(30) * c)
        rt = log_returns(make_price_table(prices))
        ft = build_features(rt, FeatureConfig(w_sigma=5, w_m=3))
        np.testing.assert_allclose(ft.values[:, 0], c, atol=1e-12)  # r slot
        np.testing.assert_allclose(ft.values[:, 1], 0.0, atol=1e-12)  # sigma slot
        np.testing.assert_allclose(ft.values[:, 2], c, atol=1e-12)  # m slot

    def test_two_point_mean(self):
        # w_m=2 window ending at t-1 holds [0.01, 0.03] -> m slot 0.02
        rets = np.array([0.0, 0.0, 0.01, 0.03, 0.0])[:, None]
        prices = 100.0 * np.exp(np.concatenate([[0.0], np.cumsum(rets)]))
        rt = log_returns(make_price_table(prices))
        ft = build_features(rt, FeatureConfig(w_sigma=2, w_m=2))
        assert ft.values[-1, 2] == pytest.approx(0.02, abs=1e-15)

    def test_sample_std_divisor(self):
        # w_sigma=3 window ending at t-1 holds [0.01, 0.02, 0.03]
        rets = np.array([0.0, 0.01, 0.02, 0.03, 0.0])[:, None]
        prices = 100.0 * np.exp(np.concatenate([[0.0], np.cumsum(rets)]))
        rt = log_returns(make_price_table(prices))
        ft = build_features(rt, FeatureConfig(w_sigma=3, w_m=2))
        # hand computation: sample std with divisor w_sigma - 1 = 2
        assert ft.values[-1, 1] == pytest.approx(0.01, abs=1e-15)

    def test_dimension_is_3n(self):
        rng = np.random.default_rng(0)
        prices = 100 * np.exp(np.cumsum(rng.normal(0, 0.01, (50, 4)), axis=0))
        ft = build_features(log_returns(make_price_table(prices)), FeatureConfig(5, 3))
        assert ft.values.shape[1] == 12

    def test_insufficient_history(self):
        rt = log_returns(make_price_table([100.0, 101.0, 102.0]))
        with pytest.raises(DataError):
            build_features(rt, FeatureConfig(w_sigma=5, w_m=3))

    def test_causality_bit_identical(self):
        rng = np.random.default_rng(1)
        rets = rng.normal(0, 0.01, (60, 2))
        prices = 100 * np.exp(np.cumsum(rets, axis=0))
        pt = make_price_table(np.vstack([np.full(2, 100.0), prices]))
        cfg = FeatureConfig(w_sigma=10, w_m=5)
        full = build_features(log_returns(pt), cfg)
        s = 40  # perturb returns at rows >= s
        rets2 = rets.copy()
        rets2[s:] += rng.normal(0, 0.05, rets2[s:].shape)
        pt2 = make_price_table(np.vstack([np.full(2, 100.0), 100 * np.exp(np.cumsum(rets2, axis=0))]))
        pert = build_features(log_returns(pt2), cfg)
        # feature dated at return row j uses returns < j: rows with j <= s unchanged
        n_safe = s - cfg.warmup + 1
        assert np.array_equal(full.values[:n_safe], pert.values[:n_safe])

    def test_shift_invariance_of_sigma_slot(self):
        rng = np.random.default_rng(2)
        rets = rng.normal(0, 0.01, (40, 1))
        cfg = FeatureConfig(w_sigma=8, w_m=4)
        fb = FeatureBuilder(w_sigma=8, w_m=4)
        base = fb.transform(rets)
        shifted = fb.transform(rets + 0.005)
        np.testing.assert_allclose(shifted[:, 1], base[:, 1], atol=1e-14)  # sigma invariant
        np.testing.assert_allclose(shifted[:, 2], base[:, 2] + 0.005, atol=1e-14)  # m shifts

    def test_feature_csv_header(self, tmp_path):
        rng = np.random.default_rng(3)
        prices = 100 * np.exp(np.cumsum(rng.normal(0, 0.01, (30, 2)), axis=0))
        ft = build_features(log_returns(make_price_table(prices)), FeatureConfig(5, 3))
        out = tmp_path / "features.csv"
        features_to_csv(ft, out)
        header = out.read_text().splitlines()[0]
        assert header == "date,r_1,r_2,sigma_1,sigma_2,m_1,m_2"


class TestFeatureBuilder:
    def test_matches_functional_api(self):
        rng = np.random.default_rng(4)
        rets = rng.normal(0, 0.01, (50, 3))
        prices = 100 * np.exp(np.cumsum(rets, axis=0))
        pt = make_price_table(np.vstack([np.full(3, 100.0), prices]))
        table = build_features(log_returns(pt), FeatureConfig(w_sigma=10, w_m=5))
        arr = FeatureBuilder(w_sigma=10, w_m=5).transform(log_returns(pt).returns)
        np.testing.assert_array_equal(table.values, arr)

    def test_sklearn_get_params_and_clone(self):
        fb = FeatureBuilder(w_sigma=12, w_m=6)
        assert fb.get_params() == {"w_sigma": 12, "w_m": 6}
        fb2 = clone(fb).fit()
        assert fb2.get_params() == fb.get_params()
