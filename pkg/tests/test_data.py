import numpy as np
import pytest

from agal.data import (
    MarketCapPanel,
    PoolConfig,
    PricePanel,
    ReturnsPanel,
    apply_pool_filter,
    compute_returns,
    cross_sectional_normalize,
    generate_synthetic_universe,
    load_long_csv,
    panel_from_wide_csv,
    panel_to_wide_csv,
    panels_to_long_csv,
)
from agal.errors import DegenerateDateWarning, InputError, PoolTooSmallError


def make_prices(values, ids=None):
    values = np.asarray(values, dtype=float)
    n, t = values.shape
    ids = ids or [f"A{i}" for i in range(n)]
    dates = np.arange("2010-01-04", "2030-01-01", dtype="datetime64[D]")[:t]
    return PricePanel(ids, dates, values)


class TestComputeReturns:
    def test_simple_return(self):
        rets = compute_returns(make_prices([[100.0, 110.0]]))
        assert rets.returns[0, 0] == pytest.approx(0.10, abs=1e-15)

    def test_flat_price(self):
        rets = compute_returns(make_prices([[50.0, 50.0]]))
        assert rets.returns[0, 0] == 0.0

    def test_missing_propagates(self):
        rets = compute_returns(make_prices([[100.0, np.nan, 120.0]]))
        assert np.isnan(rets.returns[0]).all()

    def test_too_short(self):
        with pytest.raises(InputError):
            compute_returns(make_prices([[100.0]]))

    def test_compounding_round_trip(self, rng):
        vals = 100.0 * np.cumprod(1.0 + rng.normal(0, 0.02, (5, 200)), axis=1)
        prices = make_prices(vals)
        rets = compute_returns(prices)
        rebuilt = vals[:, :1] * np.cumprod(1.0 + rets.returns, axis=1)
        assert np.allclose(rebuilt, vals[:, 1:], rtol=1e-10)


class TestCrossSectionalNormalize:
    def test_two_assets(self):
        panel = ReturnsPanel(["a", "b"], ["2020-01-02"], np.array([[3.0], [4.0]]))
        out = cross_sectional_normalize(panel)
        assert out.returns[:, 0] == pytest.approx([0.6, 0.8], abs=1e-15)
        assert out.is_normalized

    def test_already_unit(self):
        panel = ReturnsPanel(["a", "b", "c"], ["2020-01-02"], np.array([[1.0], [0.0], [0.0]]))
        out = cross_sectional_normalize(panel)
        assert out.returns[:, 0] == pytest.approx([1.0, 0.0, 0.0], abs=1e-15)

    def test_degenerate_date_warns(self):
        panel = ReturnsPanel(["a", "b"], ["2020-01-02"], np.array([[0.0], [0.0]]))
        with pytest.warns(DegenerateDateWarning):
            out = cross_sectional_normalize(panel)
        assert (out.returns == 0.0).all()

    def test_double_normalize_rejected(self):
        panel = ReturnsPanel(["a", "b"], ["2020-01-02"], np.array([[3.0], [4.0]]))
        once = cross_sectional_normalize(panel)
        with pytest.raises(InputError):
            cross_sectional_normalize(once)

    def test_idempotent_values_and_signs(self, rng):
        vals = rng.normal(0, 0.02, (6, 40))
        panel = ReturnsPanel([f"A{i}" for i in range(6)], np.arange("2020-01-01", "2020-02-26", dtype="datetime64[D]")[:40], vals)
        once = cross_sectional_normalize(panel)
        again = cross_sectional_normalize(
            ReturnsPanel(once.asset_ids, once.dates, once.returns)
        )
        assert np.allclose(once.returns, again.returns, atol=1e-14)
        assert np.array_equal(np.sign(once.returns), np.sign(vals))


class TestPoolFilter:
    def build(self, coverage_by_asset, t=100):
        n = len(coverage_by_asset)
        vals = np.random.default_rng(0).normal(0, 0.01, (n, t))
        for i, cov_frac in enumerate(coverage_by_asset):
            n_missing = int(round((1.0 - cov_frac) * t))
            if n_missing:
                vals[i, :n_missing] = np.nan
        dates = np.arange("2019-01-01", "2020-06-01", dtype="datetime64[D]")[:t]
        rets = ReturnsPanel([f"A{i}" for i in range(n)], dates, vals)
        caps = MarketCapPanel(
            rets.asset_ids, dates, np.full((n, t), 1e9)
        )
        return rets, caps

    def test_coverage_threshold(self):
        rets, caps = self.build([0.96, 0.80, 1.0])
        cfg = PoolConfig(min_coverage_fraction=0.95, pool_size=10)
        ids = apply_pool_filter(rets, caps, cfg, rets.dates[-1], lookback_days=100)
        assert ids == ["A0", "A2"]

    def test_all_below_threshold(self):
        rets, caps = self.build([0.5, 0.6])
        cfg = PoolConfig(min_coverage_fraction=0.95, pool_size=10)
        with pytest.raises(PoolTooSmallError):
            apply_pool_filter(rets, caps, cfg, rets.dates[-1], lookback_days=100)

    def test_subset_and_deterministic(self, rng):
        rets, caps = self.build([1.0] * 8)
        cfg = PoolConfig(min_coverage_fraction=0.95, pool_size=4)
        first = apply_pool_filter(rets, caps, cfg, rets.dates[-1], lookback_days=100)
        second = apply_pool_filter(rets, caps, cfg, rets.dates[-1], lookback_days=100)
        assert first == second
        assert set(first) <= set(rets.asset_ids)
        assert len(first) == 4

    def test_bad_as_of(self):
        rets, caps = self.build([1.0, 1.0])
        with pytest.raises(InputError):
            apply_pool_filter(rets, caps, PoolConfig(pool_size=2), "1999-01-01")


class TestSyntheticUniverse:
    def test_determinism(self):
        a = generate_synthetic_universe(10, 50, 3, seed=9)
        b = generate_synthetic_universe(10, 50, 3, seed=9)
        assert np.array_equal(a[0].prices, b[0].prices)
        assert np.array_equal(a[1].caps, b[1].caps)

    def test_market_mode_same_sign(self):
        prices, _ = generate_synthetic_universe(40, 2001, n_factors=1, seed=2)
        rets = compute_returns(prices)
        cov = np.cov(rets.returns)
        _, vecs = np.linalg.eigh(cov)
        top = vecs[:, -1]
        assert (np.sign(top) == np.sign(top[0])).all()

    def test_dominant_market_eigenvalue(self):
        prices, _, truth = generate_synthetic_universe(
            250, 3500, n_factors=13, seed=4, with_truth=True
        )
        rets = compute_returns(prices)
        corr = np.corrcoef(rets.returns)
        eigs = np.linalg.eigvalsh(corr)
        # analytic spectrum of the generative correlation matrix
        d = np.sqrt(np.diag(truth.covariance))
        truth_corr = truth.covariance / np.outer(d, d)
        true_eigs = np.linalg.eigvalsh(truth_corr)
        true_ratio = true_eigs[-1] / true_eigs[-2]
        assert true_ratio > 3.0
        assert eigs[-1] / eigs[-2] == pytest.approx(true_ratio, rel=0.2)

    def test_sample_covariance_converges_to_truth(self):
        errs = []
        for n_days in (500, 8000):
            prices, caps, truth = generate_synthetic_universe(
                20, n_days, 4, seed=11, with_truth=True
            )
            r = compute_returns(prices).returns
            sample = (r @ r.T) / r.shape[1]
            errs.append(np.linalg.norm(sample - truth.covariance))
        assert errs[1] < 0.5 * errs[0]

    def test_caps_lognormal_positive(self):
        _, caps = generate_synthetic_universe(30, 10, 3, seed=1)
        assert (caps.caps > 0).all()

    def test_preconditions(self):
        with pytest.raises(InputError):
            generate_synthetic_universe(1, 50, 3)
        with pytest.raises(InputError):
            generate_synthetic_universe(10, 1, 3)
        with pytest.raises(InputError):
            generate_synthetic_universe(10, 50, 0)


class TestCsvRoundTrips:
    def test_wide_round_trip(self, tmp_path, rng):
        prices, _ = generate_synthetic_universe(5, 30, 2, seed=3)
        path = tmp_path / "prices.csv"
        panel_to_wide_csv(path, prices)
        back = panel_from_wide_csv(path, kind="prices")
        assert back.asset_ids == prices.asset_ids
        assert np.allclose(back.prices, prices.prices)

    def test_long_round_trip(self, tmp_path):
        prices, caps = generate_synthetic_universe(4, 20, 2, seed=5)
        path = tmp_path / "universe.csv"
        panels_to_long_csv(path, prices, caps)
        back_prices, back_caps = load_long_csv(path)
        assert back_prices.asset_ids == prices.asset_ids
        assert np.allclose(back_prices.prices, prices.prices, rtol=1e-12)
        assert np.allclose(back_caps.caps, caps.caps, rtol=1e-12)

    def test_long_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("date,symbol,px\n2020-01-01,A,1.0\n")
        with pytest.raises(InputError):
            load_long_csv(path)


class TestPanelValidation:
    def test_price_positive(self):
        with pytest.raises(InputError):
            make_prices([[1.0, -2.0]])

    def test_dates_increasing(self):
        with pytest.raises(InputError):
            PricePanel(["a"], ["2020-01-02", "2020-01-01"], np.array([[1.0, 2.0]]))

    def test_unique_ids(self):
        with pytest.raises(InputError):
            PricePanel(["a", "a"], ["2020-01-02"], np.array([[1.0], [2.0]]))

    def test_returns_above_minus_one(self):
        with pytest.raises(InputError):
            ReturnsPanel(["a"], ["2020-01-02"], np.array([[-1.5]]))

    def test_immutability(self):
        prices = make_prices([[1.0, 2.0]])
        with pytest.raises(ValueError):
            prices.prices[0, 0] = 5.0
