import numpy as np
import pandas as pd
import pytest

from agal.data import ReturnsPanel, compute_returns, generate_synthetic_universe
from agal.errors import InputError
from agal.factors import FactorConfig, build_low_risk_factor, exposure_table, rank_signal


class TestRankSignal:
    def test_two_assets(self):
        sigma = np.array([1.0, 2.0])
        s = rank_signal(1.0 / sigma)
        assert s == pytest.approx([0.5, -0.5], abs=1e-15)

    def test_all_equal_scores(self):
        s = rank_signal(np.full(5, 3.0))
        assert s == pytest.approx(np.zeros(5), abs=1e-15)

    def test_cash_neutral_and_monotone(self, rng):
        sigma = rng.uniform(0.5, 2.0, 4)
        s = rank_signal(1.0 / sigma)
        assert abs(s.sum()) <= 1e-12
        order = np.argsort(sigma)
        assert (np.diff(s[order]) < 0).all()

    def test_monotone_transform_invariance(self, rng):
        scores = rng.normal(0, 1, 10)
        a = rank_signal(scores)
        b = rank_signal(np.exp(3.0 * scores))
        assert np.array_equal(a, b)

    def test_permutation_equivariance(self, rng):
        scores = rng.normal(0, 1, 8)
        perm = rng.permutation(8)
        assert np.array_equal(rank_signal(scores)[perm], rank_signal(scores[perm]))

    def test_validation(self):
        with pytest.raises(InputError):
            rank_signal(np.array([1.0]))
        with pytest.raises(InputError):
            rank_signal(np.array([1.0, np.nan]))


def synthetic_market(seed=41, n=40, t=2400, planted_low_vol_premium=0.0):
    """Universe plus MC benchmark; optionally tilt drift toward low-vol names."""
    rng = np.random.default_rng(seed)
    beta = rng.uniform(0.7, 1.3, n)
    sig_i = np.exp(rng.normal(np.log(0.012), 0.5, n))
    sig_i = np.clip(sig_i, 0.005, 0.035)
    f_m = rng.normal(0.0002, 0.009, t)
    eps = rng.normal(0, 1.0, (n, t)) * sig_i[:, None]
    drift = np.zeros(n)
    if planted_low_vol_premium:
        ranks = np.argsort(np.argsort(-sig_i))      # low vol -> high rank
        drift = planted_low_vol_premium * (ranks / (n - 1) - 0.5)
    rets = beta[:, None] * f_m[None, :] + eps + drift[:, None]
    dates = pd.bdate_range("2005-01-03", periods=t).values.astype("datetime64[D]")
    panel = ReturnsPanel([f"A{i}" for i in range(n)], dates, rets)
    caps0 = np.exp(rng.normal(np.log(1e9), 1.0, n))
    mc_w = caps0 / caps0.sum()
    bench = mc_w @ rets
    return panel, bench


class TestBuildLowRiskFactor:
    def test_cash_neutrality_every_date(self):
        panel, bench = synthetic_market()
        fac = build_low_risk_factor(panel, bench, "low_vol")
        sums = fac.signals.values.sum(axis=1)
        assert np.abs(sums).max() <= 1e-12

    def test_planted_premium_positive_mean(self):
        panel, bench = synthetic_market(seed=43, planted_low_vol_premium=0.004)
        fac = build_low_risk_factor(panel, bench, "low_vol")
        assert fac.returns.mean() > 0.0

    def test_hedged_beta_small(self):
        panel, bench = synthetic_market(seed=44)
        for kind in ("low_vol", "low_beta"):
            fac = build_low_risk_factor(panel, bench, kind)
            b = np.cov(fac.returns, bench[-len(fac.returns):])[0, 1] / np.var(
                bench[-len(fac.returns):]
            )
            assert abs(b) <= 0.15

    def test_vol_targeting(self):
        panel, bench = synthetic_market(seed=45)
        fac = build_low_risk_factor(panel, bench, "low_vol")
        realized = fac.returns.std(ddof=1) * np.sqrt(252)
        assert 0.07 <= realized <= 0.13

    def test_no_look_ahead(self):
        panel, bench = synthetic_market(seed=46, t=1200)
        fac_full = build_low_risk_factor(panel, bench, "low_vol")
        cut = 900
        tampered = panel.returns.copy()
        tampered[:, cut:] = tampered[:, cut:] * 1.5 + 0.001
        panel_b = ReturnsPanel(panel.asset_ids, panel.dates, tampered)
        bench_b = bench.copy()
        bench_b[cut:] = bench_b[cut:] * 0.5
        fac_b = build_low_risk_factor(panel_b, bench_b, "low_vol")
        dates_a = pd.DatetimeIndex(fac_full.dates)
        dates_b = pd.DatetimeIndex(fac_b.dates)
        keep = dates_a[dates_a < pd.Timestamp(str(panel.dates[cut]))]
        sa = pd.Series(fac_full.returns, index=dates_a).loc[keep]
        sb = pd.Series(fac_b.returns, index=dates_b).loc[keep]
        assert np.array_equal(sa.values, sb.values)

    def test_insufficient_history(self):
        panel, bench = synthetic_market(seed=47, t=150)
        with pytest.raises(InputError):
            build_low_risk_factor(panel, bench, "low_vol")


@pytest.fixture(scope="module")
def setup():
    panel, bench = synthetic_market(seed=48)
    fac_lv = build_low_risk_factor(panel, bench, "low_vol")
    fac_lb = build_low_risk_factor(panel, bench, "low_beta")
    idx = pd.DatetimeIndex(panel.dates)
    bench_s = pd.Series(bench, index=idx)
    return panel, bench_s, {"LV": fac_lv, "LB": fac_lb}


class TestExposureTable:

    def test_factor_against_itself(self, setup):
        panel, bench_s, factors = setup
        fac = factors["LV"]
        methods = pd.DataFrame({"SELF": fac.frame(), "MC": bench_s}).dropna()
        table = exposure_table(methods, bench_s, {"LV": fac})
        assert table.loc["rho_LV", "SELF"] == pytest.approx(1.0, abs=1e-12)

    def test_mc_residual_degenerate(self, setup):
        panel, bench_s, factors = setup
        methods = pd.DataFrame({"MC": bench_s}).dropna()
        table = exposure_table(methods, bench_s, factors)
        assert np.isnan(table.loc["rho*_LV", "MC"])

    def test_planted_low_beta_tilt_detected(self, setup):
        panel, bench_s, factors = setup
        fac_lb = factors["LB"]
        tilted = 0.25 * bench_s + 0.10 * fac_lb.frame().reindex(bench_s.index).fillna(0.0)
        methods = pd.DataFrame({"TILT": tilted, "MC": bench_s}).dropna()
        table = exposure_table(methods, bench_s, factors)
        assert table.loc["rho_LB", "TILT"] > 0.1

    def test_zero_variance_method_rejected(self, setup):
        panel, bench_s, factors = setup
        methods = pd.DataFrame({"FLAT": bench_s * 0.0, "MC": bench_s}).dropna()
        with pytest.raises(InputError):
            exposure_table(methods, bench_s, factors)

    def test_row_layout(self, setup):
        panel, bench_s, factors = setup
        methods = pd.DataFrame({"MC": bench_s}).dropna()
        table = exposure_table(methods, bench_s, factors)
        assert list(table.index) == ["rho_LV", "rho*_LV", "rho_LB", "rho*_LB"]
