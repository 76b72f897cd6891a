import numpy as np
import pytest

from agal.errors import InputError
from agal.metrics import (
    RebalanceTrail,
    annualized_turnover,
    herfindahl_neff,
    performance_stats,
    portfolio_speed,
)

from oracles import spreadsheet_stats


def trail_of(weights, compounding=None, start="2020-01-31", step_days=61):
    weights = np.asarray(weights, dtype=float)
    r, n = weights.shape
    dates = np.datetime64(start) + step_days * np.arange(r)
    if compounding is None:
        compounding = np.ones((r - 1, n))
    return RebalanceTrail(dates, weights, np.asarray(compounding, dtype=float))


class TestHerfindahl:
    def test_equal_weights(self):
        h, neff = herfindahl_neff(np.full(8, 1 / 8))
        assert neff == pytest.approx(8.0, abs=1e-12)

    def test_single_position(self):
        _, neff = herfindahl_neff(np.array([1.0, 0.0, 0.0]))
        assert neff == pytest.approx(1.0, abs=1e-15)

    def test_half_half(self):
        _, neff = herfindahl_neff(np.array([0.5, 0.5, 0.0]))
        assert neff == pytest.approx(2.0, abs=1e-15)

    def test_zero_vector	(self):
        with pytest.raises(InputError):
            herfindahl_neff(np.zeros(4))

    def test_uniform_maximizes(self, rng):
        n = 12
        for _ in range(50):
            w = rng.dirichlet(np.ones(n))
            _, neff = herfindahl_neff(w)
            assert neff <= n + 1e-10
        assert herfindahl_neff(np.full(n, 1 / n))[1] == pytest.approx(n, abs=1e-10)


class TestPortfolioSpeed:
    def test_identical_portfolios(self):
        assert portfolio_speed(trail_of([[0.5, 0.5], [0.5, 0.5]])) == 0.0

    def test_full_swap(self):
        assert portfolio_speed(trail_of([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(2.0)

    def test_matches_bruteforce(self, rng):
        w = rng.dirichlet(np.ones(5), size=7)
        got = portfolio_speed(trail_of(w))
        manual = np.mean([np.abs(w[i] - w[i - 1]).sum() for i in range(1, 7)])
        assert got == pytest.approx(manual, abs=1e-14)

    def test_needs_two(self):
        with pytest.raises(InputError):
            portfolio_speed(trail_of([[1.0, 0.0]]))


class TestTurnover:
    def test_market_cap_zero_turnover(self, rng):
        # cap-weighted portfolio on a fixed pool, weights drifting with z
        n, r = 6, 9
        caps = rng.uniform(1.0, 5.0, n)
        weights = [caps / caps.sum()]
        zs = []
        for _ in range(r - 1):
            z = np.exp(rng.normal(0.0, 0.05, n))
            caps = caps * z
            zs.append(z)
            weights.append(caps / caps.sum())
        t = trail_of(np.array(weights), np.array(zs))
        assert annualized_turnover(t, z_mode="portfolio", periods_per_year=6) <= 1e-12
        assert annualized_turnover(t, z_mode="equal", periods_per_year=6) > 1e-6

    def test_unchanged_weights_unit_z(self):
        t = trail_of([[0.6, 0.4], [0.6, 0.4]])
        assert annualized_turnover(t, periods_per_year=6) == 0.0

    def test_full_swap_is_1200_percent(self):
        t = trail_of([[1.0, 0.0], [0.0, 1.0]])
        assert annualized_turnover(t, periods_per_year=6) == pytest.approx(12.0, abs=1e-12)

    def test_unit_z_equals_speed_times_frequency(self, rng):
        w = rng.dirichlet(np.ones(4), size=6)
        t = trail_of(w)
        speed = portfolio_speed(t)
        assert annualized_turnover(t, periods_per_year=6) == pytest.approx(6 * speed, rel=1e-12)
        assert annualized_turnover(t, z_mode="equal", periods_per_year=6) == pytest.approx(
            6 * speed, rel=1e-12
        )

    def test_permutation_invariance(self, rng):
        w = rng.dirichlet(np.ones(5), size=4)
        z = np.exp(rng.normal(0, 0.1, (3, 5)))
        perm = rng.permutation(5)
        a = annualized_turnover(trail_of(w, z), periods_per_year=6)
        b = annualized_turnover(trail_of(w[:, perm], z[:, perm]), periods_per_year=6)
        assert a == pytest.approx(b, rel=1e-12)

    def test_inferred_frequency(self):
        t = trail_of([[1.0, 0.0], [0.0, 1.0]], start="2020-01-31", step_days=61)
        inferred = annualized_turnover(t)        # ~6 rebalances per year
        assert inferred == pytest.approx(2.0 * 365.25 / 61, rel=1e-12)

    def test_missing_z_rejected(self):
        z = np.ones((1, 2))
        z[0, 0] = np.nan
        with pytest.raises(InputError):
            trail_of([[0.5, 0.5], [0.5, 0.5]], z)


class TestPerformanceStats:
    def test_constant_zero_returns(self):
        r = np.zeros(10)
        out = performance_stats(r, 0.0, None)
        assert out["total_return"] == 0.0
        assert out["excess_return"] == 0.0
        assert out["volatility"] == 0.0
        assert np.isnan(out["sharpe"])

    def test_self_benchmark_identities(self, rng):
        r = rng.normal(0.001, 0.02, 60)
        out = performance_stats(r, 0.0, r)
        assert abs(out["beta"] - 1.0) <= 1e-12
        assert abs(out["alpha"]) <= 1e-12
        assert abs(out["rho"] - 1.0) <= 1e-12

    def test_matches_spreadsheet_oracle(self, rng):
        r = np.exp(rng.normal(0.001, 0.02, 100)) - 1.0
        b = np.exp(rng.normal(0.001, 0.025, 100)) - 1.0
        rf = np.full(100, 0.0003)
        ours = performance_stats(r, rf, b)
        ref = spreadsheet_stats(r, rf, b)
        for key, val in ref.items():
            assert ours[key] == pytest.approx(val, abs=1e-10), key

    def test_needs_eight_points(self):
        with pytest.raises(InputError):
            performance_stats(np.zeros(5), 0.0, None)

    def test_zero_variance_benchmark(self, rng):
        r = rng.normal(0, 0.01, 20)
        with pytest.raises(InputError):
            performance_stats(r, 0.0, np.zeros(20))

    def test_arithmetic_flag(self, rng):
        r = rng.normal(0.001, 0.01, 52)
        out = performance_stats(r, 0.0, None, geometric=False)
        assert out["total_return"] == pytest.approx(52 * r.mean(), rel=1e-12)
