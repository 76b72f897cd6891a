"""Low-risk factor construction and portfolio exposure measurement.

The low-vol (low-beta) factor ranks stocks by trailing inverse volatility
(negative beta) measured on overlapping multi-day returns, demeans the rank
signal to cash neutrality, lags it to avoid short-term reversal, hedges the
resulting return series with a lagged rolling beta to the market-cap
portfolio, and scales it to a constant volatility target.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .data import ReturnsPanel
from .errors import DataCoverageWarning, InputError

__all__ = ["FactorConfig", "FactorSeries", "rank_signal", "build_low_risk_factor", "exposure_table"]

TRADING_DAYS_PER_YEAR = 252


@dataclass(frozen=True)
class FactorConfig:
    vol_window: int = 100            # days for per-stock vol / beta estimates
    return_horizon: int = 3          # overlapping multi-day returns
    signal_lag: int = 20             # excludes short-term reversal
    hedge_beta_window: int = 100
    hedge_lag: int = 2
    vol_target: float = 0.10         # annualized
    vol_estimate_window: int = 100

    def __post_init__(self):
        for name in ("vol_window", "return_horizon", "hedge_beta_window", "vol_estimate_window"):
            if getattr(self, name) < 2:
                raise InputError(f"{name} must be >= 2")
        if self.signal_lag < 0 or self.hedge_lag < 0:
            raise InputError("lags must be >= 0")
        if self.vol_target <= 0.0:
            raise InputError("vol_target must be positive")


@dataclass(frozen=True)
class FactorSeries:
    """Daily factor returns with the trails used to build them."""

    dates: np.ndarray
    returns: np.ndarray              # final hedged, vol-targeted series
    raw_returns: np.ndarray          # before hedge and scaling
    hedge_beta: np.ndarray
    realized_vol: np.ndarray         # lagged rolling vol used for scaling (annualized)
    signals: pd.DataFrame            # date x asset cash-neutral signals
    kind: str

    def frame(self) -> pd.Series:
        return pd.Series(self.returns, index=pd.DatetimeIndex(self.dates), name=self.kind)


def rank_signal(raw_scores: np.ndarray) -> np.ndarray:
    """Cash-neutral rank signal: (2/N) rank(score) - 1, then demeaned.

    Higher score means larger signal; ties get average ranks. Depends on the
    scores only through their ordering.
    """
    scores = np.asarray(raw_scores, dtype=float)
    if scores.ndim != 1 or scores.size < 2:
        raise InputError("rank_signal: need a vector of at least 2 scores")
    if not np.all(np.isfinite(scores)):
        raise InputError("rank_signal: scores must be finite")
    n = scores.size
    s = (2.0 / n) * rankdata(scores, method="average") - 1.0
    return s - s.mean()


def _rolling_sum(frame: pd.DataFrame, horizon: int) -> pd.DataFrame:
    return frame.rolling(horizon, min_periods=horizon).sum()


def _rolling_beta(x: pd.DataFrame, bench: pd.Series, window: int) -> pd.DataFrame:
    """Rolling cov(x, bench)/var(bench), column-wise."""
    mean_x = x.rolling(window, min_periods=window).mean()
    mean_b = bench.rolling(window, min_periods=window).mean()
    mean_xb = x.mul(bench, axis=0).rolling(window, min_periods=window).mean()
    mean_b2 = (bench**2).rolling(window, min_periods=window).mean()
    cov = mean_xb.sub(mean_x.mul(mean_b, axis=0))
    var = mean_b2 - mean_b**2
    return cov.div(var, axis=0)


def build_low_risk_factor(
    returns: ReturnsPanel,
    benchmark_mc: np.ndarray,
    kind: str = "low_vol",
    cfg: FactorConfig = FactorConfig(),
) -> FactorSeries:
    """Construct the beta-hedged, vol-targeted low-vol or low-beta factor.

    ``benchmark_mc`` is the market-cap portfolio's daily return series
    aligned to the panel dates.
    """
    if kind not in ("low_vol", "low_beta"):
        raise InputError("kind must be 'low_vol' or 'low_beta'")
    bench = np.asarray(benchmark_mc, dtype=float)
    if bench.shape != (returns.n_dates,):
        raise InputError("benchmark series must align with the panel dates")

    need = cfg.return_horizon - 1 + cfg.vol_window + cfg.signal_lag + 1
    need += max(cfg.hedge_beta_window + cfg.hedge_lag, cfg.vol_estimate_window + cfg.hedge_lag)
    if returns.n_dates < need:
        raise InputError(
            f"build_low_risk_factor: need at least {need} days of history, "
            f"got {returns.n_dates}"
        )

    idx = pd.DatetimeIndex(returns.dates)
    rets = pd.DataFrame(returns.returns.T, index=idx, columns=list(returns.asset_ids))
    bench_s = pd.Series(bench, index=idx)

    multi = _rolling_sum(rets, cfg.return_horizon)
    if kind == "low_vol":
        trail = multi.rolling(cfg.vol_window, min_periods=cfg.vol_window).std(ddof=1)
        scores = 1.0 / trail
    else:
        multi_b = bench_s.rolling(cfg.return_horizon, min_periods=cfg.return_horizon).sum()
        trail = _rolling_beta(multi, multi_b, cfg.vol_window)
        scores = -trail
    scores = scores.shift(cfg.signal_lag)

    valid = scores.notna().all(axis=1)
    start = int(valid.values.argmax())
    if not valid.values[start:].all():
        raise InputError("build_low_risk_factor: gaps in the score history")

    sig = np.zeros((returns.n_dates, returns.n_assets))
    score_vals = scores.values
    for t in range(start, returns.n_dates):
        sig[t] = rank_signal(score_vals[t])
    signals = pd.DataFrame(sig, index=idx, columns=list(returns.asset_ids))

    raw_factor = (signals.values * np.nan_to_num(returns.returns.T, nan=0.0)).sum(axis=1)
    raw_factor[:start] = np.nan
    raw_s = pd.Series(raw_factor, index=idx)

    beta_roll = _rolling_beta(raw_s.to_frame("f"), bench_s, cfg.hedge_beta_window)["f"]
    beta_lagged = beta_roll.shift(cfg.hedge_lag)
    hedged = raw_s - beta_lagged.fillna(0.0) * bench_s

    vol_roll = hedged.rolling(cfg.vol_estimate_window, min_periods=cfg.vol_estimate_window).std(ddof=1)
    vol_lagged = vol_roll.shift(cfg.hedge_lag) * np.sqrt(TRADING_DAYS_PER_YEAR)
    scale = cfg.vol_target / vol_lagged
    zero_vol = vol_lagged <= 0.0
    if zero_vol.any():
        warnings.warn(
            f"{int(zero_vol.sum())} day(s) with zero rolling vol; previous scale held",
            DataCoverageWarning,
            stacklevel=2,
        )
        scale = scale.where(~zero_vol).ffill()
    final = (hedged * scale).dropna()

    keep = final.index
    return FactorSeries(
        dates=keep.values.astype("datetime64[D]"),
        returns=final.values,
        raw_returns=raw_s.reindex(keep).values,
        hedge_beta=beta_lagged.reindex(keep).values,
        realized_vol=vol_lagged.reindex(keep).values,
        signals=signals.loc[keep],
        kind=kind,
    )


def _corr(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx <= 0.0 or vy <= 0.0:
        raise InputError("correlation undefined for a zero-variance series")
    return float(dx @ dy) / float(np.sqrt(vx * vy))


def exposure_table(
    method_returns: pd.DataFrame,
    mc: pd.Series,
    factors: Dict[str, FactorSeries],
    cfg: FactorConfig = FactorConfig(),
) -> pd.DataFrame:
    """Correlation of each factor with each method and with its MC residual.

    Rows are rho_<factor> and rho*_<factor>; columns are methods. The
    residual uses the lagged rolling beta of the method to MC; a method
    identical to MC has a degenerate residual, reported as NaN.
    """
    if not isinstance(method_returns, pd.DataFrame):
        raise InputError("method_returns must be a date-indexed DataFrame")
    rows = {}
    beta_roll = _rolling_beta(method_returns, mc, cfg.hedge_beta_window).shift(cfg.hedge_lag)
    residuals = method_returns.sub(beta_roll.mul(mc, axis=0))
    for name, fac in factors.items():
        f = fac.frame()
        joined = method_returns.join(f, how="inner").dropna()
        if joined.empty:
            raise InputError(f"no overlapping dates with factor {name}")
        rho = {}
        rho_star = {}
        for col in method_returns.columns:
            rho[col] = _corr(joined[col].values, joined[fac.kind].values)
            res = residuals[col].reindex(joined.index).dropna()
            fa = f.reindex(res.index)
            dres = res.values - res.values.mean()
            if res.empty or float(dres @ dres) <= 1e-24 * len(res):
                rho_star[col] = float("nan")      # degenerate residual (e.g. MC itself)
            else:
                rho_star[col] = _corr(res.values, fa.values)
        rows[f"rho_{name}"] = rho
        rows[f"rho*_{name}"] = rho_star
    return pd.DataFrame(rows).T[list(method_returns.columns)]
