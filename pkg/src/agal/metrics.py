"""Performance, concentration and turnover measurements.

Turnover follows the compounding-adjusted L1 definition: the squared form
sometimes written next to it does not make a fixed-pool market-cap
portfolio zero-turnover, the L1 form does. The average compounding factor
Z defaults to the previous-portfolio-weighted mean for the same reason;
the verbatim equal-weight mean is selectable via ``z_mode="equal"``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import InputError

__all__ = [
    "MetricsReport",
    "RebalanceTrail",
    "herfindahl_neff",
    "portfolio_speed",
    "annualized_turnover",
    "performance_stats",
    "WEEKS_PER_YEAR",
    "REBALANCES_PER_YEAR",
]

WEEKS_PER_YEAR = 52
REBALANCES_PER_YEAR = 6          # bi-monthly


@dataclass(frozen=True)
class MetricsReport:
    """Table-row metrics for one portfolio construction method."""

    excess_return: float
    total_return: float
    volatility: float
    sharpe: float
    n_positions: float            # mean count of nonzero weights
    n_eff: float                  # mean 1 / Herfindahl
    turnover: float               # annualized fraction
    rho: float                    # correlation to benchmark
    beta: float
    alpha: float                  # annualized

    def as_dict(self) -> Dict[str, float]:
        return {
            "ER": self.excess_return,
            "TR": self.total_return,
            "Vol": self.volatility,
            "SR": self.sharpe,
            "No. Pos.": self.n_positions,
            "N_eff": self.n_eff,
            "Turnover": self.turnover,
            "rho": self.rho,
            "beta": self.beta,
            "alpha": self.alpha,
        }


@dataclass(frozen=True)
class RebalanceTrail:
    """Weight vectors at rebalance dates plus between-rebalance compounding.

    ``compounding[n]`` holds z_i for the period between rebalance n and
    rebalance n+1, so it has one row less than ``weights``.
    """

    dates: np.ndarray                 # datetime64[D], increasing
    weights: np.ndarray               # R x N
    compounding: np.ndarray           # (R-1) x N, all > 0
    asset_ids: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        dates = np.asarray(pd.to_datetime(list(self.dates)).values.astype("datetime64[D]"))
        object.__setattr__(self, "dates", dates)
        w = np.ascontiguousarray(self.weights, dtype=float)
        z = np.ascontiguousarray(self.compounding, dtype=float)
        if w.ndim != 2:
            raise InputError("weights must be R x N")
        if z.shape != (max(w.shape[0] - 1, 0), w.shape[1]):
            raise InputError(
                f"compounding shape {z.shape} must be (R-1, N) = "
                f"({w.shape[0] - 1}, {w.shape[1]})"
            )
        if len(dates) != w.shape[0]:
            raise InputError("one date per rebalance required")
        if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
            raise InputError("rebalance dates must be increasing")
        if z.size and not np.all(z > 0.0):
            raise InputError("compounding factors must be finite and > 0")
        w.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "compounding", z)

    @property
    def n_rebalances(self) -> int:
        return self.weights.shape[0]


def herfindahl_neff(weights: np.ndarray) -> Tuple[float, float]:
    """Herfindahl index H = sum w^2 and effective position count 1/H."""
    w = np.asarray(weights, dtype=float)
    if not np.any(w != 0.0):
        raise InputError("herfindahl_neff: zero weight vector")
    if np.any(w < -1e-10) or abs(w.sum() - 1.0) > 1e-8:
        raise InputError("herfindahl_neff: weights must be long-only and sum to 1")
    h = float(np.sum(w * w))
    return h, 1.0 / h


def portfolio_speed(trail: RebalanceTrail) -> float:
    """Mean L1 distance between consecutive portfolios."""
    if trail.n_rebalances < 2:
        raise InputError("portfolio_speed: need at least 2 rebalances")
    return float(np.abs(np.diff(trail.weights, axis=0)).sum(axis=1).mean())


def annualized_turnover(
    trail: RebalanceTrail,
    z_mode: str = "portfolio",
    periods_per_year: Optional[float] = None,
) -> float:
    """Compounding-adjusted annualized turnover.

    Per rebalance the cost is sum_i |Z(n) w_i(n) - z_i(n) w_i(n-1)| with
    Z(n) the average compounding factor: previous-portfolio-weighted
    (default, exact zero for fixed-pool market cap) or equal-weighted.
    """
    if trail.n_rebalances < 2:
        raise InputError("annualized_turnover: need at least 2 rebalances")
    if z_mode not in ("portfolio", "equal"):
        raise InputError(f"unknown z_mode {z_mode!r}")
    if not np.all(np.isfinite(trail.compounding)):
        raise InputError("annualized_turnover: missing compounding factors")
    w = trail.weights
    z = trail.compounding
    prev, curr = w[:-1], w[1:]
    if z_mode == "portfolio":
        z_bar = (prev * z).sum(axis=1)
    else:
        z_bar = z.mean(axis=1)
    costs = np.abs(z_bar[:, None] * curr - z * prev).sum(axis=1)
    if periods_per_year is None:
        span_days = float((trail.dates[-1] - trail.dates[0]) / np.timedelta64(1, "D"))
        periods_per_year = (trail.n_rebalances - 1) * 365.25 / max(span_days, 1.0)
    return float(costs.mean() * periods_per_year)


def performance_stats(
    weekly_returns: np.ndarray,
    rf=0.0,
    benchmark: Optional[np.ndarray] = None,
    periods_per_year: int = WEEKS_PER_YEAR,
    geometric: bool = True,
) -> Dict[str, float]:
    """Annualized return/risk metrics from a (weekly) return series.

    TR is the annualized geometric mean (arithmetic if ``geometric`` is
    off), ER subtracts the annualized risk-free return, Vol is the sample
    stdev scaled by sqrt(periods), and rho/beta/alpha are measured against
    the benchmark with alpha as the annualized mean residual.
    """
    r = np.asarray(weekly_returns, dtype=float)
    if r.size < 8:
        raise InputError("performance_stats: need at least 8 observations")
    rf_arr = np.broadcast_to(np.asarray(rf, dtype=float), r.shape)
    n = r.size

    if geometric:
        tr = float(np.prod(1.0 + r) ** (periods_per_year / n) - 1.0)
        rf_ann = float(np.prod(1.0 + rf_arr) ** (periods_per_year / n) - 1.0)
    else:
        tr = float(r.mean() * periods_per_year)
        rf_ann = float(rf_arr.mean() * periods_per_year)
    er = tr - rf_ann
    vol = float(r.std(ddof=1) * np.sqrt(periods_per_year))
    sharpe = er / vol if vol > 0.0 else float("nan")

    out = {
        "total_return": tr,
        "excess_return": er,
        "volatility": vol,
        "sharpe": sharpe,
        "rho": float("nan"),
        "beta": float("nan"),
        "alpha": float("nan"),
    }
    if benchmark is not None:
        b = np.asarray(benchmark, dtype=float)
        if b.shape != r.shape:
            raise InputError("performance_stats: benchmark not aligned")
        db = b - b.mean()
        var_b = float(db @ db)
        if var_b <= 0.0:
            raise InputError("performance_stats: zero-variance benchmark, beta undefined")
        dr = r - r.mean()
        beta = float(dr @ db) / var_b
        denom = float(np.sqrt((dr @ dr) * var_b))
        out["rho"] = float(dr @ db) / denom if denom > 0.0 else float("nan")
        out["beta"] = beta
        out["alpha"] = float(np.mean(r - rf_arr - beta * (b - rf_arr)) * periods_per_year)
    return out
