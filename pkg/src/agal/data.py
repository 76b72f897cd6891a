"""Panels of prices, returns and market caps, plus pool filtering and
synthetic universe generation.

All panels are N x T (assets x dates), missing entries are NaN, and the
objects are immutable after construction so they can be shared freely
across workers.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DegenerateDateWarning, InputError, PoolTooSmallError

__all__ = [
    "PricePanel",
    "ReturnsPanel",
    "MarketCapPanel",
    "PoolConfig",
    "SyntheticTruth",
    "compute_returns",
    "cross_sectional_normalize",
    "apply_pool_filter",
    "generate_synthetic_universe",
    "panel_from_wide_csv",
    "panel_to_wide_csv",
    "load_long_csv",
    "panels_to_long_csv",
]


def _as_dates(dates) -> np.ndarray:
    arr = np.asarray(pd.to_datetime(list(dates)).values.astype("datetime64[D]"))
    return arr


def _check_axes(asset_ids, dates, values, name):
    if len(set(asset_ids)) != len(asset_ids):
        raise InputError(f"{name}: asset ids must be unique")
    if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
        raise InputError(f"{name}: dates must be strictly increasing")
    if values.shape != (len(asset_ids), len(dates)):
        raise InputError(
            f"{name}: values shape {values.shape} does not match "
            f"{len(asset_ids)} assets x {len(dates)} dates"
        )


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PricePanel:
    """Positive price levels; NaN marks a missing observation."""

    asset_ids: Tuple[str, ...]
    dates: np.ndarray            # datetime64[D], strictly increasing
    prices: np.ndarray           # N x T

    def __post_init__(self):
        object.__setattr__(self, "asset_ids", tuple(str(a) for a in self.asset_ids))
        object.__setattr__(self, "dates", _as_dates(self.dates))
        object.__setattr__(self, "prices", _freeze(self.prices))
        _check_axes(self.asset_ids, self.dates, self.prices, "PricePanel")
        present = ~np.isnan(self.prices)
        if np.any(self.prices[present] <= 0):
            raise InputError("PricePanel: all present prices must be > 0")

    @property
    def n_assets(self) -> int:
        return len(self.asset_ids)

    @property
    def n_dates(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class ReturnsPanel:
    """Simple daily returns; NaN marks a missing observation."""

    asset_ids: Tuple[str, ...]
    dates: np.ndarray
    returns: np.ndarray          # N x T
    is_normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "asset_ids", tuple(str(a) for a in self.asset_ids))
        object.__setattr__(self, "dates", _as_dates(self.dates))
        object.__setattr__(self, "returns", _freeze(self.returns))
        _check_axes(self.asset_ids, self.dates, self.returns, "ReturnsPanel")
        present = ~np.isnan(self.returns)
        if self.is_normalized:
            # unit cross-sectional norm bounds every entry by 1 in magnitude
            if np.any(np.abs(self.returns[present]) > 1.0 + 1e-12):
                raise InputError("ReturnsPanel: normalized returns must lie in [-1, 1]")
        elif np.any(self.returns[present] <= -1.0):
            raise InputError("ReturnsPanel: returns must be > -1")

    @property
    def n_assets(self) -> int:
        return len(self.asset_ids)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    def select(self, asset_ids: Sequence[str]) -> "ReturnsPanel":
        """Sub-panel restricted to the given assets (order preserved)."""
        index = {a: i for i, a in enumerate(self.asset_ids)}
        rows = [index[a] for a in asset_ids]
        return ReturnsPanel(
            tuple(asset_ids), self.dates, self.returns[rows, :], self.is_normalized
        )

    def filled(self) -> np.ndarray:
        """Return matrix with NaN replaced by 0 (covariance-estimation view)."""
        return np.nan_to_num(self.returns, nan=0.0)


@dataclass(frozen=True)
class MarketCapPanel:
    """Positive market capitalizations; NaN marks a missing observation."""

    asset_ids: Tuple[str, ...]
    dates: np.ndarray
    caps: np.ndarray             # N x T

    def __post_init__(self):
        object.__setattr__(self, "asset_ids", tuple(str(a) for a in self.asset_ids))
        object.__setattr__(self, "dates", _as_dates(self.dates))
        object.__setattr__(self, "caps", _freeze(self.caps))
        _check_axes(self.asset_ids, self.dates, self.caps, "MarketCapPanel")
        present = ~np.isnan(self.caps)
        if np.any(self.caps[present] <= 0):
            raise InputError("MarketCapPanel: all present caps must be > 0")

    @property
    def n_assets(self) -> int:
        return len(self.asset_ids)


@dataclass(frozen=True)
class PoolConfig:
    """Pool-selection rules: liquidity/size ranking plus coverage filter.

    The liquidity proxy is market cap times rolling mean |return| over
    ``liquidity_window_days`` (dollar volume is not generically available).
    """

    min_coverage_fraction: float = 0.95
    liquidity_window_days: int = 63
    pool_size: int = 1000
    refresh_frequency: str = "yearly"

    def __post_init__(self):
        if not 0.0 < self.min_coverage_fraction <= 1.0:
            raise InputError("min_coverage_fraction must be in (0, 1]")
        if self.pool_size < 2:
            raise InputError("pool_size must be >= 2")


def compute_returns(prices: PricePanel) -> ReturnsPanel:
    """Daily simple returns p(t)/p(t-1) - 1; missing if either price is missing."""
    if prices.n_dates < 2:
        raise InputError("compute_returns: need at least 2 dates")
    p = prices.prices
    with np.errstate(invalid="ignore", divide="ignore"):
        rets = p[:, 1:] / p[:, :-1] - 1.0
    rets[~np.isfinite(rets)] = np.nan
    return ReturnsPanel(prices.asset_ids, prices.dates[1:], rets)


def cross_sectional_normalize(returns: ReturnsPanel) -> ReturnsPanel:
    """Divide each date's cross-section by its L2 norm over present entries.

    All-zero dates map to zeros and raise a DegenerateDateWarning so that a
    market holiday cannot abort a longer pipeline.
    """
    if returns.is_normalized:
        raise InputError("cross_sectional_normalize: input already normalized")
    r = returns.returns.copy()
    filled = np.nan_to_num(r, nan=0.0)
    norms = np.sqrt((filled**2).sum(axis=0))
    degenerate = norms == 0.0
    if degenerate.any():
        bad = [str(d) for d in returns.dates[degenerate][:5]]
        warnings.warn(
            f"{int(degenerate.sum())} date(s) with all-zero cross-section "
            f"(first: {bad}); normalized returns set to 0 there",
            DegenerateDateWarning,
            stacklevel=2,
        )
    safe = np.where(degenerate, 1.0, norms)
    r = r / safe[None, :]
    return ReturnsPanel(returns.asset_ids, returns.dates, r, is_normalized=True)


def apply_pool_filter(
    returns: ReturnsPanel,
    caps: Optional[MarketCapPanel],
    cfg: PoolConfig,
    as_of,
    lookback_days: int = 1000,
) -> List[str]:
    """Assets passing the liquidity/size ranking and the coverage filter.

    Coverage is the fraction of non-missing returns over the covariance
    lookback window ending at ``as_of`` (window clipped to data start).
    """
    as_of = np.datetime64(pd.Timestamp(as_of).date())
    pos = int(np.searchsorted(returns.dates, as_of, side="right")) - 1
    if pos < 0 or returns.dates[pos] != as_of:
        raise InputError(f"apply_pool_filter: as_of {as_of} not on the date axis")

    lb0 = max(0, pos + 1 - lookback_days)
    window = returns.returns[:, lb0 : pos + 1]
    coverage = 1.0 - np.isnan(window).mean(axis=1)
    keep = coverage >= cfg.min_coverage_fraction

    n_candidates = int(keep.sum())
    if n_candidates >= 2 and n_candidates > cfg.pool_size:
        liq0 = max(0, pos + 1 - cfg.liquidity_window_days)
        activity = np.nanmean(np.abs(returns.returns[:, liq0 : pos + 1]), axis=1)
        activity = np.nan_to_num(activity, nan=0.0)
        if caps is not None:
            cap_idx = {a: i for i, a in enumerate(caps.asset_ids)}
            cpos = int(np.searchsorted(caps.dates, as_of, side="right")) - 1
            size = np.array(
                [
                    caps.caps[cap_idx[a], cpos] if a in cap_idx and cpos >= 0 else np.nan
                    for a in returns.asset_ids
                ]
            )
            size = np.nan_to_num(size, nan=0.0)
        else:
            size = np.ones(returns.n_assets)
        proxy = np.where(keep, size * activity, -np.inf)
        order = np.argsort(-proxy, kind="stable")
        chosen = np.zeros(returns.n_assets, dtype=bool)
        chosen[order[: cfg.pool_size]] = True
        keep = keep & chosen

    ids = [a for a, k in zip(returns.asset_ids, keep) if k]
    if len(ids) < 2:
        raise PoolTooSmallError(
            f"pool filter left {len(ids)} asset(s) as of {as_of} "
            f"(coverage >= {cfg.min_coverage_fraction:.0%} required)"
        )
    return ids


@dataclass(frozen=True)
class SyntheticTruth:
    """Generative parameters of a synthetic universe, for oracle tests."""

    covariance: np.ndarray       # true daily covariance of returns
    market_loadings: np.ndarray
    sector_ids: np.ndarray
    idio_vols: np.ndarray


def generate_synthetic_universe(
    n_assets: int,
    n_days: int,
    n_factors: int = 13,
    seed: int = 0,
    market_vol: float = 0.010,
    sector_vol: float = 0.011,
    idio_vol: float = 0.011,
    idio_vol_sigma: float = 0.30,
    cap_log_sigma: float = 1.0,
    start_date: str = "2005-08-01",
    with_truth: bool = False,
):
    """Deterministic factor-model universe: prices and market caps.

    Returns follow one dominant market factor (all loadings positive) plus
    ``n_factors - 1`` sector factors with geometrically graded sector sizes
    and sector-level mean betas, plus heterogeneous idiosyncratic noise.
    Prices are compounded from the returns; caps start log-normal and evolve
    with the price (constant share count).
    """
    if n_assets < 2 or n_days < 2 or n_factors < 1:
        raise InputError("generate_synthetic_universe: need n_assets>=2, n_days>=2, n_factors>=1")
    rng = np.random.default_rng(seed)
    N, K = n_assets, n_factors
    n_ret = n_days - 1
    n_sec = K - 1

    if n_sec > 0:
        raw = np.geomspace(1.0, 8.0, n_sec) * rng.uniform(0.9, 1.1, n_sec)
        sizes = np.maximum(1, np.round(raw / raw.sum() * N).astype(int))
        while sizes.sum() > N:
            sizes[np.argmax(sizes)] -= 1
        while sizes.sum() < N:
            sizes[np.argmin(sizes)] += 1
        sector_id = rng.permutation(np.repeat(np.arange(n_sec), sizes))
        beta_sector = rng.uniform(0.7, 1.3, n_sec)
        gamma_sector = rng.uniform(0.8, 1.2, n_sec)
        beta = beta_sector[sector_id] + rng.uniform(-0.15, 0.15, N)
        gamma = gamma_sector[sector_id] * rng.uniform(0.8, 1.2, N)
        sig_s = sector_vol * rng.uniform(0.85, 1.15, n_sec)
    else:
        sector_id = np.full(N, -1)
        beta = rng.uniform(0.7, 1.3, N)
        gamma = np.zeros(N)
        sig_s = np.zeros(0)

    sig_i = np.clip(
        np.exp(rng.normal(np.log(idio_vol), idio_vol_sigma, N)),
        0.45 * idio_vol,
        2.0 * idio_vol,
    )

    f_m = rng.normal(0.0, market_vol, n_ret)
    rets = beta[:, None] * f_m[None, :]
    if n_sec > 0:
        f_s = rng.normal(0.0, 1.0, (n_sec, n_ret)) * sig_s[:, None]
        rets = rets + gamma[:, None] * f_s[sector_id, :]
    rets = rets + rng.normal(0.0, 1.0, (N, n_ret)) * sig_i[:, None]
    np.clip(rets, -0.95, None, out=rets)

    dates = pd.bdate_range(start_date, periods=n_days).values.astype("datetime64[D]")
    growth = np.cumprod(1.0 + rets, axis=1)
    p0 = rng.uniform(20.0, 200.0, N)
    prices = np.concatenate([p0[:, None], p0[:, None] * growth], axis=1)
    cap0 = np.exp(rng.normal(np.log(1e9), cap_log_sigma, N))
    caps = np.concatenate([cap0[:, None], cap0[:, None] * growth], axis=1)

    ids = tuple(f"A{i:04d}" for i in range(N))
    price_panel = PricePanel(ids, dates, prices)
    cap_panel = MarketCapPanel(ids, dates, caps)
    if not with_truth:
        return price_panel, cap_panel

    cov = market_vol**2 * np.outer(beta, beta)
    if n_sec > 0:
        for s in range(n_sec):
            mask = sector_id == s
            g = np.where(mask, gamma, 0.0)
            cov += sig_s[s] ** 2 * np.outer(g, g)
    cov += np.diag(sig_i**2)
    truth = SyntheticTruth(cov, beta, sector_id, sig_i)
    return price_panel, cap_panel, truth


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------

def load_long_csv(path) -> Tuple[PricePanel, Optional[MarketCapPanel]]:
    """Read the long schema ``date,asset_id,price[,market_cap]``."""
    df = pd.read_csv(path)
    required = {"date", "asset_id", "price"}
    if not required.issubset(df.columns):
        raise InputError(f"long CSV must have columns {sorted(required)}, got {list(df.columns)}")
    df["date"] = pd.to_datetime(df["date"])
    prices = df.pivot_table(index="asset_id", columns="date", values="price", aggfunc="first")
    prices = prices.sort_index()
    panel = PricePanel(tuple(prices.index), prices.columns, prices.values)
    caps = None
    if "market_cap" in df.columns and df["market_cap"].notna().any():
        cp = df.pivot_table(index="asset_id", columns="date", values="market_cap", aggfunc="first")
        cp = cp.reindex(index=prices.index, columns=prices.columns)
        caps = MarketCapPanel(tuple(cp.index), cp.columns, cp.values)
    return panel, caps


def panels_to_long_csv(path, prices: PricePanel, caps: Optional[MarketCapPanel] = None) -> None:
    """Write the long schema; one row per (date, asset) with a present price."""
    frames = []
    dates = pd.DatetimeIndex(prices.dates)
    for i, a in enumerate(prices.asset_ids):
        row = pd.DataFrame(
            {"date": dates, "asset_id": a, "price": prices.prices[i]}
        )
        if caps is not None:
            j = caps.asset_ids.index(a) if a in caps.asset_ids else None
            row["market_cap"] = caps.caps[j] if j is not None else np.nan
        frames.append(row)
    out = pd.concat(frames, ignore_index=True)
    out = out[out["price"].notna()]
    out["date"] = out["date"].dt.strftime("%Y-%m-%d")
    out.to_csv(path, index=False)


def _wide_frame(asset_ids, dates, values) -> pd.DataFrame:
    df = pd.DataFrame(values.T, columns=list(asset_ids))
    df.insert(0, "date", pd.DatetimeIndex(dates).strftime("%Y-%m-%d"))
    return df


def panel_to_wide_csv(path, panel) -> None:
    """Write any panel as ``date`` + one column per asset."""
    if isinstance(panel, PricePanel):
        values = panel.prices
    elif isinstance(panel, ReturnsPanel):
        values = panel.returns
    elif isinstance(panel, MarketCapPanel):
        values = panel.caps
    else:
        raise InputError(f"unsupported panel type {type(panel)!r}")
    _wide_frame(panel.asset_ids, panel.dates, values).to_csv(path, index=False)


def panel_from_wide_csv(path, kind: str = "returns"):
    """Read a wide CSV into the requested panel type."""
    df = pd.read_csv(path)
    if "date" not in df.columns:
        raise InputError("wide CSV must have a 'date' column")
    dates = pd.to_datetime(df["date"])
    values = df.drop(columns=["date"]).astype(float)
    ids = tuple(values.columns)
    mat = values.values.T
    if kind == "returns":
        return ReturnsPanel(ids, dates, mat)
    if kind == "prices":
        return PricePanel(ids, dates, mat)
    if kind == "caps":
        return MarketCapPanel(ids, dates, mat)
    raise InputError(f"unknown panel kind {kind!r}")
