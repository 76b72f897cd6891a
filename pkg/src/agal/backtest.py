"""End-to-end backtest: rolling pools, lagged covariance windows, bi-monthly
rebalancing, shared cleaned covariance across methods, and metric tables.

Causality: every covariance window and pool decision uses only data up to
the rebalance date minus ``lag_days`` (asserted). Between rebalances the
weights drift with realized returns; a missing return holds the position in
cash. The market-cap method doubles as the benchmark for rho/beta/alpha.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .data import (
    MarketCapPanel,
    PoolConfig,
    PricePanel,
    ReturnsPanel,
    apply_pool_filter,
    compute_returns,
    cross_sectional_normalize,
)
from .errors import DataCoverageWarning, InputError
from .metrics import (
    MetricsReport,
    RebalanceTrail,
    annualized_turnover,
    herfindahl_neff,
    performance_stats,
)
from .optimizer import OptimizerConfig, solve_tracking
from .spectrum import CleaningConfig, SpectralCovariance, cross_validated_clean, empirical_covariance
from .targets import TargetSpec, named_target

__all__ = [
    "BacktestConfig",
    "BacktestReport",
    "run_backtest",
    "drift_weights",
    "spec_from_string",
    "parse_config_file",
    "write_backtest_report",
    "DEFAULT_METHODS",
]

_POSITION_EPS = 1e-10

DEFAULT_METHODS = (
    TargetSpec("aap"),
    TargetSpec("sparse_aap"),
    TargetSpec("mdp"),
    TargetSpec("mvp"),
    TargetSpec("equal_weight"),
    TargetSpec("market_cap"),
)

_SPEC_ALIASES = {
    "mc": "market_cap",
    "market-cap": "market_cap",
    "market_cap": "market_cap",
    "1n": "equal_weight",
    "1/n": "equal_weight",
    "equal-weight": "equal_weight",
    "equal_weight": "equal_weight",
    "ev": "equal_vol",
    "equal-vol": "equal_vol",
    "equal_vol": "equal_vol",
    "mvp": "mvp",
    "mdp": "mdp",
    "erc": "erc",
    "aap": "aap",
    "saap": "sparse_aap",
    "s-aap": "sparse_aap",
    "sparse-aap": "sparse_aap",
    "sparse_aap": "sparse_aap",
    "continuum": "continuum",
}


def spec_from_string(
    name: str,
    a: Optional[float] = None,
    b: Optional[float] = None,
    c: Optional[float] = None,
    k_star_fraction: float = 0.05,
) -> TargetSpec:
    """Parse a method name (``mvp``, ``aap``, ``sparse-aap``, ``continuum`` ...)."""
    kind = _SPEC_ALIASES.get(name.strip().lower())
    if kind is None:
        raise InputError(f"unknown method {name!r}; choose from {sorted(set(_SPEC_ALIASES))}")
    if kind == "continuum":
        if a is None:
            raise InputError("continuum spec needs exponent a (and optionally b, c)")
        return TargetSpec("continuum", a=float(a), b=float(b or 0.0), c=float(c or 0.0))
    return TargetSpec(kind, k_star_fraction=k_star_fraction)


@dataclass(frozen=True)
class BacktestConfig:
    lookback_days: int = 1000
    lag_days: int = 2
    rebalance_months: int = 2
    methods: Tuple[TargetSpec, ...] = DEFAULT_METHODS
    optimizer: OptimizerConfig = OptimizerConfig()
    cleaning: Optional[CleaningConfig] = CleaningConfig()   # None -> raw covariance
    pool: Optional[PoolConfig] = PoolConfig()               # None -> keep all assets
    metric_frequency: str = "weekly"                        # or "monthly"
    risk_free: float = 0.0
    z_mode: str = "portfolio"

    def __post_init__(self):
        if self.lookback_days < 2 or self.lag_days < 0 or self.rebalance_months < 1:
            raise InputError("invalid lookback/lag/rebalance settings")
        if self.metric_frequency not in ("weekly", "monthly"):
            raise InputError("metric_frequency must be weekly or monthly")
        if not self.methods:
            raise InputError("at least one method required")

    @property
    def rebalances_per_year(self) -> float:
        return 12.0 / self.rebalance_months

    @property
    def metric_periods_per_year(self) -> int:
        return 52 if self.metric_frequency == "weekly" else 12


@dataclass(frozen=True)
class BacktestReport:
    method_labels: Tuple[str, ...]
    benchmark_label: str
    rebalance_dates: np.ndarray
    asset_ids: Tuple[str, ...]                 # union axis of the trails
    trails: Dict[str, RebalanceTrail]
    target_trails: Dict[str, np.ndarray]       # unconstrained targets, R x N
    daily_returns: pd.DataFrame                # date x method
    period_returns: pd.DataFrame               # weekly/monthly, date x method
    metrics: Dict[str, MetricsReport]
    pools: Tuple[Tuple[str, ...], ...]         # pool per rebalance
    covariance_tags: Tuple[str, ...]


def drift_weights(weights: np.ndarray, period_returns: np.ndarray) -> np.ndarray:
    """Let weights drift with one period of returns: w z / sum(w z).

    Missing returns compound at 1 (position parked in cash).
    """
    w = np.asarray(weights, dtype=float)
    if abs(w.sum() - 1.0) > 1e-8:
        raise InputError("drift_weights: weights must sum to 1")
    z = 1.0 + np.nan_to_num(np.asarray(period_returns, dtype=float), nan=0.0)
    wz = w * z
    total = wz.sum()
    if total <= 0.0:
        raise InputError("drift_weights: non-positive portfolio compounding")
    return wz / total


def _month_end_indices(dates: np.ndarray) -> np.ndarray:
    """Index of the last trading date in each calendar month."""
    idx = pd.DatetimeIndex(dates)
    frame = pd.DataFrame({"i": np.arange(len(idx))}, index=idx)
    return frame.groupby(idx.to_period("M"))["i"].max().values


def _period_end_mask(dates: np.ndarray, freq: str) -> np.ndarray:
    idx = pd.DatetimeIndex(dates)
    period = idx.to_period("W" if freq == "weekly" else "M")
    mask = np.zeros(len(idx), dtype=bool)
    mask[pd.Series(np.arange(len(idx))).groupby(period.values).max().values] = True
    return mask


def _compound(series: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Compound daily returns into the periods delimited by mask ends."""
    growth = np.cumprod(1.0 + series)
    ends = np.flatnonzero(mask)
    vals = growth[ends]
    prev = np.concatenate([[1.0], vals[:-1]])
    return vals / prev - 1.0


def run_backtest(
    prices: PricePanel,
    caps: Optional[MarketCapPanel],
    cfg: BacktestConfig = BacktestConfig(),
) -> BacktestReport:
    """Run the full protocol and assemble the per-method report."""
    returns = compute_returns(prices)
    n_dates = returns.n_dates
    first_possible = cfg.lookback_days + cfg.lag_days
    if n_dates <= first_possible + 1:
        raise InputError(
            f"backtest needs > lookback + lag + 1 = {first_possible + 1} return days, "
            f"got {n_dates}"
        )

    needs_caps = any(s.exponents()[2] != 0.0 for s in cfg.methods if s.kind != "erc" and s.kind != "sparse_aap")
    if needs_caps and caps is None:
        raise InputError("market-cap data required by the configured methods")

    month_ends = _month_end_indices(returns.dates)
    eligible = month_ends[month_ends >= first_possible]
    # trade on every rebalance_months-th month end, keep at least one period after
    reb_idx = eligible[:: cfg.rebalance_months]
    reb_idx = reb_idx[reb_idx < n_dates - 1]
    if len(reb_idx) < 2:
        raise InputError("not enough history for two rebalances")

    labels = [s.label for s in cfg.methods]
    if len(set(labels)) != len(labels):
        raise InputError("duplicate method labels in config")
    if "MC" not in labels:
        # benchmark is always computed, even when not requested as a method
        mc_spec = TargetSpec("market_cap")
        methods = tuple(cfg.methods) + (mc_spec,)
        labels = labels + ["MC"]
    else:
        methods = tuple(cfg.methods)

    if any(m.kind == "market_cap" for m in methods) and caps is None:
        raise InputError("market-cap data required for the MC benchmark")

    cap_index = {a: i for i, a in enumerate(caps.asset_ids)} if caps is not None else {}
    all_ids = returns.asset_ids
    id_pos = {a: i for i, a in enumerate(all_ids)}

    pools: List[Tuple[str, ...]] = []
    weights_per_method: Dict[str, List[np.ndarray]] = {lb: [] for lb in labels}
    targets_per_method: Dict[str, List[np.ndarray]] = {lb: [] for lb in labels}
    cov_tags: List[str] = []
    current_pool: Optional[List[str]] = None
    last_refresh_year: Optional[int] = None

    raw = returns.returns
    for k, reb in enumerate(reb_idx):
        as_of_idx = reb - cfg.lag_days
        reb_year = pd.Timestamp(returns.dates[reb]).year
        if cfg.pool is not None:
            if current_pool is None or last_refresh_year is None or reb_year > last_refresh_year:
                current_pool = apply_pool_filter(
                    returns,
                    caps,
                    cfg.pool,
                    returns.dates[as_of_idx],
                    lookback_days=cfg.lookback_days,
                )
                last_refresh_year = reb_year
        else:
            current_pool = list(all_ids)
        pools.append(tuple(current_pool))
        rows = np.array([id_pos[a] for a in current_pool])

        t1 = reb - cfg.lag_days
        t0 = t1 - cfg.lookback_days
        assert t1 <= reb - cfg.lag_days, "covariance window breaks causality"
        window_panel = ReturnsPanel(
            tuple(current_pool), returns.dates[t0:t1], raw[rows, t0:t1]
        )
        normalized = cross_sectional_normalize(window_panel)
        if cfg.cleaning is not None:
            fold_seed = int(np.random.SeedSequence((cfg.cleaning.seed, k)).generate_state(1)[0])
            cov = cross_validated_clean(normalized, None, replace(cfg.cleaning, seed=fold_seed))
        else:
            cov = empirical_covariance(normalized)
        cov_tags.append(cov.cleaning_tag)

        if caps is not None:
            cap_rows = np.array([cap_index[a] for a in current_pool])
            cap_date = int(np.searchsorted(caps.dates, returns.dates[reb], side="right")) - 1
            cap_slice = caps.caps[cap_rows, : cap_date + 1]
            cap_vec = pd.DataFrame(cap_slice).ffill(axis=1).values[:, -1]
        else:
            cap_vec = None

        sigma = cov.vols
        for spec, label in zip(methods, labels):
            target = named_target(spec, cov, sigma=sigma, caps=cap_vec)
            solved = solve_tracking(cov, target, cfg.optimizer)
            full_t = np.zeros(len(all_ids))
            full_t[rows] = target.weights
            full_w = np.zeros(len(all_ids))
            full_w[rows] = solved.weights
            targets_per_method[label].append(full_t)
            weights_per_method[label].append(full_w)

    # --- drift forward and collect daily portfolio returns -----------------
    start = int(reb_idx[0])
    daily_dates = returns.dates[start + 1 :]
    z_blocks: List[np.ndarray] = []
    daily = {lb: [] for lb in labels}
    block_bounds = list(reb_idx) + [n_dates - 1]
    for k in range(len(reb_idx)):
        lo, hi = block_bounds[k] + 1, block_bounds[k + 1] + 1
        block = 1.0 + np.nan_to_num(raw[:, lo:hi], nan=0.0)
        growth = np.cumprod(block, axis=1)
        if k < len(reb_idx) - 1:
            z_blocks.append(growth[:, -1])
        for lb in labels:
            w0 = weights_per_method[lb][k]
            values = w0 @ growth
            path = np.concatenate([[1.0], values])
            daily[lb].append(path[1:] / path[:-1] - 1.0)

    daily_df = pd.DataFrame(
        {lb: np.concatenate(daily[lb]) for lb in labels},
        index=pd.DatetimeIndex(daily_dates),
    )

    mask = _period_end_mask(daily_dates, cfg.metric_frequency)
    period_df = pd.DataFrame(
        {lb: _compound(daily_df[lb].values, mask) for lb in labels},
        index=pd.DatetimeIndex(daily_dates[mask]),
    )

    # --- trails and metrics -------------------------------------------------
    reb_dates = returns.dates[reb_idx]
    z_mat = np.array(z_blocks) if z_blocks else np.zeros((0, len(all_ids)))
    trails: Dict[str, RebalanceTrail] = {}
    metrics: Dict[str, MetricsReport] = {}
    bench = period_df["MC"].values
    for lb in labels:
        w_mat = np.array(weights_per_method[lb])
        trails[lb] = RebalanceTrail(reb_dates, w_mat, z_mat, tuple(all_ids))
        perf = performance_stats(
            period_df[lb].values,
            cfg.risk_free,
            bench,
            periods_per_year=cfg.metric_periods_per_year,
        )
        n_pos = float(np.mean((w_mat > _POSITION_EPS).sum(axis=1)))
        n_eff = float(np.mean([herfindahl_neff(w)[1] for w in w_mat]))
        turn = annualized_turnover(
            trails[lb], z_mode=cfg.z_mode, periods_per_year=cfg.rebalances_per_year
        )
        metrics[lb] = MetricsReport(
            excess_return=perf["excess_return"],
            total_return=perf["total_return"],
            volatility=perf["volatility"],
            sharpe=perf["sharpe"],
            n_positions=n_pos,
            n_eff=n_eff,
            turnover=turn,
            rho=perf["rho"],
            beta=perf["beta"],
            alpha=perf["alpha"],
        )

    return BacktestReport(
        method_labels=tuple(labels),
        benchmark_label="MC",
        rebalance_dates=reb_dates,
        asset_ids=tuple(all_ids),
        trails=trails,
        target_trails={lb: np.array(targets_per_method[lb]) for lb in labels},
        daily_returns=daily_df,
        period_returns=period_df,
        metrics=metrics,
        pools=tuple(pools),
        covariance_tags=tuple(cov_tags),
    )


# ---------------------------------------------------------------------------
# Report output
# ---------------------------------------------------------------------------

def metrics_frame(report: BacktestReport) -> pd.DataFrame:
    """Metrics table in the standard row layout, one column per method."""
    rows = ["ER", "TR", "Vol", "SR", "No. Pos.", "N_eff", "Turnover", "rho", "beta", "alpha"]
    data = {lb: report.metrics[lb].as_dict() for lb in report.method_labels}
    return pd.DataFrame({lb: [data[lb][r] for r in rows] for lb in report.method_labels}, index=rows)


def write_backtest_report(report: BacktestReport, outdir) -> None:
    """Emit weight trails, return series and the metrics table (CSV + JSON)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for lb in report.method_labels:
        safe = re.sub(r"[^A-Za-z0-9_.-]", "_", lb)
        trail = report.trails[lb]
        df = pd.DataFrame(trail.weights, columns=list(report.asset_ids))
        df.insert(0, "date", pd.DatetimeIndex(trail.dates).strftime("%Y-%m-%d"))
        df.to_csv(outdir / f"weights_{safe}.csv", index=False)
    report.daily_returns.to_csv(outdir / "daily_returns.csv", index_label="date")
    report.period_returns.to_csv(outdir / "period_returns.csv", index_label="date")
    table = metrics_frame(report)
    table.to_csv(outdir / "metrics.csv", index_label="metric")
    with open(outdir / "metrics.json", "w") as fh:
        json.dump(
            {lb: report.metrics[lb].as_dict() for lb in report.method_labels},
            fh,
            indent=2,
            allow_nan=True,
        )


# ---------------------------------------------------------------------------
# Config file (documented TOML-like subset: [sections], key = value with
# strings, numbers, booleans and flat lists)
# ---------------------------------------------------------------------------

def _parse_scalar(text: str):
    text = text.strip()
    if text.startswith('"') and text.endswith('"'):
        return text[1:-1]
    if text.startswith("'") and text.endswith("'"):
        return text[1:-1]
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_file(path) -> Dict[str, Dict[str, object]]:
    """Parse the key/value config (TOML-like subset; see README schema)."""
    sections: Dict[str, Dict[str, object]] = {}
    current = sections.setdefault("", {})
    for raw_line in Path(path).read_text().splitlines():
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1].strip(), {})
            continue
        if "=" not in line:
            raise InputError(f"config line not understood: {raw_line!r}")
        key, _, value = line.partition("=")
        value = value.strip()
        if value.startswith("[") and value.endswith("]"):
            inner = value[1:-1].strip()
            items = [s for s in re.split(r"\s*,\s*", inner) if s] if inner else []
            current[key.strip()] = [_parse_scalar(s) for s in items]
        else:
            current[key.strip()] = _parse_scalar(value)
    return sections


def config_from_file(path) -> Tuple[str, Optional[str], BacktestConfig]:
    """Read a backtest config file; returns (prices_path, caps_path, cfg)."""
    sections = parse_config_file(path)
    data = sections.get("data", {})
    prices_path = data.get("prices")
    if not prices_path:
        raise InputError("config must set data.prices")
    caps_path = data.get("caps")

    bt = sections.get("backtest", {})
    method_names = bt.get("methods", ["aap", "saap", "mdp", "mvp", "1n", "mc"])
    k_star = float(bt.get("k_star_fraction", 0.05))
    methods = tuple(spec_from_string(str(m), k_star_fraction=k_star) for m in method_names)

    opt = sections.get("optimizer", {})
    optimizer = OptimizerConfig(
        position_cap=float(opt.get("position_cap", 0.03)),
        kkt_tolerance=float(opt.get("kkt_tolerance", 1e-8)),
        max_iterations=int(opt.get("max_iterations", 50_000)),
        algorithm=str(opt.get("algorithm", "projected_gradient")),
    )

    cl = sections.get("cleaning", {})
    cleaning: Optional[CleaningConfig]
    if cl.get("enabled", True):
        cleaning = CleaningConfig(
            holdout_fraction=float(cl.get("holdout_fraction", 0.10)),
            n_folds=int(cl.get("n_folds", 100)),
            seed=int(cl.get("seed", 0)),
            isotonic=bool(cl.get("isotonic", True)),
            preserve_trace=bool(cl.get("preserve_trace", True)),
        )
    else:
        cleaning = None

    pl = sections.get("pool", {})
    pool: Optional[PoolConfig]
    if pl.get("enabled", True):
        pool = PoolConfig(
            min_coverage_fraction=float(pl.get("min_coverage_fraction", 0.95)),
            liquidity_window_days=int(pl.get("liquidity_window_days", 63)),
            pool_size=int(pl.get("pool_size", 1000)),
        )
    else:
        pool = None

    cfg = BacktestConfig(
        lookback_days=int(bt.get("lookback_days", 1000)),
        lag_days=int(bt.get("lag_days", 2)),
        rebalance_months=int(bt.get("rebalance_months", 2)),
        methods=methods,
        optimizer=optimizer,
        cleaning=cleaning,
        pool=pool,
        metric_frequency=str(bt.get("metric_frequency", "weekly")),
        risk_free=float(bt.get("risk_free", 0.0)),
        z_mode=str(bt.get("z_mode", "portfolio")),
    )
    return str(prices_path), (str(caps_path) if caps_path else None), cfg
