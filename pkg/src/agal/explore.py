"""Bootstrap exploration of the risk-based continuum.

``sweep_a`` reproduces the statistical study behind the figure set:
portfolio volatility/beta/correlation, target short counts, concentration
and target turnover speed as functions of the covariance exponent ``a``
(b = c = 0), bootstrap-averaged, for raw and cross-validated covariances.

``projection_study`` measures the squared overlap of the market-orthogonal
uniform predictor with every eigenmode and finds where it falls below the
random-overlap band (1 + sqrt(2)) / N.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import isotonic_regression

from .data import ReturnsPanel
from .errors import DegenerateResidualError, InputError
from .metrics import RebalanceTrail, herfindahl_neff, portfolio_speed
from .optimizer import OptimizerConfig, solve_tracking
from .parallel import parallel_map
from .spectrum import CleaningConfig, cross_validated_clean, empirical_covariance
from .targets import continuum_target, residual_projection
from .backtest import _month_end_indices

__all__ = ["ExploreConfig", "ProjectionStudy", "sweep_a", "projection_study"]

_DEFAULT_A_GRID = tuple(np.round(np.arange(0.0, 1.01, 0.1), 10))


@dataclass(frozen=True)
class ExploreConfig:
    n_boot: int = 10
    sample_size: int = 250
    a_grid: Tuple[float, ...] = _DEFAULT_A_GRID
    window: Optional[int] = None              # None -> 2 * sample_size
    lag_days: int = 2
    rebalance_months: int = 2
    cleanings: Tuple[str, ...] = ("raw", "cross_validated")
    cleaning_folds: int = 100
    holdout_fraction: float = 0.10
    position_cap: float = 1.0                 # plain long-only for the sweep
    seed: int = 0

    def __post_init__(self):
        if self.n_boot < 1 or self.sample_size < 2:
            raise InputError("need n_boot >= 1 and sample_size >= 2")
        if any(a < 0.0 or a > 1.5 for a in self.a_grid):
            raise InputError("a_grid must lie within [0, 1.5]")
        bad = set(self.cleanings) - {"raw", "cross_validated"}
        if bad:
            raise InputError(f"unknown cleaning tags {sorted(bad)}")

    @property
    def window_days(self) -> int:
        return self.window if self.window is not None else 2 * self.sample_size


def _daily_portfolio_returns(weights: np.ndarray, growth_blocks: List[np.ndarray]) -> np.ndarray:
    """Concatenate buy-and-hold daily returns across rebalance blocks."""
    out = []
    for w0, growth in zip(weights, growth_blocks):
        values = w0 @ growth
        path = np.concatenate([[1.0], values])
        out.append(path[1:] / path[:-1] - 1.0)
    return np.concatenate(out)


def _sweep_one_sample(task) -> Dict[Tuple[float, str], Dict[str, float]]:
    """Sweep statistics for one bootstrap sample (picklable worker)."""
    returns, cfg, b, sample_seq, reb_idx, bench_tail = task
    raw = returns.filled()
    rng = np.random.default_rng(sample_seq)
    ids_idx = np.sort(rng.choice(returns.n_assets, cfg.sample_size, replace=False))
    sample_ids = tuple(returns.asset_ids[i] for i in ids_idx)
    sub = raw[ids_idx]
    t_w = cfg.window_days
    opt_cfg = OptimizerConfig(position_cap=cfg.position_cap)

    block_bounds = list(reb_idx) + [returns.n_dates - 1]
    growth_blocks = []
    for k in range(len(reb_idx)):
        lo, hi = block_bounds[k] + 1, block_bounds[k + 1] + 1
        growth_blocks.append(np.cumprod(1.0 + sub[:, lo:hi], axis=1))

    covs: Dict[str, list] = {tag: [] for tag in cfg.cleanings}
    for k, reb in enumerate(reb_idx):
        t1 = int(reb) - cfg.lag_days
        t0 = t1 - t_w
        win = ReturnsPanel(sample_ids, returns.dates[t0:t1], sub[:, t0:t1])
        for tag in cfg.cleanings:
            if tag == "raw":
                covs[tag].append(empirical_covariance(win))
            else:
                fold_seed = int(
                    np.random.SeedSequence((cfg.seed, b, k)).generate_state(1)[0]
                )
                covs[tag].append(
                    cross_validated_clean(
                        win,
                        None,
                        CleaningConfig(
                            holdout_fraction=cfg.holdout_fraction,
                            n_folds=cfg.cleaning_folds,
                            seed=fold_seed,
                        ),
                    )
                )

    db = bench_tail - bench_tail.mean()
    var_b = float(db @ db)
    out: Dict[Tuple[float, str], Dict[str, float]] = {}
    for tag in cfg.cleanings:
        for a in cfg.a_grid:
            tgts, sols = [], []
            for cov in covs[tag]:
                target = continuum_target(cov, float(a))
                tgts.append(target.weights)
                sols.append(solve_tracking(cov, target, opt_cfg).weights)
            tgt_mat = np.array(tgts)
            sol_mat = np.array(sols)
            trail = RebalanceTrail(
                returns.dates[reb_idx],
                tgt_mat,
                np.ones((len(reb_idx) - 1, cfg.sample_size)),
            )
            series = _daily_portfolio_returns(sol_mat, growth_blocks)
            ds = series - series.mean()
            out[(float(a), tag)] = {
                "shorts": float((tgt_mat < 0).sum(axis=1).mean()),
                "neff": float(np.mean([herfindahl_neff(w)[1] for w in sol_mat])),
                "npos": float((sol_mat > 1e-10).sum(axis=1).mean()),
                "gamma": portfolio_speed(trail),
                "vol": float(series.std(ddof=1) * np.sqrt(252.0)),
                "beta": float(ds @ db) / var_b,
                "corr": float(ds @ db) / float(np.sqrt((ds @ ds) * var_b)),
            }
    return out


def sweep_a(
    returns: ReturnsPanel,
    benchmark: Optional[np.ndarray] = None,
    cfg: ExploreConfig = ExploreConfig(),
    jobs: int = 1,
) -> pd.DataFrame:
    """Bootstrap-averaged sweep statistics per (a, cleaning).

    ``benchmark`` is a daily return series aligned to the panel's dates
    (typically the market-cap portfolio); without one, the equal-weight
    cross-sectional mean return stands in. Samples run independently, so
    the result does not depend on ``jobs``.
    """
    n_universe = returns.n_assets
    if cfg.sample_size > n_universe:
        raise InputError("sample_size exceeds universe size")
    t_w = cfg.window_days
    first_possible = t_w + cfg.lag_days
    month_ends = _month_end_indices(returns.dates)
    reb_idx = month_ends[month_ends >= first_possible][:: cfg.rebalance_months]
    reb_idx = reb_idx[reb_idx < returns.n_dates - 1]
    if len(reb_idx) < 2:
        raise InputError(
            f"not enough history: need two rebalances after {first_possible} days"
        )
    if benchmark is None:
        benchmark = np.nanmean(returns.returns, axis=0)
    benchmark = np.asarray(benchmark, dtype=float)
    if benchmark.shape != (returns.n_dates,):
        raise InputError("benchmark series must align with the panel dates")
    bench_tail = benchmark[int(reb_idx[0]) + 1 :]

    sample_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_boot)
    tasks = [
        (returns, cfg, b, seq, reb_idx, bench_tail)
        for b, seq in enumerate(sample_seeds)
    ]
    results = parallel_map(_sweep_one_sample, tasks, jobs=jobs)

    rows = []
    for tag in cfg.cleanings:
        for a in cfg.a_grid:
            key = (float(a), tag)
            rows.append(
                {
                    "a": float(a),
                    "cleaning": tag,
                    **{
                        metric: float(np.mean([r[key][metric] for r in results]))
                        for metric in ("vol", "beta", "corr", "shorts", "neff", "npos", "gamma")
                    },
                }
            )
    return pd.DataFrame(rows).sort_values(["cleaning", "a"]).reset_index(drop=True)


@dataclass(frozen=True)
class ProjectionStudy:
    table: pd.DataFrame          # rank k, mean eigenvalue, mean P_res
    level: float                 # 1 / N
    band: float                  # (1 + sqrt(2)) / N
    k_star: int                  # last rank whose fitted overlap clears the band
    n_skipped: int


def projection_study(
    returns: ReturnsPanel,
    cfg: ExploreConfig = ExploreConfig(sample_size=500),
) -> ProjectionStudy:
    """Bootstrap-averaged (eigenvalue, squared residual overlap) pairs.

    The crossing index is read off an antitonic (non-increasing) fit of the
    averaged overlaps, which imposes the regular decrease expected of the
    structured modes before reading where it falls below the band.
    """
    n = cfg.sample_size
    if n > returns.n_assets:
        raise InputError("sample_size exceeds universe size")
    raw = returns.filled()
    root = np.random.SeedSequence(cfg.seed)
    acc_p = np.zeros(n)
    acc_lam = np.zeros(n)
    used = 0
    skipped = 0
    for sample_seq in root.spawn(cfg.n_boot):
        rng = np.random.default_rng(sample_seq)
        ids_idx = np.sort(rng.choice(returns.n_assets, n, replace=False))
        sub = ReturnsPanel(
            tuple(returns.asset_ids[i] for i in ids_idx), returns.dates, raw[ids_idx]
        )
        cov = empirical_covariance(sub)
        try:
            p = residual_projection(cov)
        except DegenerateResidualError:
            skipped += 1
            continue
        acc_p += p
        acc_lam += cov.eigenvalues
        used += 1
    if used == 0:
        raise DegenerateResidualError("projection_study: every sample degenerate")

    p_mean = acc_p / used
    lam_mean = acc_lam / used
    level = 1.0 / n
    band = (1.0 + np.sqrt(2.0)) / n

    tail = p_mean[1:]
    fitted = isotonic_regression(tail[::-1], increasing=True).x[::-1]
    below = np.flatnonzero(fitted < band)
    k_star = int(below[0]) + 1 if below.size else n
    # rank k_star is 1-based: the last mode at or above the band
    table = pd.DataFrame(
        {
            "k": np.arange(1, n + 1),
            "eigenvalue": lam_mean,
            "p_res": p_mean,
        }
    )
    return ProjectionStudy(table, level, band, k_star, skipped)
