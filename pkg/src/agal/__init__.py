"""Risk-based portfolio continuum and agnostic allocation toolkit."""

__version__ = "0.1.0"

from .data import (
    MarketCapPanel,
    PoolConfig,
    PricePanel,
    ReturnsPanel,
    apply_pool_filter,
    compute_returns,
    cross_sectional_normalize,
    generate_synthetic_universe,
)
from .spectrum import (
    CleaningConfig,
    SpectralCovariance,
    cross_validated_clean,
    eigendecompose,
    empirical_covariance,
    matrix_power,
)
from .targets import (
    TargetPortfolio,
    TargetSpec,
    continuum_target,
    erc_weights,
    mode_risk_decomposition,
    named_target,
    residual_projection,
    sparse_aap_target,
)
from .optimizer import ConstrainedPortfolio, OptimizerConfig, solve_tracking, verify_kkt
from .metrics import (
    MetricsReport,
    RebalanceTrail,
    annualized_turnover,
    herfindahl_neff,
    performance_stats,
    portfolio_speed,
)
from .backtest import BacktestConfig, BacktestReport, drift_weights, run_backtest
from .explore import ExploreConfig, projection_study, sweep_a
from .factors import FactorConfig, FactorSeries, build_low_risk_factor, exposure_table, rank_signal

__all__ = [name for name in dir() if not name.startswith("_")]
