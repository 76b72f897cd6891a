"""Command-line entry point.

Subcommands: data (ingest/synth), cov, target, optimize, backtest, explore,
factors, repro. Every run writes a manifest next to its outputs recording
the resolved configuration, seeds and input digests. Exit codes: 0 success,
2 input errors, 3 convergence failures, 4 infeasibility.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from . import __version__
from .backtest import (
    BacktestConfig,
    config_from_file,
    run_backtest,
    spec_from_string,
    write_backtest_report,
)
from .data import (
    MarketCapPanel,
    PricePanel,
    ReturnsPanel,
    compute_returns,
    cross_sectional_normalize,
    generate_synthetic_universe,
    load_long_csv,
    panel_from_wide_csv,
    panel_to_wide_csv,
    panels_to_long_csv,
)
from .errors import AgalError, ConvergenceError, InfeasibleError, InputError
from .explore import ExploreConfig, projection_study, sweep_a
from .factors import FactorConfig, build_low_risk_factor, exposure_table
from .metrics import RebalanceTrail
from .optimizer import OptimizerConfig, solution_to_json, solve_tracking
from .parallel import resolve_jobs
from .spectrum import (
    CleaningConfig,
    covariance_from_json,
    covariance_to_csv,
    covariance_to_json,
    cross_validated_clean,
    empirical_covariance,
)
from .targets import named_target, target_from_json, target_to_csv, target_to_json

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3
EXIT_INFEASIBLE = 4


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return None


def write_manifest(out_path, command: str, args: Dict, inputs: List[str], seed, started: float) -> None:
    """One manifest per output location; data outputs stay byte-reproducible."""
    out_path = Path(out_path)
    if out_path.suffix:                       # file output: manifest sits next to it
        manifest_path = out_path.with_suffix(out_path.suffix + ".manifest.json")
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
    else:
        out_path.mkdir(parents=True, exist_ok=True)
        manifest_path = out_path / "manifest.json"
    config = {
        k: _jsonable(v)
        for k, v in args.items()
        if k not in ("func", "command", "data_command") and not k.startswith("_")
    }
    payload = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs if p and Path(p).exists()},
        "version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    with open(manifest_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _mc_series_from_caps(caps: MarketCapPanel, returns: ReturnsPanel) -> np.ndarray:
    """Daily return of the aggregate-cap (buy-and-hold market-cap) portfolio."""
    totals = np.nansum(caps.caps, axis=0)
    pos = np.searchsorted(caps.dates, returns.dates)
    series = totals[pos] / totals[pos - 1] - 1.0
    return series


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_data(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.data_command == "ingest":
        prices, caps_inline = load_long_csv(args.prices)
        caps = caps_inline
        if args.caps:
            cap_prices, caps_sep = load_long_csv(args.caps)
            caps = caps_sep if caps_sep is not None else None
            if caps is None:
                # a caps file may carry the caps in its price column
                caps = MarketCapPanel(cap_prices.asset_ids, cap_prices.dates, cap_prices.prices)
        panel_to_wide_csv(out / "prices.csv", prices)
        panel_to_wide_csv(out / "returns.csv", compute_returns(prices))
        if caps is not None:
            panel_to_wide_csv(out / "caps.csv", caps)
        write_manifest(out, "data ingest", vars(args), [args.prices, args.caps], None, started)
    else:
        prices, caps = generate_synthetic_universe(
            n_assets=args.n, n_days=args.t, n_factors=args.factors, seed=args.seed
        )
        panels_to_long_csv(out / "universe.csv", prices, caps)
        panel_to_wide_csv(out / "prices.csv", prices)
        panel_to_wide_csv(out / "returns.csv", compute_returns(prices))
        panel_to_wide_csv(out / "caps.csv", caps)
        write_manifest(out, "data synth", vars(args), [], args.seed, started)
    return EXIT_OK


def cmd_cov(args) -> int:
    started = time.time()
    returns = panel_from_wide_csv(args.input, kind="returns")
    if args.normalize:
        returns = cross_sectional_normalize(returns)
    n_dates = returns.n_dates
    window = (max(0, n_dates - args.window), n_dates) if args.window else None
    if args.clean == "cv":
        cfg = CleaningConfig(n_folds=args.folds, seed=args.seed)
        cov = cross_validated_clean(returns, window, cfg)
    else:
        cov = empirical_covariance(returns, window)
    covariance_to_json(args.out, cov)
    if args.matrix_csv:
        covariance_to_csv(args.matrix_csv, cov)
    write_manifest(args.out, "cov", vars(args), [args.input], args.seed, started)
    return EXIT_OK


def cmd_target(args) -> int:
    started = time.time()
    cov = covariance_from_json(args.cov)
    spec = spec_from_string(args.spec, a=args.a, b=args.b, c=args.c,
                            k_star_fraction=args.k_star_fraction)
    caps_vec = None
    if args.caps:
        caps_panel = panel_from_wide_csv(args.caps, kind="caps")
        index = {a: i for i, a in enumerate(caps_panel.asset_ids)}
        ids = cov.asset_ids or caps_panel.asset_ids
        missing = [a for a in ids if a not in index]
        if missing:
            raise InputError(f"caps file lacks assets {missing[:5]}")
        ffilled = pd.DataFrame(caps_panel.caps).ffill(axis=1).values
        caps_vec = np.array([ffilled[index[a], -1] for a in ids])
    target = named_target(spec, cov, caps=caps_vec)
    out = Path(args.out)
    target_to_json(out, target, cov.asset_ids)
    target_to_csv(out.with_suffix(".csv"), target, cov.asset_ids)
    write_manifest(out, "target", vars(args), [args.cov, args.caps], None, started)
    return EXIT_OK


def cmd_optimize(args) -> int:
    started = time.time()
    cov = covariance_from_json(args.cov)
    target = target_from_json(args.target)
    cfg = OptimizerConfig(
        position_cap=args.cap,
        kkt_tolerance=args.kkt_tolerance,
        max_iterations=args.max_iterations,
        algorithm=args.algorithm,
    )
    solution = solve_tracking(cov, target, cfg)
    out = Path(args.out)
    ids = cov.asset_ids or [f"A{i}" for i in range(cov.n)]
    pd.DataFrame({"asset_id": list(ids), "weight": solution.weights}).to_csv(out, index=False)
    solution_to_json(out.with_suffix(".json"), solution, ids)
    write_manifest(out, "optimize", vars(args), [args.cov, args.target], None, started)
    return EXIT_OK


def cmd_backtest(args) -> int:
    started = time.time()
    prices_path, caps_path, cfg = config_from_file(args.config)
    base = Path(args.config).parent
    prices_file = (base / prices_path) if not Path(prices_path).is_absolute() else Path(prices_path)
    prices, caps_inline = load_long_csv(prices_file)
    caps = caps_inline
    if caps_path:
        caps_file = (base / caps_path) if not Path(caps_path).is_absolute() else Path(caps_path)
        _, caps = load_long_csv(caps_file)
        if caps is None:
            cap_panel, _ = load_long_csv(caps_file)
            caps = MarketCapPanel(cap_panel.asset_ids, cap_panel.dates, cap_panel.prices)
    report = run_backtest(prices, caps, cfg)
    write_backtest_report(report, args.out)
    if args.plots:
        from .report import render_backtest_report

        render_backtest_report(report, args.out)
    write_manifest(args.out, "backtest", {"config": str(args.config), "plots": args.plots},
                   [prices_file, caps_path], None, started)
    return EXIT_OK


def cmd_explore(args) -> int:
    started = time.time()
    returns = panel_from_wide_csv(args.input, kind="returns")
    benchmark = None
    caps = None
    if args.caps:
        caps = panel_from_wide_csv(args.caps, kind="caps")
        benchmark = _mc_series_from_caps(caps, returns)
    cfg = ExploreConfig(
        n_boot=args.n_boot,
        sample_size=args.sample_size,
        window=args.window,
        cleaning_folds=args.folds,
        seed=args.seed,
    )
    jobs = resolve_jobs(args.jobs)
    table = sweep_a(returns, benchmark, cfg, jobs=jobs)
    proj_cfg = ExploreConfig(
        n_boot=args.projection_boot,
        sample_size=min(args.projection_sample_size, returns.n_assets),
        seed=args.seed + 1,
    )
    study = projection_study(returns, proj_cfg)

    from .report import write_projection_outputs, write_sweep_outputs

    write_sweep_outputs(table, args.out, render=args.plots)
    write_projection_outputs(study, args.out, render=args.plots)
    write_manifest(args.out, "explore", vars(args), [args.input, args.caps], args.seed, started)
    return EXIT_OK


def cmd_factors(args) -> int:
    started = time.time()
    returns = panel_from_wide_csv(args.returns, kind="returns")
    daily = pd.read_csv(Path(args.backtest) / "daily_returns.csv", parse_dates=["date"])
    daily = daily.set_index("date")
    if "MC" not in daily.columns:
        raise InputError("backtest report lacks the MC benchmark column")
    idx = pd.DatetimeIndex(returns.dates)
    mc_full = daily["MC"].reindex(idx).fillna(0.0).values

    cfg = FactorConfig()
    factors = {
        "LV": build_low_risk_factor(returns, mc_full, "low_vol", cfg),
        "LB": build_low_risk_factor(returns, mc_full, "low_beta", cfg),
    }
    table = exposure_table(daily, daily["MC"], factors, cfg)
    table.to_csv(args.out, float_format="%.6f", index_label="exposure")
    write_manifest(Path(args.out), "factors", vars(args),
                   [args.returns, str(Path(args.backtest) / "daily_returns.csv")], None, started)
    return EXIT_OK


def cmd_repro(args) -> int:
    """Regenerate every figure dataset on synthetic data at reduced scale."""
    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    jobs = resolve_jobs(args.jobs)

    from .report import write_cleaning_demo, write_projection_outputs, write_sweep_outputs

    # continuum sweep (figure 1-4 datasets)
    prices, caps = generate_synthetic_universe(150, 561, n_factors=9, seed=seed)
    returns = compute_returns(prices)
    benchmark = _mc_series_from_caps(caps, returns)
    sweep_cfg = ExploreConfig(
        n_boot=4, sample_size=100, window=200, cleaning_folds=25, seed=seed
    )
    table = sweep_a(returns, benchmark, sweep_cfg, jobs=jobs)
    write_sweep_outputs(table, out, render=args.plots)

    # residual-predictor projection (figure 5 dataset)
    prices2, _ = generate_synthetic_universe(240, 1601, n_factors=21, seed=seed + 1)
    returns2 = compute_returns(prices2)
    proj_cfg = ExploreConfig(n_boot=8, sample_size=200, seed=seed)
    study = projection_study(returns2, proj_cfg)
    write_projection_outputs(study, out, render=args.plots)

    # eigenvalue cleaning demo (figure 6 dataset)
    prices3, _ = generate_synthetic_universe(50, 101, n_factors=6, seed=seed + 2)
    returns3 = compute_returns(prices3)
    raw_cov = empirical_covariance(returns3)
    cv = cross_validated_clean(returns3, None, CleaningConfig(seed=seed, isotonic=False))
    iso = cross_validated_clean(returns3, None, CleaningConfig(seed=seed, isotonic=True))
    write_cleaning_demo(raw_cov.eigenvalues, cv.eigenvalues, iso.eigenvalues, out,
                        render=args.plots)

    write_manifest(out, "repro", vars(args), [], seed, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub) -> None:
    sub.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    sub.add_argument("--jobs", type=int, default=None,
                     help="worker count (default: AGAL_JOBS or available parallelism)")
    sub.add_argument("--verbose", action="store_true", help="chatty output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agal",
        description="Risk-based portfolio continuum and agnostic allocation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"agal {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p_data = subs.add_parser("data", help="ingest CSVs or synthesize a universe")
    data_subs = p_data.add_subparsers(dest="data_command", required=True)
    p_ingest = data_subs.add_parser("ingest", help="read long-format price/cap CSVs")
    p_ingest.add_argument("--prices", required=True, help="long CSV: date,asset_id,price[,market_cap]")
    p_ingest.add_argument("--caps", default=None, help="optional long CSV with market caps")
    p_ingest.add_argument("--out", default="data_out", help="output directory")
    _add_common(p_ingest)
    p_ingest.set_defaults(func=cmd_data)
    p_synth = data_subs.add_parser("synth", help="generate a synthetic factor universe")
    p_synth.add_argument("--n", type=int, default=250, help="number of assets (default 250)")
    p_synth.add_argument("--t", type=int, default=3500, help="number of price dates (default 3500)")
    p_synth.add_argument("--factors", type=int, default=13, help="factor count incl. market (default 13)")
    p_synth.add_argument("--out", default="synth_out", help="output directory")
    _add_common(p_synth)
    p_synth.set_defaults(func=cmd_data)

    p_cov = subs.add_parser("cov", help="estimate (and clean) a covariance matrix")
    p_cov.add_argument("--input", required=True, help="wide returns CSV")
    p_cov.add_argument("--window", type=int, default=None, help="trailing days (default: all)")
    p_cov.add_argument("--clean", choices=["none", "cv"], default="none")
    p_cov.add_argument("--folds", type=int, default=100, help="cross-validation folds (default 100)")
    p_cov.add_argument("--normalize", action="store_true",
                       help="cross-sectionally normalize the returns first")
    p_cov.add_argument("--out", default="cov.json", help="covariance JSON envelope")
    p_cov.add_argument("--matrix-csv", default=None, help="optionally also write the matrix CSV")
    _add_common(p_cov)
    p_cov.set_defaults(func=cmd_cov)

    p_target = subs.add_parser("target", help="build an unconstrained target portfolio")
    p_target.add_argument("--cov", required=True, help="covariance JSON from `agal cov`")
    p_target.add_argument("--spec", required=True,
                          help="mc|1n|ev|mvp|mdp|erc|aap|sparse-aap|continuum")
    p_target.add_argument("--a", type=float, default=None)
    p_target.add_argument("--b", type=float, default=None)
    p_target.add_argument("--c", type=float, default=None)
    p_target.add_argument("--k-star-fraction", type=float, default=0.05)
    p_target.add_argument("--caps", default=None, help="wide caps CSV (needed when c != 0)")
    p_target.add_argument("--out", default="target.json")
    _add_common(p_target)
    p_target.set_defaults(func=cmd_target)

    p_opt = subs.add_parser("optimize", help="solve the long-only tracking problem")
    p_opt.add_argument("--cov", required=True)
    p_opt.add_argument("--target", required=True, help="target JSON from `agal target`")
    p_opt.add_argument("--cap", type=float, default=0.03, help="single-position cap (default 0.03)")
    p_opt.add_argument("--kkt-tolerance", type=float, default=1e-8)
    p_opt.add_argument("--max-iterations", type=int, default=50_000)
    p_opt.add_argument("--algorithm", choices=["projected_gradient", "active_set"],
                       default="projected_gradient")
    p_opt.add_argument("--out", default="weights.csv")
    _add_common(p_opt)
    p_opt.set_defaults(func=cmd_optimize)

    p_bt = subs.add_parser("backtest", help="run the full backtest protocol")
    p_bt.add_argument("--config", required=True, help="backtest config file (see README)")
    p_bt.add_argument("--out", default="report", help="report directory")
    p_bt.add_argument("--plots", dest="plots", action="store_true", default=True)
    p_bt.add_argument("--no-plots", dest="plots", action="store_false")
    _add_common(p_bt)
    p_bt.set_defaults(func=cmd_backtest)

    p_ex = subs.add_parser("explore", help="bootstrap sweep over the continuum exponent")
    p_ex.add_argument("--input", required=True, help="wide returns CSV")
    p_ex.add_argument("--caps", default=None, help="wide caps CSV for the MC benchmark")
    p_ex.add_argument("--n-boot", type=int, default=10)
    p_ex.add_argument("--sample-size", type=int, default=250)
    p_ex.add_argument("--window", type=int, default=None, help="default 2 * sample size")
    p_ex.add_argument("--folds", type=int, default=100, help="cleaning folds in the sweep")
    p_ex.add_argument("--projection-sample-size", type=int, default=500)
    p_ex.add_argument("--projection-boot", type=int, default=20)
    p_ex.add_argument("--out", default="figures_data")
    p_ex.add_argument("--plots", dest="plots", action="store_true", default=True)
    p_ex.add_argument("--no-plots", dest="plots", action="store_false")
    _add_common(p_ex)
    p_ex.set_defaults(func=cmd_explore)

    p_fac = subs.add_parser("factors", help="low-risk factor exposures of backtest methods")
    p_fac.add_argument("--returns", required=True, help="wide returns CSV (same universe)")
    p_fac.add_argument("--backtest", required=True, help="backtest report directory")
    p_fac.add_argument("--out", default="exposures.csv")
    _add_common(p_fac)
    p_fac.set_defaults(func=cmd_factors)

    p_rep = subs.add_parser("repro", help="regenerate all figure datasets on synthetic data")
    p_rep.add_argument("--out", default="repro_out")
    p_rep.add_argument("--plots", dest="plots", action="store_true", default=True)
    p_rep.add_argument("--no-plots", dest="plots", action="store_false")
    _add_common(p_rep)
    p_rep.set_defaults(func=cmd_repro)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"error (infeasible): {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"error (convergence): {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (InputError, FileNotFoundError, AgalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
