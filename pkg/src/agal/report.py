"""Delimited figure datasets and their rendered companions.

Every report path writes machine-readable CSVs first and then renders a
matplotlib PNG next to each one. Rendering is deterministic for fixed
inputs (Agg backend, pinned metadata), so double runs byte-compare clean.
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional

import matplotlib

matplotlib.use("Agg")

import json

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .backtest import BacktestReport, metrics_frame
from .explore import ProjectionStudy

__all__ = [
    "write_sweep_outputs",
    "write_projection_outputs",
    "write_cleaning_demo",
    "render_backtest_report",
]

_PNG_META = {"Software": "agal"}


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=130, metadata=_PNG_META)
    plt.close(fig)


def _sweep_lines(ax, df: pd.DataFrame, column: str) -> None:
    for tag, style in (("raw", "o-"), ("cross_validated", "s--")):
        sub = df[df["cleaning"] == tag]
        if not sub.empty:
            ax.plot(sub["a"], sub[column], style, label=tag, ms=4)
    ax.set_xlabel("a")
    ax.grid(alpha=0.3)


def write_sweep_outputs(df: pd.DataFrame, outdir, render: bool = True) -> None:
    """fig1..fig4 CSVs (vol/beta/corr, shorts, concentration, speed) + PNGs."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    float_fmt = "%.12g"
    df[["a", "cleaning", "vol", "beta", "corr"]].to_csv(
        outdir / "fig1_vol_beta_corr.csv", index=False, float_format=float_fmt
    )
    df[["a", "cleaning", "shorts"]].to_csv(
        outdir / "fig2_shorts.csv", index=False, float_format=float_fmt
    )
    df[["a", "cleaning", "neff", "npos"]].to_csv(
        outdir / "fig3_neff.csv", index=False, float_format=float_fmt
    )
    df[["a", "cleaning", "gamma"]].to_csv(
        outdir / "fig4_gamma.csv", index=False, float_format=float_fmt
    )
    if not render:
        return

    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    for ax, col, title in zip(axes, ("vol", "beta", "corr"),
                              ("annualized vol", "beta to benchmark", "corr to benchmark")):
        _sweep_lines(ax, df, col)
        ax.set_title(title, fontsize=10)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, outdir / "fig1_vol_beta_corr.png")

    for name, col, ylabel in (
        ("fig2_shorts", "shorts", "target short positions"),
        ("fig3_neff", "neff", "effective number of positions"),
        ("fig4_gamma", "gamma", "target speed of change"),
    ):
        fig, ax = plt.subplots(figsize=(5.2, 3.6))
        _sweep_lines(ax, df, col)
        ax.set_ylabel(ylabel, fontsize=10)
        ax.legend(fontsize=8)
        fig.tight_layout()
        _save(fig, outdir / f"{name}.png")


def write_projection_outputs(study: ProjectionStudy, outdir, render: bool = True) -> None:
    """fig5 CSV (eigenvalue, squared overlap per rank) + summary + PNG."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    study.table.to_csv(outdir / "fig5_projection.csv", index=False, float_format="%.12g")
    summary = {
        "n": int(len(study.table)),
        "level_1_over_n": study.level,
        "band": study.band,
        "k_star": study.k_star,
        "n_skipped": study.n_skipped,
    }
    with open(outdir / "fig5_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    if not render:
        return
    tab = study.table[study.table["k"] >= 2]
    fig, ax = plt.subplots(figsize=(5.6, 4.0))
    ax.loglog(tab["eigenvalue"], tab["p_res"], ".", ms=3, alpha=0.7)
    ax.axhline(study.level, color="k", lw=0.8, ls=":", label="1/N")
    ax.axhline(study.band, color="r", lw=0.8, ls="--", label="(1+sqrt(2))/N")
    ax.set_xlabel("eigenvalue")
    ax.set_ylabel("squared overlap of residual predictor")
    ax.set_title(f"crossing at rank k* = {study.k_star}", fontsize=10)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, outdir / "fig5_projection.png")


def write_cleaning_demo(
    raw_eigs: np.ndarray,
    cv_eigs: np.ndarray,
    iso_eigs: np.ndarray,
    outdir,
    render: bool = True,
) -> None:
    """fig6: cleaned eigenvalues against the raw in-sample ones."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(
        {
            "k": np.arange(1, len(raw_eigs) + 1),
            "raw": raw_eigs,
            "cross_validated": cv_eigs,
            "isotonic": iso_eigs,
        }
    )
    df.to_csv(outdir / "fig6_cleaning.csv", index=False, float_format="%.12g")
    if not render:
        return
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    ax.plot(raw_eigs, raw_eigs, "r.", ms=3, label="no cleaning")
    ax.plot(raw_eigs, cv_eigs, "b.", ms=3, label="cross validated")
    ax.plot(raw_eigs, iso_eigs, "k.", ms=3, label="cv + isotonic")
    ax.set_xlabel("in-sample eigenvalue")
    ax.set_ylabel("cleaned eigenvalue")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, outdir / "fig6_cleaning.png")


def render_backtest_report(report: BacktestReport, outdir) -> None:
    """Equity curves and the headline metric bars, next to the CSV tables."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    curves = (1.0 + report.period_returns).cumprod()
    for lb in report.method_labels:
        ax.plot(curves.index, curves[lb], label=lb, lw=1.1)
    ax.set_ylabel("growth of 1")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, outdir / "equity_curves.png")

    table = metrics_frame(report)
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    for ax, row in zip(axes, ("Vol", "N_eff", "Turnover")):
        vals = table.loc[row]
        ax.bar(range(len(vals)), vals.values)
        ax.set_xticks(range(len(vals)))
        ax.set_xticklabels(vals.index, rotation=45, fontsize=8)
        ax.set_title(row, fontsize=10)
    fig.tight_layout()
    _save(fig, outdir / "metrics_summary.png")
