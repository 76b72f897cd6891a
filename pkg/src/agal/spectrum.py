"""Covariance estimation, eigen-decomposition, matrix powers, and
cross-validated eigenvalue cleaning with isotonic smoothing.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import isotonic_regression

from .data import ReturnsPanel
from .errors import CleaningFailedError, InputError, SingularMatrixError

__all__ = [
    "SpectralCovariance",
    "CleaningConfig",
    "empirical_covariance",
    "eigendecompose",
    "matrix_power",
    "cross_validated_clean",
    "covariance_to_csv",
    "covariance_to_json",
    "covariance_from_json",
]

EIGEN_FLOOR = 1e-10          # relative floor for negative matrix powers
_SYM_TOL = 1e-10


def eigendecompose(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (non-increasing) and orthonormal eigenvectors (columns).

    The input must be symmetric to 1e-10 (relative to its largest entry).
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InputError("eigendecompose: matrix must be square")
    scale = max(1.0, float(np.abs(matrix).max()))
    if np.abs(matrix - matrix.T).max() > _SYM_TOL * scale:
        raise InputError("eigendecompose: matrix is not symmetric")
    sym = 0.5 * (matrix + matrix.T)
    vals, vecs = np.linalg.eigh(sym)
    return vals[::-1].copy(), vecs[:, ::-1].copy()


@dataclass(frozen=True)
class SpectralCovariance:
    """Symmetric covariance with its cached eigen-decomposition.

    Eigenvalues are sorted non-increasing; eigenvector k is column k.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    cleaning_tag: str = "raw"                    # "raw" | "cross_validated"
    asset_ids: Optional[Tuple[str, ...]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("matrix", "eigenvalues", "eigenvectors"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.asset_ids is not None:
            object.__setattr__(self, "asset_ids", tuple(self.asset_ids))

    @classmethod
    def from_matrix(
        cls,
        matrix: np.ndarray,
        cleaning_tag: str = "raw",
        asset_ids: Optional[Sequence[str]] = None,
        meta: Optional[dict] = None,
    ) -> "SpectralCovariance":
        vals, vecs = eigendecompose(matrix)
        return cls(
            0.5 * (np.asarray(matrix, float) + np.asarray(matrix, float).T),
            vals,
            vecs,
            cleaning_tag,
            tuple(asset_ids) if asset_ids is not None else None,
            dict(meta or {}),
        )

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def vols(self) -> np.ndarray:
        """Per-asset volatilities sqrt(C_ii)."""
        return np.sqrt(np.clip(np.diag(self.matrix), 0.0, None))

    def scaled(self, factor: float) -> "SpectralCovariance":
        return SpectralCovariance(
            self.matrix * factor,
            self.eigenvalues * factor,
            self.eigenvectors,
            self.cleaning_tag,
            self.asset_ids,
            dict(self.meta),
        )


def matrix_power(cov: SpectralCovariance, exponent: float, floor: bool = True) -> np.ndarray:
    """Spectral power sum_k lambda_k^exponent u_k u_k'.

    Negative exponents on a spectrum with lambda_min <= 0 either floor the
    eigenvalues at EIGEN_FLOOR * lambda_max (floor=True) or raise.
    """
    lam = cov.eigenvalues
    if exponent == 0.0:
        return np.eye(cov.n)
    if exponent < 0:
        if lam[-1] <= 0.0:
            if not floor:
                raise SingularMatrixError(
                    f"matrix_power: exponent {exponent} needs a positive spectrum "
                    f"(lambda_min = {lam[-1]:.3e})"
                )
            lam = np.maximum(lam, EIGEN_FLOOR * max(lam[0], 0.0) + 1e-300)
    elif exponent != round(exponent):
        lam = np.clip(lam, 0.0, None)        # PSD up to rounding
    u = cov.eigenvectors
    return (u * lam**exponent) @ u.T


def power_apply(cov: SpectralCovariance, exponent: float, vec: np.ndarray, floor: bool = True) -> np.ndarray:
    """C^exponent @ vec without forming the matrix (O(N^2))."""
    lam = cov.eigenvalues
    if exponent < 0:
        if lam[-1] <= 0.0:
            if not floor:
                raise SingularMatrixError("power_apply: non-positive spectrum")
            lam = np.maximum(lam, EIGEN_FLOOR * max(lam[0], 0.0) + 1e-300)
    elif exponent != round(exponent):
        lam = np.clip(lam, 0.0, None)
    u = cov.eigenvectors
    return u @ (lam**exponent * (u.T @ vec))


def empirical_covariance(
    returns: ReturnsPanel,
    window: Optional[Tuple[int, int]] = None,
) -> SpectralCovariance:
    """Second-moment covariance (1/T) sum_t r(t) r(t)' over the window.

    Daily means are not subtracted. Missing returns count as zero. The
    window is a half-open index pair on the date axis; None means all dates.
    """
    t0, t1 = (0, returns.n_dates) if window is None else window
    if t0 < 0 or t1 > returns.n_dates or t1 - t0 < 2:
        raise InputError(f"empirical_covariance: invalid window [{t0}, {t1})")
    r = returns.filled()[:, t0:t1]
    t_w = t1 - t0
    mat = (r @ r.T) / t_w
    mat = 0.5 * (mat + mat.T)
    return SpectralCovariance.from_matrix(
        mat,
        cleaning_tag="raw",
        asset_ids=returns.asset_ids,
        meta={"window": [int(t0), int(t1)], "n_days": int(t_w)},
    )


@dataclass(frozen=True)
class CleaningConfig:
    """Cross-validation settings for eigenvalue cleaning."""

    holdout_fraction: float = 0.10
    n_folds: int = 100
    seed: int = 0
    isotonic: bool = True
    preserve_trace: bool = True
    standardize_assets: bool = False     # per-asset vol scaling before cleaning

    def __post_init__(self):
        if not 0.0 < self.holdout_fraction < 0.5:
            raise InputError("holdout_fraction must be in (0, 0.5)")
        if self.n_folds < 1:
            raise InputError("n_folds must be >= 1")


def cross_validated_clean(
    returns: ReturnsPanel,
    window: Optional[Tuple[int, int]] = None,
    cfg: CleaningConfig = CleaningConfig(),
) -> SpectralCovariance:
    """Covariance with eigenvalues replaced by cross-validated estimates.

    For each fold a random holdout of days is withheld; the in-sample
    eigenvectors' variances on the holdout give out-of-sample eigenvalue
    estimates, averaged across folds by rank. With ``isotonic`` a
    non-decreasing map from in-sample to cleaned eigenvalues is fitted and
    evaluated at the full-sample spectrum, which imposes the full-sample
    eigenvalue hierarchy. Full-sample eigenvectors are kept throughout.
    """
    t0, t1 = (0, returns.n_dates) if window is None else window
    t_w = t1 - t0
    if t_w < 10:
        raise InputError("cross_validated_clean: window must span >= 10 days")
    if returns.n_assets < 2:
        raise InputError("cross_validated_clean: need at least 2 assets")

    r = returns.filled()[:, t0:t1]
    if cfg.standardize_assets:
        scale = r.std(axis=1, ddof=0)
        scale[scale == 0.0] = 1.0
        r = r / scale[:, None]
    else:
        scale = None

    n = returns.n_assets
    gram = r @ r.T
    t_out = int(np.ceil(cfg.holdout_fraction * t_w))
    t_in = t_w - t_out

    lam_out_sum = np.zeros(n)
    lam_in_sum = np.zeros(n)
    used = 0
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_folds)
    for child in streams:
        fold_rng = np.random.default_rng(child)
        idx = fold_rng.choice(t_w, size=t_out, replace=False)
        r_out = r[:, idx]
        gram_out = r_out @ r_out.T
        if np.trace(gram_out) <= 0.0:
            continue                      # degenerate holdout, skip the fold
        cov_in = (gram - gram_out) / t_in
        vals_in, vecs_in = np.linalg.eigh(cov_in)
        vals_in = vals_in[::-1]
        vecs_in = vecs_in[:, ::-1]
        # out-of-sample variance of each in-sample mode
        lam_hat = np.einsum("ji,jk,ki->i", vecs_in, gram_out, vecs_in) / t_out
        lam_out_sum += lam_hat
        lam_in_sum += vals_in
        used += 1
    if used == 0:
        raise CleaningFailedError("cross_validated_clean: all folds degenerate")

    lam_out = lam_out_sum / used
    lam_in = lam_in_sum / used

    full = (gram / t_w + (gram / t_w).T) * 0.5
    lam_full, u_full = eigendecompose(full)

    if cfg.isotonic:
        x = lam_in[::-1]                       # ascending in-sample eigenvalues
        y = lam_out[::-1]
        fitted = isotonic_regression(y, increasing=True).x
        lam_clean = np.interp(lam_full, x, fitted)
    else:
        lam_clean = lam_out.copy()

    lam_clean = np.maximum(lam_clean, 1e-12 * max(lam_clean.max(), 0.0) + 1e-300)
    if cfg.preserve_trace:
        lam_clean = lam_clean * (np.trace(full) / lam_clean.sum())

    order = np.argsort(-lam_clean, kind="stable")
    lam_clean = lam_clean[order]
    u_sorted = u_full[:, order]
    matrix = (u_sorted * lam_clean) @ u_sorted.T
    if scale is not None:
        matrix = matrix * np.outer(scale, scale)
        matrix = 0.5 * (matrix + matrix.T)
        return SpectralCovariance.from_matrix(
            matrix,
            cleaning_tag="cross_validated",
            asset_ids=returns.asset_ids,
            meta={"window": [int(t0), int(t1)], "folds_used": used, "config": _cfg_dict(cfg)},
        )
    matrix = 0.5 * (matrix + matrix.T)
    return SpectralCovariance(
        matrix,
        lam_clean,
        u_sorted,
        cleaning_tag="cross_validated",
        asset_ids=returns.asset_ids,
        meta={"window": [int(t0), int(t1)], "folds_used": used, "config": _cfg_dict(cfg)},
    )


def _cfg_dict(cfg: CleaningConfig) -> dict:
    return {
        "holdout_fraction": cfg.holdout_fraction,
        "n_folds": cfg.n_folds,
        "seed": cfg.seed,
        "isotonic": cfg.isotonic,
        "preserve_trace": cfg.preserve_trace,
        "standardize_assets": cfg.standardize_assets,
    }


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def covariance_to_csv(path, cov: SpectralCovariance) -> None:
    """Matrix as CSV: header row of asset ids, then N rows."""
    ids = list(cov.asset_ids) if cov.asset_ids else [f"A{i}" for i in range(cov.n)]
    pd.DataFrame(cov.matrix, columns=ids).to_csv(path, index=False)


def covariance_to_json(path, cov: SpectralCovariance) -> None:
    ids = list(cov.asset_ids) if cov.asset_ids else [f"A{i}" for i in range(cov.n)]
    payload = {
        "asset_ids": ids,
        "cleaning_tag": cov.cleaning_tag,
        "eigenvalues": cov.eigenvalues.tolist(),
        "window": cov.meta.get("window"),
        "config": cov.meta.get("config"),
        "matrix": cov.matrix.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def covariance_from_json(path) -> SpectralCovariance:
    with open(path) as fh:
        payload = json.load(fh)
    return SpectralCovariance.from_matrix(
        np.asarray(payload["matrix"], dtype=float),
        cleaning_tag=payload.get("cleaning_tag", "raw"),
        asset_ids=payload.get("asset_ids"),
        meta={"window": payload.get("window"), "config": payload.get("config")},
    )
