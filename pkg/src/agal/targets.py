"""Unconstrained target portfolios.

The whole family is w ~ C^{-a} diag(vol)^b diag(cap)^c 1 scaled to a 100%
net exposure, with the named methods as special points:

    market cap (0,0,1)   equal weight (0,0,0)   equal vol (0,-1,0)
    min variance (1,0,0) max diversification (1,1,0)  agnostic (1/2,0,0)

plus equal-risk-contribution (fixed point, own solver) and the eigen-sparse
variant that truncates the agnostic target to the top modes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import (
    ConvergenceError,
    DegenerateResidualError,
    DegenerateScalingError,
    InputError,
)
from .spectrum import SpectralCovariance, power_apply

__all__ = [
    "TargetSpec",
    "TargetPortfolio",
    "NAMED_EXPONENTS",
    "continuum_target",
    "named_target",
    "erc_weights",
    "mode_risk_decomposition",
    "residual_projection",
    "sparse_aap_target",
    "target_to_csv",
    "target_to_json",
    "target_from_json",
]

# (a, b, c) exponents of the explicit-weighting methods
NAMED_EXPONENTS = {
    "market_cap": (0.0, 0.0, 1.0),
    "equal_weight": (0.0, 0.0, 0.0),
    "equal_vol": (0.0, -1.0, 0.0),
    "mvp": (1.0, 0.0, 0.0),
    "mdp": (1.0, 1.0, 0.0),
    "aap": (0.5, 0.0, 0.0),
}

METHOD_LABELS = {
    "market_cap": "MC",
    "equal_weight": "1/N",
    "equal_vol": "EV",
    "mvp": "MVP",
    "mdp": "MDP",
    "erc": "ERC",
    "aap": "AAP",
    "sparse_aap": "S-AAP",
    "continuum": "continuum",
}


@dataclass(frozen=True)
class TargetSpec:
    """Recipe for a target portfolio: a named method or raw (a, b, c)."""

    kind: str = "aap"
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    k_star_fraction: float = 0.05

    def __post_init__(self):
        known = set(NAMED_EXPONENTS) | {"erc", "sparse_aap", "continuum"}
        if self.kind not in known:
            raise InputError(f"unknown target kind {self.kind!r}; choose from {sorted(known)}")
        for v in (self.a, self.b, self.c):
            if not np.isfinite(v):
                raise InputError("continuum exponents must be finite")
        if not 0.0 < self.k_star_fraction <= 1.0:
            raise InputError("k_star_fraction must be in (0, 1]")

    @property
    def label(self) -> str:
        if self.kind == "continuum":
            return f"({self.a:g},{self.b:g},{self.c:g})"
        return METHOD_LABELS[self.kind]

    def exponents(self):
        if self.kind == "continuum":
            return self.a, self.b, self.c
        return NAMED_EXPONENTS[self.kind]


@dataclass(frozen=True)
class TargetPortfolio:
    """Unconstrained weights (may be short), 100% net exposure."""

    weights: np.ndarray
    omega: float
    spec: TargetSpec
    risk_contributions: np.ndarray       # per-mode lambda_k (u_k . w)^2

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        rc = np.ascontiguousarray(self.risk_contributions, dtype=float)
        rc.setflags(write=False)
        object.__setattr__(self, "risk_contributions", rc)
        if abs(w.sum() - 1.0) > 1e-8:
            raise InputError(f"target weights must sum to 1, got {w.sum():.3e}")

    @property
    def n_short(self) -> int:
        return int((self.weights < 0).sum())

    @property
    def total_risk(self) -> float:
        return float(self.risk_contributions.sum())


def _finalize(raw: np.ndarray, spec: TargetSpec, cov: SpectralCovariance) -> TargetPortfolio:
    denom = float(raw.sum())
    scale = float(np.abs(raw).sum())
    if scale == 0.0 or abs(denom) <= 1e-12 * scale:
        raise DegenerateScalingError(
            "target has no meaningful 100% net-exposure normalization "
            f"(net {denom:.3e} vs gross {scale:.3e})"
        )
    omega = 1.0 / denom
    w = raw * omega
    rc = mode_risk_decomposition(w, cov)
    return TargetPortfolio(w, omega, spec, rc)


def continuum_target(
    cov: SpectralCovariance,
    a: float,
    b: float = 0.0,
    c: float = 0.0,
    sigma: Optional[np.ndarray] = None,
    caps: Optional[np.ndarray] = None,
    predictor: Optional[np.ndarray] = None,
    spec: Optional[TargetSpec] = None,
) -> TargetPortfolio:
    """Target w ~ C^{-a} diag(sigma)^b diag(caps)^c p, net exposure 100%.

    ``predictor`` replaces the uniform vector (identity predictor
    covariance); volatilities default to sqrt(diag(C)).
    """
    n = cov.n
    p = np.ones(n) if predictor is None else np.asarray(predictor, dtype=float)
    if p.shape != (n,):
        raise InputError("predictor must have one entry per asset")
    if b != 0.0:
        b_sigma = cov.vols if sigma is None else np.asarray(sigma, dtype=float)
        if np.any(b_sigma <= 0.0):
            raise InputError("volatilities must be positive when b != 0")
        p = p * b_sigma**b
    if c != 0.0:
        if caps is None:
            raise InputError("market caps required when c != 0")
        caps = np.asarray(caps, dtype=float)
        if np.any(caps <= 0.0):
            raise InputError("market caps must be positive when c != 0")
        p = p * caps**c
    raw = power_apply(cov, -a, p) if a != 0.0 else p
    if spec is None:
        spec = TargetSpec("continuum", a=a, b=b, c=c)
    return _finalize(raw, spec, cov)


def named_target(
    spec: TargetSpec,
    cov: SpectralCovariance,
    sigma: Optional[np.ndarray] = None,
    caps: Optional[np.ndarray] = None,
) -> TargetPortfolio:
    """Dispatch a TargetSpec to its construction."""
    if spec.kind == "erc":
        w = erc_weights(cov)
        return TargetPortfolio(w, 1.0, spec, mode_risk_decomposition(w, cov))
    if spec.kind == "sparse_aap":
        return sparse_aap_target(cov, spec.k_star_fraction, spec=spec)
    a, b, c = spec.exponents()
    return continuum_target(cov, a, b, c, sigma=sigma, caps=caps, spec=spec)


def erc_weights(
    cov: SpectralCovariance,
    tol: float = 1e-10,
    max_sweeps: int = 10_000,
) -> np.ndarray:
    """Equal-risk-contribution weights: w_i (Cw)_i equal across assets.

    Cyclical exact coordinate updates (each update solves its scalar
    quadratic in closed form). Converges when the max relative spread of
    contributions falls below ``tol``.
    """
    if cov.eigenvalues[-1] <= 0.0:
        raise InputError("erc_weights: covariance must be positive definite")
    c = cov.matrix
    n = cov.n
    w = 1.0 / cov.vols
    w /= w.sum()
    cw = c @ w
    for sweep in range(max_sweeps):
        lam = (w @ cw) / n
        for i in range(n):
            resid = cw[i] - c[i, i] * w[i]
            new_wi = (-resid + np.sqrt(resid * resid + 4.0 * c[i, i] * lam)) / (2.0 * c[i, i])
            delta = new_wi - w[i]
            if delta != 0.0:
                cw += c[:, i] * delta
                w[i] = new_wi
        contrib = w * cw
        mean_c = contrib.mean()
        spread = float(np.abs(contrib - mean_c).max() / mean_c)
        if spread <= tol:
            return w / w.sum()
    raise ConvergenceError(
        f"erc_weights: contribution spread {spread:.3e} > {tol:.1e} "
        f"after {max_sweeps} sweeps",
        residual=spread,
        iterations=max_sweeps,
    )


def mode_risk_decomposition(target, cov: SpectralCovariance) -> np.ndarray:
    """Per-eigenmode risk lambda_k (u_k . w)^2; sums to w' C w."""
    w = target.weights if isinstance(target, TargetPortfolio) else np.asarray(target, float)
    proj = cov.eigenvectors.T @ w
    return cov.eigenvalues * proj**2


def residual_projection(cov: SpectralCovariance) -> np.ndarray:
    """Squared overlaps of the market-orthogonal uniform predictor.

    Removes the top-mode component of the uniform vector, normalizes the
    remainder, and returns its squared projection on every mode (index 0,
    the market mode, is exactly 0; the rest sums to 1).
    """
    n = cov.n
    ones = np.full(n, 1.0 / np.sqrt(n))
    u1 = cov.eigenvectors[:, 0]
    resid = ones - (ones @ u1) * u1
    norm = float(np.linalg.norm(resid))
    if norm < 1e-12:
        raise DegenerateResidualError(
            "uniform predictor is numerically parallel to the top eigenvector"
        )
    resid /= norm
    p = (cov.eigenvectors.T @ resid) ** 2
    p[0] = 0.0
    return p


def sparse_aap_target(
    cov: SpectralCovariance,
    k_star_fraction: float = 0.05,
    spec: Optional[TargetSpec] = None,
) -> TargetPortfolio:
    """Agnostic target truncated to the top ceil(f * N) eigenmodes."""
    if not 0.0 < k_star_fraction <= 1.0:
        raise InputError("k_star_fraction must be in (0, 1]")
    n = cov.n
    k_star = max(1, int(np.ceil(k_star_fraction * n)))
    lam = cov.eigenvalues[:k_star]
    if lam[-1] <= 0.0:
        raise InputError(
            "sparse_aap_target: needs a strictly positive spectrum on the "
            "kept modes; clean the covariance first"
        )
    u = cov.eigenvectors[:, :k_star]
    ones = np.ones(n)
    raw = u @ ((u.T @ ones) / np.sqrt(lam))
    if spec is None:
        spec = TargetSpec("sparse_aap", k_star_fraction=k_star_fraction)
    return _finalize(raw, spec, cov)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def target_to_csv(path, tp: TargetPortfolio, asset_ids: Optional[Sequence[str]] = None) -> None:
    ids = list(asset_ids) if asset_ids else [f"A{i}" for i in range(len(tp.weights))]
    pd.DataFrame({"asset_id": ids, "weight": tp.weights}).to_csv(path, index=False)


def target_to_json(path, tp: TargetPortfolio, asset_ids: Optional[Sequence[str]] = None) -> None:
    ids = list(asset_ids) if asset_ids else [f"A{i}" for i in range(len(tp.weights))]
    payload = {
        "asset_ids": ids,
        "weights": tp.weights.tolist(),
        "omega": tp.omega,
        "spec": {
            "kind": tp.spec.kind,
            "a": tp.spec.a,
            "b": tp.spec.b,
            "c": tp.spec.c,
            "k_star_fraction": tp.spec.k_star_fraction,
        },
        "mode_risk": tp.risk_contributions.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def target_from_json(path) -> TargetPortfolio:
    with open(path) as fh:
        payload = json.load(fh)
    spec = TargetSpec(**payload["spec"])
    return TargetPortfolio(
        np.asarray(payload["weights"], dtype=float),
        float(payload["omega"]),
        spec,
        np.asarray(payload["mode_risk"], dtype=float),
    )
