"""Long-only, cap-constrained tracking-error minimization.

Solves  min (w - t)' C (w - t)  subject to  0 <= w_i <= cap * sum_j w_j,
then rescales the solution to a 100% net exposure (the constraint set is a
cone, so rescaling preserves feasibility of the relative cap).

The cap couples all coordinates, so the solver alternates two exact blocks:
an accelerated projected-gradient pass on the fixed-gross slice
{sum w = S, 0 <= w_i <= cap * S} and a closed-form rescaling along the ray
through the current point. A fixed point of this alternation satisfies the
variational inequality of the full cone problem, hence is globally optimal.
For cap >= 1 the upper bound is vacuous and a plain non-negative projected
gradient is used. An exhaustive active-set enumeration is available as a
cross-check for small problems.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ConvergenceError, DegenerateScalingError, InfeasibleError, InputError
from .spectrum import SpectralCovariance
from .targets import TargetPortfolio

__all__ = [
    "OptimizerConfig",
    "ConstrainedPortfolio",
    "KKTReport",
    "solve_tracking",
    "verify_kkt",
    "project_capped_simplex",
    "solution_to_json",
]

_BINDING_TOL = 1e-9


@dataclass(frozen=True)
class OptimizerConfig:
    position_cap: float = 0.03
    kkt_tolerance: float = 1e-8
    max_iterations: int = 50_000
    algorithm: str = "projected_gradient"     # or "active_set"

    def __post_init__(self):
        if not 0.0 < self.position_cap <= 1.0:
            raise InputError("position_cap must be in (0, 1]")
        if self.algorithm not in ("projected_gradient", "active_set"):
            raise InputError(f"unknown algorithm {self.algorithm!r}")


@dataclass(frozen=True)
class ConstrainedPortfolio:
    """Solved long-only portfolio, rescaled to sum to 1."""

    weights: np.ndarray
    objective_value: float            # tracking variance at the pre-rescale optimum
    kkt_residual: float               # normalized; <= cfg.kkt_tolerance on success
    iterations_used: int
    binding_lower: Tuple[int, ...]
    binding_upper: Tuple[int, ...]

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class KKTReport:
    stationarity_residual: float      # normalized magnitude on free coordinates
    complementarity: float            # max |multiplier * slack|
    dual_violation: float             # most negative reconstructed multiplier
    feasibility_violation: float      # max constraint violation (0 if feasible)
    lower_slack: float                # min w_i
    upper_slack: float                # min (cap * S - w_i)
    feasible: bool


def project_capped_simplex(x: np.ndarray, total: float, upper: float) -> np.ndarray:
    """Euclidean projection onto {w: sum w = total, 0 <= w_i <= upper}.

    Exact O(N log N): the projection is clip(x - shift, 0, upper) and the
    coordinate sum is piecewise linear and non-increasing in the shift, so
    the crossing segment is located on the sorted breakpoint grid.
    """
    n = x.size
    if not 0.0 <= total <= n * upper + 1e-12 * max(1.0, total):
        raise InputError(f"infeasible simplex: total {total} vs n*upper {n * upper}")
    xs = np.sort(x)
    prefix = np.concatenate([[0.0], np.cumsum(xs)])
    bps = np.concatenate([xs, xs - upper])
    bps.sort()

    def sums(theta):
        hi = np.searchsorted(xs, theta + upper, side="left")
        lo = np.searchsorted(xs, theta, side="right")
        n_up = n - hi
        mid_cnt = hi - lo
        mid_sum = prefix[hi] - prefix[lo]
        return n_up * upper + mid_sum - theta * mid_cnt, mid_cnt

    g, _ = sums(bps)
    # g is non-increasing along bps; find the segment where it crosses total
    g_mono = np.maximum.accumulate(-g)
    j = int(np.searchsorted(g_mono, -total, side="left"))
    if j == 0:
        theta = bps[0]
    elif j >= bps.size:
        theta = bps[-1]
    else:
        lo_t, hi_t = bps[j - 1], bps[j]
        g_lo, g_hi = g[j - 1], g[j]
        if g_lo <= g_hi or hi_t <= lo_t:
            theta = hi_t
        else:
            theta = lo_t + (g_lo - total) * (hi_t - lo_t) / (g_lo - g_hi)
    return np.clip(x - theta, 0.0, upper)


def _fista(c_mat, lam1, t, project, w0, tol_abs, max_iter, trace=None):
    """Monotone accelerated projected gradient; returns (w, f, residual, iters).

    ``trace``, when given, collects the accepted objective values (they are
    non-increasing by construction: acceleration restarts on any increase).
    """
    lip = 2.0 * max(lam1, 1e-300)
    w = project(w0)
    y = w.copy()

    def fval(v):
        d = v - t
        return float(d @ (c_mat @ d))

    f_w = fval(w)
    tk = 1.0
    res = np.inf
    it = 0
    while it < max_iter:
        it += 1
        g = 2.0 * (c_mat @ (y - t))
        z = project(y - g / lip)
        f_z = fval(z)
        if f_z > f_w:                         # restart keeps the sequence monotone
            y = w.copy()
            tk = 1.0
            g = 2.0 * (c_mat @ (y - t))
            z = project(y - g / lip)
            f_z = fval(z)
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        y = z + ((tk - 1.0) / tn) * (z - w)
        w, f_w, tk = z, f_z, tn
        if trace is not None:
            trace.append(f_w)
        if it % 5 == 0 or it < 10:
            g_at = 2.0 * (c_mat @ (w - t))
            res = float(np.abs(w - project(w - g_at / lip)).max() * lip)
            if res <= tol_abs:
                break
    else:
        g_at = 2.0 * (c_mat @ (w - t))
        res = float(np.abs(w - project(w - g_at / lip)).max() * lip)
    return w, f_w, res, it


def solve_tracking(
    cov: SpectralCovariance,
    target: TargetPortfolio,
    cfg: OptimizerConfig = OptimizerConfig(),
) -> ConstrainedPortfolio:
    """Minimize tracking error to the target under the relative position cap."""
    w_t = np.asarray(target.weights if isinstance(target, TargetPortfolio) else target, float)
    n = w_t.size
    if cov.n != n:
        raise InputError("covariance and target dimensions differ")
    if not np.all(np.isfinite(w_t)):
        raise InputError("target weights must be finite")
    cap = cfg.position_cap
    if n * cap < 1.0 - 1e-12:
        raise InfeasibleError(
            f"position cap {cap} infeasible for {n} assets (need N*cap >= 1)"
        )
    if cfg.algorithm == "active_set":
        return _solve_active_set(cov, w_t, cfg)

    c_mat = cov.matrix
    lam1 = max(float(cov.eigenvalues[0]), 1e-300)
    scale_ref = 2.0 * lam1 * max(float(np.abs(w_t).max()), 1e-300)
    tol_abs = cfg.kkt_tolerance * scale_ref

    if cap >= 1.0 - 1e-15:
        w0 = np.clip(w_t, 0.0, None)
        w, f_w, res, iters = _fista(
            c_mat, lam1, w_t, lambda v: np.clip(v, 0.0, None), w0, tol_abs, cfg.max_iterations
        )
        ray_res = 0.0
    else:
        w, f_w, res, ray_res, iters = _solve_cone(
            c_mat, lam1, w_t, cap, tol_abs, cfg.max_iterations
        )

    kkt = (res + ray_res) / scale_ref
    if kkt > cfg.kkt_tolerance:
        raise ConvergenceError(
            f"solve_tracking: residual {kkt:.3e} > {cfg.kkt_tolerance:.1e} "
            f"after {iters} iterations",
            residual=kkt,
            iterations=iters,
        )

    gross = float(w.sum())
    if gross <= 1e-12 * max(1.0, float(np.abs(w_t).sum())):
        raise DegenerateScalingError(
            "constrained solution has ~zero gross exposure; cannot rescale to 100%"
        )
    w_final = w / gross
    lower = tuple(int(i) for i in np.flatnonzero(w <= _BINDING_TOL * gross))
    upper_bound = cap * gross
    upper = tuple(int(i) for i in np.flatnonzero(w >= upper_bound * (1.0 - _BINDING_TOL)))
    return ConstrainedPortfolio(
        w_final,
        objective_value=f_w,
        kkt_residual=kkt,
        iterations_used=iters,
        binding_lower=lower,
        binding_upper=() if cap >= 1.0 else upper,
    )


def _solve_cone(c_mat, lam1, w_t, cap, tol_abs, max_iter, max_outer=500):
    """Alternate slice solves and exact ray rescaling on the constraint cone."""
    w = np.clip(w_t, 0.0, None)
    gross = float(w.sum())
    if gross <= 0.0:
        gross = 1.0
        w = np.full_like(w_t, 1.0 / w_t.size)
    total_iters = 0
    f_w = np.inf
    res = np.inf
    ray_res = np.inf
    for _ in range(max_outer):
        budget = max_iter - total_iters
        if budget <= 0:
            break
        project = lambda v, s=gross: project_capped_simplex(v, s, cap * s)
        w, f_w, res, it = _fista(c_mat, lam1, w_t, project, w, 0.9 * tol_abs, budget)
        total_iters += it
        cw = c_mat @ w
        den = float(w @ cw)
        if den <= 0.0:
            ray_res = 0.0
            break
        g_opt = float(w_t @ cw) / den
        if g_opt <= 0.0:
            return np.zeros_like(w), float(w_t @ (c_mat @ w_t)), 0.0, 0.0, total_iters
        ray_res = 2.0 * den * abs(1.0 - g_opt) / max(gross, 1e-300)
        w = w * g_opt
        gross = gross * g_opt
        if ray_res <= 0.1 * tol_abs and res <= 0.9 * tol_abs:
            d = w - w_t
            f_w = float(d @ (c_mat @ d))
            break
    return w, f_w, res, ray_res, total_iters


def _face_basis(n: int, lower: Tuple[int, ...], upper: Tuple[int, ...], cap: float) -> np.ndarray:
    """Null-space basis of {w_L = 0; w_i = cap * sum(w), i in U}."""
    rows = []
    for i in lower:
        e = np.zeros(n)
        e[i] = 1.0
        rows.append(e)
    for i in upper:
        e = np.full(n, -cap)
        e[i] += 1.0
        rows.append(e)
    if not rows:
        return np.eye(n)
    a = np.asarray(rows)
    _, sv, vt = np.linalg.svd(a)
    rank = int((sv > 1e-12 * max(float(sv[0]), 1.0)).sum())
    return vt[rank:].T


def _solve_active_set(cov: SpectralCovariance, w_t: np.ndarray, cfg: OptimizerConfig) -> ConstrainedPortfolio:
    """Exhaustive enumeration of active-set faces; exact for small N."""
    n = w_t.size
    if n > 12:
        raise InputError("active_set enumeration is limited to N <= 12")
    c_mat = cov.matrix
    cap = cfg.position_cap
    tol = 1e-9 * max(1.0, float(np.abs(w_t).max()))
    best_w = np.zeros(n)
    d0 = best_w - w_t
    best_f = float(d0 @ (c_mat @ d0))
    count = 0
    for assign in itertools.product((0, 1, 2) if cap < 1.0 else (0, 1), repeat=n):
        count += 1
        lower = tuple(i for i in range(n) if assign[i] == 0)
        upper = tuple(i for i in range(n) if assign[i] == 2)
        if len(lower) == n:
            continue
        basis = _face_basis(n, lower, upper, cap)
        if basis.shape[1] == 0:
            continue
        h = basis.T @ c_mat @ basis
        rhs = basis.T @ (c_mat @ w_t)
        xi, *_ = np.linalg.lstsq(h, rhs, rcond=None)
        w = basis @ xi
        gross = w.sum()
        if gross < -tol or np.any(w < -tol) or np.any(w > cap * gross + tol):
            continue
        d = w - w_t
        f = float(d @ (c_mat @ d))
        if f < best_f:
            best_f, best_w = f, w
    gross = float(best_w.sum())
    if gross <= 1e-12 * max(1.0, float(np.abs(w_t).sum())):
        raise DegenerateScalingError("active-set solution has ~zero gross exposure")
    report = verify_kkt(cov, w_t, best_w, cfg)
    lower = tuple(int(i) for i in np.flatnonzero(best_w <= _BINDING_TOL * gross))
    upper = tuple(
        int(i) for i in np.flatnonzero(best_w >= cap * gross * (1.0 - _BINDING_TOL))
    )
    return ConstrainedPortfolio(
        best_w / gross,
        objective_value=best_f,
        kkt_residual=report.stationarity_residual,
        iterations_used=count,
        binding_lower=lower,
        binding_upper=() if cap >= 1.0 else upper,
    )


def verify_kkt(
    cov: SpectralCovariance,
    target,
    candidate: np.ndarray,
    cfg: OptimizerConfig = OptimizerConfig(),
) -> KKTReport:
    """Stationarity, complementarity and feasibility diagnostics.

    Solutions are reported at 100% net exposure while optimality lives on a
    ray of the constraint cone, so stationarity is assessed at the
    candidate's optimal rescaling along its own ray. Pure report: an
    infeasible candidate yields violation magnitudes, not an exception.
    """
    w_t = np.asarray(target.weights if isinstance(target, TargetPortfolio) else target, float)
    w = np.asarray(candidate, dtype=float)
    cap = cfg.position_cap
    gross = float(w.sum())
    lam1 = max(float(cov.eigenvalues[0]), 1e-300)
    scale_ref = 2.0 * lam1 * max(float(np.abs(w_t).max()), 1e-300)

    lower_slack = float(w.min())
    upper_gap = cap * gross - w
    upper_slack = float(upper_gap.min()) if cap < 1.0 else np.inf
    feas_viol = max(0.0, -lower_slack)
    if cap < 1.0:
        feas_viol = max(feas_viol, -min(upper_slack, 0.0))
    feasible = feas_viol <= 1e-9 * max(1.0, abs(gross))

    cw = cov.matrix @ w
    den = float(w @ cw)
    if den > 0.0:
        gamma = float(w_t @ cw) / den
        if gamma > 0.0:
            w = w * gamma
            gross *= gamma
            upper_gap = cap * gross - w
    g = 2.0 * (cov.matrix @ (w - w_t))
    act_tol = 1e-7 * max(abs(gross), 1.0)
    on_lower = w <= act_tol
    on_upper = (cap < 1.0) & (upper_gap <= act_tol)
    free = ~(on_lower | on_upper)

    if on_upper.any():
        denom = 1.0 - cap * int(on_upper.sum())
        if abs(denom) > 1e-12:
            mult_sum = -float(g[on_upper].sum()) / denom
        else:
            mult_sum = float(np.mean(g[free]) / cap) if free.any() else 0.0
    else:
        mult_sum = 0.0

    stat = float(np.abs(g[free] - cap * mult_sum).max()) if free.any() else 0.0
    nu = np.where(on_lower, g - cap * mult_sum, 0.0)
    mu = np.where(on_upper, cap * mult_sum - g, 0.0)
    dual_viol = max(0.0, float(-nu.min()), float(-mu.min()))
    comp = float(np.abs(nu * w).max())
    if cap < 1.0:
        comp = max(comp, float(np.abs(mu * upper_gap).max()))

    return KKTReport(
        stationarity_residual=stat / scale_ref,
        complementarity=comp / max(scale_ref * abs(gross), 1e-300),
        dual_violation=dual_viol / scale_ref,
        feasibility_violation=feas_viol,
        lower_slack=lower_slack,
        upper_slack=upper_slack,
        feasible=bool(feasible),
    )


def solution_to_json(path, sol: ConstrainedPortfolio, asset_ids=None) -> None:
    ids = list(asset_ids) if asset_ids else [f"A{i}" for i in range(len(sol.weights))]
    payload = {
        "asset_ids": ids,
        "weights": sol.weights.tolist(),
        "objective_value": sol.objective_value,
        "kkt_residual": sol.kkt_residual,
        "iterations_used": sol.iterations_used,
        "binding_lower": list(sol.binding_lower),
        "binding_upper": list(sol.binding_upper),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
