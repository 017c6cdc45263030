"""Bounds on marginal cdfs, quantiles, CQTE and ATE under conditional c-dependence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, ValidationError, _cell_index
from .empirical import EPS_Q, CellEstimates, clamp_rank

DEFAULT_TAU_STEP = 0.001


class IdentificationError(ValueError):
    """The sensitivity level leaves the region where the bounds are defined."""


@dataclass(frozen=True)
class AteBounds:
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper + 1e-12:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class BreakdownPoint:
    """ATE breakdown point with flags for the two boundary outcomes."""

    c_star: float
    degenerate: bool = False
    reached: bool = True


def _check_c(c, p, what="c"):
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise IdentificationError(f"{what} must be nonnegative")
    if np.any(c >= p):
        raise IdentificationError(
            f"c exceeds identification region: c={np.max(c):.6g} >= propensity {p:.6g}")
    return c


def cdf_bound_values(F, p: float, c):
    """Lower and upper cdf bounds for cdf values ``F`` at propensity ``p``.

    Broadcasts over ``F`` and ``c``; the caller guarantees ``0 <= c < p``.
    """
    Fp = F * p
    upper = np.minimum(Fp / (p - c), (Fp + c) / (p + c))
    lower = np.maximum(Fp / (p + c), (Fp - c) / (p - c))
    return np.clip(lower, 0.0, 1.0), np.clip(upper, 0.0, 1.0)


def cdf_bounds(ce: CellEstimates, y, x: int, w, c: float):
    """(lower, upper) bounds on P(Y_x <= y | W=w) at sensitivity level ``c``."""
    p = ce.propensity(x, w)
    c = _check_c(c, p)
    return cdf_bound_values(ce.arm(x, w).cdf(y), p, c)


def perturbed_ranks(tau, p: float, c):
    """Ranks tau -/+ (c/p) min(tau, 1-tau), clamped away from 0 and 1."""
    shift = (np.asarray(c, dtype=float) / p) * np.minimum(tau, 1.0 - tau)
    return clamp_rank(tau - shift), clamp_rank(tau + shift)


def perturbed_rank(tau, p: float, c, sign: int):
    """One side of :func:`perturbed_ranks`: ``sign=-1`` gives the lower rank."""
    r = tau + sign * (np.asarray(c, dtype=float) / p) * np.minimum(tau, 1.0 - tau)
    np.maximum(r, EPS_Q, out=r)
    np.minimum(r, 1.0 - EPS_Q, out=r)
    return r


def quantile_bounds(ce: CellEstimates, tau, x: int, w, c: float):
    """(lower, upper) bounds on the tau-quantile of Y_x given W=w."""
    tau = np.asarray(tau, dtype=float)
    if np.any((tau <= 0) | (tau >= 1)):
        raise ValueError("tau must lie strictly inside (0, 1)")
    p = ce.propensity(x, w)
    c = _check_c(c, p)
    lo_rank, hi_rank = perturbed_ranks(tau, p, c)
    arm = ce.arm(x, w)
    return arm.quantile(lo_rank), arm.quantile(hi_rank)


def cqte_bounds(ce: CellEstimates, tau, w, c: float):
    """(lower, upper) bounds on Q_1(tau|w) - Q_0(tau|w)."""
    lo1, hi1 = quantile_bounds(ce, tau, 1, w, c)
    lo0, hi0 = quantile_bounds(ce, tau, 0, w, c)
    return lo1 - hi0, hi1 - lo0


def default_tau_grid(step: float = DEFAULT_TAU_STEP) -> np.ndarray:
    k = int(round(1.0 / step))
    return np.arange(1, k) / k


def tau_weights(tau_grid) -> np.ndarray:
    """Trapezoid weights on the grid with each tail strip given to its nearest node."""
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1 or tau.size == 0:
        raise ValueError("tau grid must be a nonempty 1-d array")
    if np.any((tau <= 0) | (tau >= 1)) or np.any(np.diff(tau) <= 0):
        raise ValueError("tau grid must be strictly increasing inside (0, 1)")
    if tau.size == 1:
        return np.ones(1)
    gaps = np.diff(tau)
    wts = np.zeros_like(tau)
    wts[:-1] += gaps / 2
    wts[1:] += gaps / 2
    wts[0] += tau[0]
    wts[-1] += 1.0 - tau[-1]
    return wts


def cate_bounds(ce: CellEstimates, w, c: float, tau_grid=None) -> AteBounds:
    """Bounds on E[Y_1 - Y_0 | W=w] by integrating the CQTE bounds over tau."""
    tau = default_tau_grid() if tau_grid is None else np.asarray(tau_grid, dtype=float)
    wts = tau_weights(tau)
    lo, hi = cqte_bounds(ce, tau, w, c)
    return AteBounds(float(wts @ lo), float(wts @ hi))


def ate_bounds(ce: CellEstimates, c: float, tau_grid=None) -> AteBounds:
    """Cell-mass weighted average of the CATE bounds."""
    parts = [cate_bounds(ce, w, c, tau_grid) for w in ce.cells]
    lo = float(sum(q * b.lower for q, b in zip(ce.q, parts)))
    hi = float(sum(q * b.upper for q, b in zip(ce.q, parts)))
    return AteBounds(min(lo, hi), hi)


def ate_lower_curve(ce: CellEstimates, c_values, tau_grid=None) -> np.ndarray:
    """ATE lower bound at each c in ``c_values``, vectorised over c."""
    tau = default_tau_grid() if tau_grid is None else np.asarray(tau_grid, dtype=float)
    wts = tau_weights(tau)
    c = np.atleast_1d(np.asarray(c_values, dtype=float))[:, None]
    total = np.zeros(c.shape[0])
    for k, w in enumerate(ce.cells):
        p1, p0 = ce.p1[k], 1.0 - ce.p1[k]
        _check_c(c, min(p1, p0))
        lo1, _ = perturbed_ranks(tau, p1, c)
        _, hi0 = perturbed_ranks(tau, p0, c)
        arm0, arm1 = ce.arms[k]
        total += ce.q[k] * ((arm1.quantile(lo1) - arm0.quantile(hi0)) @ wts)
    return total


def ate_breakdown_point(ce: CellEstimates, mu: float, c_search_max: float | None = None,
                        tol: float = 1e-4, tau_grid=None) -> BreakdownPoint:
    """Smallest c at which the ATE lower bound falls to ``mu``, by bisection."""
    if c_search_max is None:
        c_search_max = 0.9 * ce.c_max
    if not 0 <= c_search_max < ce.c_max:
        raise IdentificationError(
            f"search window [0, {c_search_max:.6g}] must stay below c_max={ce.c_max:.6g}")

    def lower(c):
        return float(ate_lower_curve(ce, [c], tau_grid)[0])

    if lower(0.0) <= mu:
        return BreakdownPoint(0.0, degenerate=True)
    if lower(c_search_max) > mu:
        return BreakdownPoint(float(c_search_max), reached=False)
    lo, hi = 0.0, float(c_search_max)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if lower(mid) <= mu:
            hi = mid
        else:
            lo = mid
    return BreakdownPoint(hi)


def leave_out_k_cbar(ds: Dataset, k: int) -> float:
    """Largest gap between the full-cell propensity and the one ignoring covariate ``k``."""
    n_cov = ds.covariates.shape[1]
    if n_cov < 2:
        raise ValidationError(f"leave-out diagnostics need at least 2 covariates, got {n_cov}")
    if not 0 <= k < n_cov:
        raise IndexError(f"covariate index {k} out of range for {n_cov} covariates")
    full, _ = _cell_index(ds.covariates)
    reduced, _ = _cell_index(np.delete(ds.covariates, k, axis=1))
    x = ds.x.astype(float)
    p_full = np.bincount(full, weights=x) / np.bincount(full)
    p_red = np.bincount(reduced, weights=x) / np.bincount(reduced)
    return float(np.max(np.abs(p_full[full] - p_red[reduced])))
