"""Smooth lower envelope of the DTE breakdown frontier and its standard-bootstrap band.

Every nondifferentiable piece of the frontier map (max, min, indicator,
infimum, clipping) is replaced by a smooth surrogate that errs in the
direction that lowers the frontier, so the smoothed frontier SBF sits below
BF for any input. A band that covers SBF therefore also covers BF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bootstrap import BandResult, _chunks, _map_chunks, _resample_theta, constant_band
from .bounds import perturbed_rank
from .data import Dataset
from .empirical import CellEstimates, estimate_theta, spawn_seeds
from .frontier import (DENOM_TOL, DteClaim, FrontierCurve, default_c_grid, default_u_grid,
                       degenerate_value, makarov_grid, support_window)

NORM_FLOOR = 1e-8


@dataclass(frozen=True)
class SmoothingConfig:
    kappa_minmax: float = 200.0
    kappa_step: float = 200.0
    p_norm: float = 64.0

    def __post_init__(self):
        if not (self.kappa_minmax > 0 and self.kappa_step > 0):
            raise ValueError("smoothing levels must be positive")
        if not self.p_norm >= 1:
            raise ValueError("p_norm must be at least 1")


class SmoothingError(ArithmeticError):
    pass


def soft_minmax(values, kappa: float, axis: int = 0):
    """sum x e^{kappa x} / sum e^{kappa x}; below the max for kappa > 0, above the min for kappa < 0."""
    x = np.asarray(values, dtype=float)
    if x.shape[axis] == 0:
        raise ValueError("soft_minmax needs at least one value")
    e = kappa * x
    e = np.exp(e - np.max(e, axis=axis, keepdims=True))
    return np.sum(x * e, axis=axis) / np.sum(e, axis=axis)


def soft_pair(a, b, kappa: float):
    """Elementwise :func:`soft_minmax` of two broadcastable arrays."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    ea, eb = kappa * a, kappa * b
    m = np.maximum(ea, eb)
    wa, wb = np.exp(ea - m), np.exp(eb - m)
    return (a * wa + b * wb) / (wa + wb)


def spline_step(x):
    """3x^2 - 2x^3 on (0, 1), 0 below and 1 above."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def smooth_step(x, kappa: float, side: str):
    """Smooth version of 1(x >= 0): ``lower`` never exceeds it, ``upper`` never falls below it."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    x = np.asarray(x, dtype=float)
    if side == "lower":
        return spline_step(kappa * x)
    if side == "upper":
        return spline_step(kappa * x + 1.0)
    raise ValueError("side must be 'lower' or 'upper'")


def smoothed_prerearrangement(f_values, z: float, kappa: float, side: str, axis: int = -1):
    """1 - mean over the u-grid of the smooth step at f(u) - z.

    The ``lower`` step yields a value at least the plain pre-rearrangement,
    the ``upper`` step one at most it.
    """
    return 1.0 - np.mean(smooth_step(np.asarray(f_values) - z, kappa, side), axis=axis)


def lp_soft_infimum(f, p: float, widths=None, axis: int = -1):
    """-( sum w |f|^p / sum w )^{1/p} for nonpositive ``f`` with interval widths ``w``.

    Equal widths are used when none are given. If every width is zero the
    window is a single point and the value there is returned.
    """
    f = np.asarray(f, dtype=float)
    a = np.abs(f)
    top = np.max(a, axis=axis, keepdims=True)
    if np.any(top < NORM_FLOOR):
        raise SmoothingError("soft infimum undefined at zero norm")
    w = np.ones(f.shape[axis]) if widths is None else np.asarray(widths, dtype=float)
    total = w.sum()
    if total <= 0:
        return np.take(f, 0, axis=axis)
    ratio = a / top
    mean = np.sum(np.moveaxis(ratio, axis, -1) ** p * w, axis=-1) / total
    if np.any(mean <= 0):
        raise SmoothingError("soft infimum undefined at zero norm")
    return -np.squeeze(top, axis=axis) * mean ** (1.0 / p)


def soft_min0_upper(x, kappa: float):
    """x (1 - upper step(x)): at least min(x, 0), equal to it off (-1/kappa, 0)."""
    return x * (1.0 - smooth_step(x, kappa, "upper"))


def soft_min0_lower(v, kappa: float):
    """(v - 1/kappa)(1 - S1(kappa v)): at most min(v, 0), equal to v - 1/kappa below 0."""
    v = np.asarray(v, dtype=float)
    return (v - 1.0 / kappa) * (1.0 - spline_step(kappa * v))


def _smooth_cell(ce: CellEstimates, k: int, z: float, c, u, cfg: SmoothingConfig):
    """(num term, denom Makarov term, denom rank term) for one cell, arrays over c."""
    arm0, arm1 = ce.arms[k]
    p1 = float(ce.p1[k])
    p0 = 1.0 - p1
    window = support_window(arm0, arm1, z)
    if window is None:
        d = np.full(c.size, degenerate_value(arm0, arm1, z))
        return d, d, d
    cc = c[:, None]
    f = arm1.quantile(perturbed_rank(u, p1, cc, -1)) - arm0.quantile(perturbed_rank(u, p0, cc, 1))
    spr_num = smoothed_prerearrangement(f, z, cfg.kappa_step, "lower")
    spr_den = smoothed_prerearrangement(f, z, cfg.kappa_step, "upper")

    ys = makarov_grid(arm0, arm1, z, *window)
    left = ys[:-1] if ys.size > 1 else ys
    widths = np.diff(ys) if ys.size > 1 else np.zeros(1)
    F1 = arm1.cdf(left)
    F0 = arm0.cdf_shifted(left, z)
    km = cfg.kappa_minmax
    hi1 = soft_pair(F1 * p1 / (p1 - cc), (F1 * p1 + cc) / (p1 + cc), -km)
    lo0 = soft_pair(F0 * p0 / (p0 + cc), (F0 * p0 - cc) / (p0 - cc), km)
    g = np.clip(-1.0 + hi1 - lo0, -2.0, 0.0)
    inf_term = 1.0 + lp_soft_infimum(g, cfg.p_norm, widths)
    mk = 1.0 + soft_min0_upper(inf_term, cfg.kappa_step)
    return spr_num, mk, spr_den


def smoothed_frontier(ce: CellEstimates, claim: DteClaim, c_grid=None,
                      cfg: SmoothingConfig | None = None, u_grid=None) -> FrontierCurve:
    """Smooth lower envelope SBF of the DTE breakdown frontier on ``c_grid``."""
    if not isinstance(claim, DteClaim):
        raise TypeError("smoothed frontiers are available for DTE claims only")
    cfg = SmoothingConfig() if cfg is None else cfg
    c = default_c_grid(ce.c_max) if c_grid is None else np.asarray(c_grid, dtype=float)
    u = default_u_grid() if u_grid is None else np.asarray(u_grid, dtype=float)
    if np.any(c < 0) or np.max(c) >= ce.c_max:
        raise ValueError("c grid must lie in [0, c_max)")
    num = np.full(c.size, 1.0 - claim.p_lower)
    den = np.zeros(c.size)
    for k in range(len(ce.cells)):
        spr_num, mk, spr_den = _smooth_cell(ce, k, claim.z, c, u, cfg)
        num -= ce.q[k] * spr_num
        den += ce.q[k] * (mk - spr_den)
    undefined = den <= DENOM_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        bf = np.where(undefined, np.where(num >= 0, 1.0, 0.0), num / np.where(undefined, 1.0, den))
    v = soft_pair(bf, 0.0, cfg.kappa_minmax)
    sbf = np.clip(1.0 + soft_min0_lower(v - 1.0, cfg.kappa_step), 0.0, 1.0)
    return FrontierCurve(c, sbf, claim, undefined=undefined)


def _smoothed_worker(args):
    ds, claim, c, cfg, seeds, base = args
    out = []
    for seed in seeds:
        ce_star = _resample_theta(ds, seed, True)
        if ce_star is None or ce_star.c_max <= c.max():
            out.append(None)
            continue
        out.append(math.sqrt(ds.n) * (smoothed_frontier(ce_star, claim, c, cfg).t_values - base))
    return out


def smoothed_band(ds: Dataset, claim: DteClaim, c_grid=None, cfg: SmoothingConfig | None = None,
                  B: int = 1000, alpha: float = 0.05, seed=0,
                  threads: int | None = None) -> BandResult:
    """SBF minus a constant critical value over sqrt(N) from the standard bootstrap, floored at 0."""
    cfg = SmoothingConfig() if cfg is None else cfg
    ce = estimate_theta(ds)
    c = default_c_grid(ce.c_max) if c_grid is None else np.asarray(c_grid, dtype=float)
    fc = smoothed_frontier(ce, claim, c, cfg)
    seeds = spawn_seeds(seed, B)
    n_workers = threads or 1
    tasks = [(ds, claim, c, cfg, chunk, fc.t_values) for chunk in _chunks(seeds, n_workers)]
    rows = [r for part in _map_chunks(_smoothed_worker, tasks, n_workers) for r in part]
    good = [r for r in rows if r is not None]
    if not good:
        raise RuntimeError("every bootstrap draw was flagged")
    band = constant_band(fc, np.array(good), alpha, ds.n, len(rows) - len(good), "smoothed")
    band.meta.update(B=B, alpha=alpha, seed=seed, kappa_minmax=cfg.kappa_minmax,
                     kappa_step=cfg.kappa_step, p_norm=cfg.p_norm)
    return band
