"""Numerical-delta bootstrap of the frontier, lower confidence bands and step choice.

A bootstrap draw perturbs the plug-in parameter along the resampling direction,

    theta_s = (1 - s) theta_hat + s theta_star,   s = eps * sqrt(N),

and records (phi(theta_s) - phi(theta_hat)) / eps on the c-grid, where phi maps
a parameter to frontier values. With s = 1 this is the naive bootstrap.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

import numpy as np

from .data import Dataset, OverlapError, check_overlap
from .empirical import (CellEstimates, StepCdf, TabulatedCdf, as_generator,
                        bootstrap_resample_counted, estimate_theta, spawn_seeds)
from .frontier import (Claim, FrontierCurve, breakdown_frontier, default_c_grid,
                       frontier_values, step_area)

EPS_GRID_RATIOS = (0.5, 1.0, 1.5, 2.0, 4.0, 6.0, 8.0, 10.0)
PROP_MARGIN = 1e-6
KERNEL_REACH = 14.0


@dataclass
class BootstrapConfig:
    """Settings for one band construction.

    ``epsilon=None`` means the naive step N^{-1/2}. With ``clip_draws`` False
    (the default) draws perturb the unclipped ratio num / denom, so they stay
    informative where the estimate is clipped at 0 or 1.
    """

    B: int = 1000
    epsilon: float | None = None
    alpha: float = 0.05
    seed: int = 0
    sigma_mode: str = "estimated_min_area"
    c_grid: np.ndarray | None = None
    redraw: bool = True
    node_budget: int = 20000
    threads: int | None = None
    clip_draws: bool = False

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.sigma_mode not in ("constant_one", "estimated_min_area"):
            raise ValueError("sigma_mode must be 'constant_one' or 'estimated_min_area'")

    def step(self, n: int) -> float:
        return 1.0 / math.sqrt(n) if self.epsilon is None else self.epsilon


@dataclass
class BandResult:
    """Lower confidence band for a frontier on its c-grid."""

    c_grid: np.ndarray
    frontier: np.ndarray
    lb_on_grid: np.ndarray
    k_values: np.ndarray
    c_bar: float
    area: float
    coverage_on_draws: float
    optimal: bool = True
    flagged: int = 0
    method: str = "delta"
    meta: dict = field(default_factory=dict)

    def lb_step(self, c):
        return monotone_step_extension(self.c_grid, self.lb_on_grid, self.c_bar)(c)

    @property
    def area_ratio(self) -> float:
        """Step-function area under the band over the same area under the frontier."""
        denom = step_area(self.c_grid, self.frontier)
        return float(step_area(self.c_grid, self.lb_on_grid) / denom) if denom > 0 else float("nan")


# ---------------------------------------------------------------- perturbation

def _mix_arm(a: StepCdf, b: StepCdf, s: float) -> StepCdf:
    pts = np.union1d(a.points, b.points)
    vals = (1.0 - s) * a.cdf(pts) + s * b.cdf(pts)
    vals = np.sort(np.clip(vals, 0.0, 1.0))
    vals[-1] = 1.0
    return StepCdf(pts, vals)


def perturb_theta(ce: CellEstimates, ce_star: CellEstimates, s: float, c_bar: float):
    """(1 - s) * ce + s * ce_star, repaired into an admissible parameter.

    Cdf values are clipped, rearranged and closed at 1; propensities are clamped
    to [c_bar + 1e-6, 1 - c_bar - 1e-6]; cell masses are clipped at 0 and
    renormalised. Returns the parameter and whether a propensity was clamped.
    """
    if ce_star.cells != ce.cells:
        raise OverlapError("bootstrap parameter has a different cell set")
    if s == 0.0:
        return ce, False
    arms = tuple((_mix_arm(a0, b0, s), _mix_arm(a1, b1, s))
                 for (a0, a1), (b0, b1) in zip(ce.arms, ce_star.arms))
    raw = (1.0 - s) * ce.p1 + s * ce_star.p1
    p1 = np.clip(raw, c_bar + PROP_MARGIN, 1.0 - c_bar - PROP_MARGIN)
    q = np.clip((1.0 - s) * ce.q + s * ce_star.q, 0.0, None)
    q = q / q.sum()
    return CellEstimates(ce.cells, arms, p1, q, ce.n), bool(np.any(p1 != raw))


def _step_factor(eps: float, n: int) -> float:
    s = eps * math.sqrt(n)
    return 1.0 if abs(s - 1.0) < 1e-12 else s


def delta_draw(ce: CellEstimates, ce_star: CellEstimates, epsilon: float, claim: Claim,
               c_grid, base=None, u_grid=None, tau_grid=None, clip: bool = False) -> np.ndarray:
    """Numerical-derivative bootstrap draw of the frontier on ``c_grid``.

    ``base`` must have been computed with the same ``clip`` setting.
    """
    c = np.asarray(c_grid, dtype=float)
    if base is None:
        base = frontier_values(ce, claim, c, u_grid, tau_grid, clip=clip)[0]
    theta, _ = perturb_theta(ce, ce_star, _step_factor(epsilon, ce.n), float(c.max()))
    return (frontier_values(theta, claim, c, u_grid, tau_grid, clip=clip)[0] - base) / epsilon


# ---------------------------------------------------------------- critical values and bands

def n_keep_draws(B: int, alpha: float) -> int:
    """Smallest number of draws whose fraction of B is at least 1 - alpha."""
    return max(1, math.ceil((1.0 - alpha) * B - 1e-9))


def critical_value(draws, sigma=None, alpha: float = 0.05) -> float:
    """inf{z : fraction of draws with sup_c draw(c)/sigma(c) <= z is >= 1 - alpha}."""
    D = np.atleast_2d(np.asarray(draws, dtype=float))
    if D.shape[0] == 0:
        raise ValueError("no bootstrap draws")
    sig = np.ones(D.shape[1]) if sigma is None else np.broadcast_to(np.asarray(sigma, float), D.shape[1:])
    if np.min(sig) <= 0:
        raise ValueError("sigma must be positive")
    stats = np.sort(np.max(D / sig, axis=1))
    return float(stats[n_keep_draws(D.shape[0], alpha) - 1])


def grid_weights(c_grid) -> np.ndarray:
    """Right-Riemann widths c_j - c_{j-1} with c_0 = 0."""
    c = np.asarray(c_grid, dtype=float)
    return np.diff(np.concatenate([[0.0], c]))


def envelope_area(P: np.ndarray, weights: np.ndarray, kept: np.ndarray) -> float:
    """sum_j w_j max_{b kept} P_bj (P already nonnegative)."""
    if not np.any(kept):
        return 0.0
    return float(weights @ P[kept].max(axis=0))


@dataclass
class MinAreaSolution:
    kept: np.ndarray
    area: float
    optimal: bool
    nodes: int = 0


def _greedy_drop(P, weights, cand, n_drop):
    """Repeatedly drop the candidate whose removal shrinks the envelope area most."""
    kept = np.ones(P.shape[0], dtype=bool)
    for _ in range(n_drop):
        best, best_area = -1, np.inf
        for b in cand:
            if not kept[b]:
                continue
            kept[b] = False
            area = envelope_area(P, weights, kept)
            kept[b] = True
            if area < best_area:
                best, best_area = b, area
        if best < 0:
            break
        kept[best] = False
    return kept


def _exchange(P, weights, cand, kept):
    """Swap a dropped draw with a kept candidate while that lowers the area."""
    area = envelope_area(P, weights, kept)
    improved = True
    while improved:
        improved = False
        for d in np.flatnonzero(~kept):
            for b in cand:
                if not kept[b]:
                    continue
                kept[d], kept[b] = True, False
                trial = envelope_area(P, weights, kept)
                if trial < area - 1e-15:
                    area, improved = trial, True
                    break
                kept[d], kept[b] = False, True
            if improved:
                break
    return kept, area


def min_area_offsets(draws, c_grid, alpha: float, node_budget: int = 20000) -> MinAreaSolution:
    """Choose which draws to leave uncovered so the envelope of the rest has least area.

    Exactly ``B - n_keep`` draws are dropped. A greedy pass plus pairwise exchange
    gives the incumbent; depth-first branch and bound (drop or keep a draw) then
    proves optimality or stops after ``node_budget`` nodes.
    """
    D = np.atleast_2d(np.asarray(draws, dtype=float))
    B, J = D.shape
    weights = grid_weights(c_grid)
    P = np.maximum(D, 0.0)
    n_drop = B - n_keep_draws(B, alpha)
    if n_drop == 0:
        kept = np.ones(B, dtype=bool)
        return MinAreaSolution(kept, envelope_area(P, weights, kept), True)

    active = weights > 0
    Pa, wa = P[:, active], weights[active]
    # only draws ranked in the top n_drop of some column can change an envelope
    order = np.argsort(-Pa, axis=0, kind="stable")
    cand = np.unique(order[:n_drop].ravel()) if Pa.shape[1] else np.array([], dtype=int)
    cand = np.array([b for b in cand if np.any(Pa[b] > 0)], dtype=int)
    if cand.size <= n_drop:
        kept = np.ones(B, dtype=bool)
        kept[cand] = False
        return MinAreaSolution(kept, envelope_area(P, weights, kept), True)

    kept = _greedy_drop(Pa, wa, cand, n_drop)
    kept, best_area = _exchange(Pa, wa, cand, kept)
    best_kept = kept.copy()

    fixed = np.ones(B, dtype=bool)
    fixed[cand] = False
    floor0 = Pa[fixed].max(axis=0) if np.any(fixed) else np.zeros(Pa.shape[1])
    nodes = 0
    exhausted = True
    stack = [(frozenset(), frozenset())]
    while stack:
        dropped, forced = stack.pop()
        nodes += 1
        if nodes > node_budget:
            exhausted = False
            break
        r = n_drop - len(dropped)
        floor = floor0
        if forced:
            floor = np.maximum(floor, Pa[list(forced)].max(axis=0))
        free = np.array([b for b in cand if b not in dropped and b not in forced], dtype=int)
        if free.size <= r or r == 0:
            # leaf: drop every free draw if slots allow, otherwise keep them all
            leaf_drop = free if free.size <= r else np.array([], dtype=int)
            val = floor if free.size <= r else np.maximum(floor, Pa[free].max(axis=0))
            area = float(wa @ val)
            if area < best_area - 1e-15:
                best_area = area
                best_kept = np.ones(B, dtype=bool)
                best_kept[list(dropped)] = False
                best_kept[leaf_drop] = False
            continue
        Pf = Pa[free]
        srt = -np.sort(-Pf, axis=0)
        bound = float(wa @ np.maximum(floor, srt[r]))
        if bound >= best_area - 1e-15:
            continue
        top = np.argmax(Pf, axis=0)
        gain = np.zeros(free.size)
        np.add.at(gain, top, wa * np.maximum(srt[0] - np.maximum(floor, srt[1]), 0.0))
        pick = int(free[np.argmax(gain)])
        stack.append((dropped, forced | {pick}))
        stack.append((dropped | {pick}, forced))
    return MinAreaSolution(best_kept, float(weights @ P[best_kept].max(axis=0)), exhausted, nodes)


def min_area_exhaustive(draws, c_grid, alpha: float) -> float:
    """Least envelope area over every choice of uncovered draws (small B only)."""
    D = np.atleast_2d(np.asarray(draws, dtype=float))
    B = D.shape[0]
    P = np.maximum(D, 0.0)
    weights = grid_weights(c_grid)
    n_drop = B - n_keep_draws(B, alpha)
    best = np.inf
    for drop in combinations(range(B), n_drop):
        kept = np.ones(B, dtype=bool)
        kept[list(drop)] = False
        best = min(best, envelope_area(P, weights, kept))
    return best


def monotone_step_extension(c_grid, values, c_bar: float | None = None) -> Callable:
    """Step function equal to values[j] on (c_{j-1}, c_j], values[0] on [0, c_1], 0 beyond c_J."""
    c = np.asarray(c_grid, dtype=float)
    v = np.asarray(values, dtype=float)
    top = c[-1] if c_bar is None else c_bar

    def f(x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("c must be nonnegative")
        if np.any(x > top + 1e-12):
            raise ValueError(f"c beyond the band's range [0, {top:g}]")
        idx = np.searchsorted(c, x, side="left")
        out = np.where(idx < c.size, v[np.minimum(idx, c.size - 1)], 0.0)
        return out if out.ndim else float(out)

    return f


def _band_from_offsets(fc_values, c_grid, k, D, n, c_bar, optimal, flagged, method, meta):
    lb = np.maximum(fc_values - k, 0.0)
    covered = np.all(D <= math.sqrt(n) * k + 1e-12, axis=1)
    return BandResult(np.asarray(c_grid, float), np.asarray(fc_values, float), lb, k, c_bar,
                      step_area(c_grid, lb) / c_bar if c_bar > 0 else float(lb[0]),
                      float(covered.mean()), optimal, flagged, method, meta)


def constant_band(frontier: FrontierCurve, draws, alpha: float, n: int, flagged: int = 0,
                  method: str = "delta") -> BandResult:
    """Band with sigma = 1: frontier minus the critical value over sqrt(N), floored at 0."""
    D = np.atleast_2d(np.asarray(draws, dtype=float))
    z = critical_value(D, None, alpha)
    k = np.full(D.shape[1], max(z, 0.0) / math.sqrt(n))
    return _band_from_offsets(frontier.t_values, frontier.c_grid, k, D, n, frontier.c_bar,
                              True, flagged, method, {"critical_value": z})


def min_area_band(frontier: FrontierCurve, draws, alpha: float, n: int, flagged: int = 0,
                  node_budget: int = 20000, method: str = "delta") -> BandResult:
    """Band whose offsets minimise the right-Riemann area subject to bootstrap coverage."""
    D = np.atleast_2d(np.asarray(draws, dtype=float))
    sol = min_area_offsets(D, frontier.c_grid, alpha, node_budget)
    k = np.maximum(D[sol.kept].max(axis=0), 0.0) / math.sqrt(n)
    return _band_from_offsets(frontier.t_values, frontier.c_grid, k, D, n, frontier.c_bar,
                              sol.optimal, flagged, method, {"nodes": sol.nodes})


# ---------------------------------------------------------------- bootstrap loop

def _resample_theta(ds: Dataset, seed, redraw: bool):
    """Bootstrap parameter, or None when the resample lacks an arm in some cell."""
    sub, _ = bootstrap_resample_counted(ds, seed, redraw)
    try:
        check_overlap(sub.x, sub.w, ds.cells)
    except OverlapError:
        return None
    return estimate_theta(sub)


def _draw_worker(args):
    ds, ce, seeds, epsilons, claim, c_grid, base, redraw, clip = args
    out = []
    for seed in seeds:
        ce_star = _resample_theta(ds, seed, redraw)
        if ce_star is None:
            out.append(None)
            continue
        out.append([delta_draw(ce, ce_star, e, claim, c_grid, base, clip=clip) for e in epsilons])
    return out


def _map_chunks(fn, tasks, threads):
    threads = threads or os.cpu_count() or 1
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, tasks))


def _chunks(seq, n):
    n = max(1, min(n, len(seq)))
    size = math.ceil(len(seq) / n)
    return [seq[i:i + size] for i in range(0, len(seq), size)]


def bootstrap_draws(ds: Dataset, ce: CellEstimates, claim: Claim, c_grid, epsilons, B: int,
                    seed, redraw: bool = True, threads: int | None = None, clip: bool = False):
    """Draw matrices (one B'-by-J array per epsilon) and the count of flagged draws.

    Replication b uses child seed b of ``seed``; chunking across processes does
    not change results.
    """
    c = np.asarray(c_grid, dtype=float)
    base = frontier_values(ce, claim, c, clip=clip)[0]
    seeds = spawn_seeds(seed, B)
    n_workers = threads or os.cpu_count() or 1
    tasks = [(ds, ce, chunk, tuple(epsilons), claim, c, base, redraw, clip)
             for chunk in _chunks(seeds, n_workers)]
    rows = [r for part in _map_chunks(_draw_worker, tasks, n_workers) for r in part]
    good = [r for r in rows if r is not None and all(np.all(np.isfinite(d)) for d in r)]
    flagged = len(rows) - len(good)
    mats = [np.array([r[i] for r in good]).reshape(len(good), c.size) for i in range(len(epsilons))]
    return mats, flagged


def confidence_band(ds: Dataset, claim: Claim, cfg: BootstrapConfig,
                    ce: CellEstimates | None = None) -> BandResult:
    """Frontier estimate and its lower confidence band on the configured grid."""
    ce = estimate_theta(ds) if ce is None else ce
    c = default_c_grid(ce.c_max) if cfg.c_grid is None else np.asarray(cfg.c_grid, float)
    fc = breakdown_frontier(ce, claim, c)
    eps = cfg.step(ds.n)
    (D,), flagged = bootstrap_draws(ds, ce, claim, c, [eps], cfg.B, cfg.seed, cfg.redraw,
                                    cfg.threads, cfg.clip_draws)
    if D.shape[0] == 0:
        raise RuntimeError("every bootstrap draw was flagged")
    if cfg.sigma_mode == "constant_one":
        band = constant_band(fc, D, cfg.alpha, ds.n, flagged)
    else:
        band = min_area_band(fc, D, cfg.alpha, ds.n, flagged, cfg.node_budget)
    band.meta.update(epsilon=eps, B=cfg.B, alpha=cfg.alpha, seed=cfg.seed,
                     clip_draws=cfg.clip_draws)
    return band


# ---------------------------------------------------------------- smoothed bootstrap

def reference_bandwidths(ds: Dataset, scale: float = 0.5) -> dict:
    """h_{x,w} = scale * 1.06 * sd * n^{-1/5} per arm-cell.

    Arm-cells with one observation or zero spread borrow the cell's pooled
    spread, then the whole sample's.
    """
    def rule(y):
        if y.size < 2:
            return 0.0
        return 1.06 * float(np.std(y, ddof=1)) * y.size ** -0.2

    h_all = rule(ds.y)
    out = {}
    for w in ds.cells:
        in_cell = ds.w == w
        h_cell = rule(ds.y[in_cell])
        for x in (0, 1):
            h = rule(ds.y[in_cell & (ds.x == x)])
            if h <= 0:
                h = h_cell if h_cell > 0 else h_all
            out[(x, int(w))] = scale * h
    return out


def smoothed_resample(ds: Dataset, seed, bandwidths: dict | None = None,
                      redraw: bool = True) -> Dataset:
    """Rows resampled with replacement, outcomes jittered by h_{x,w} times a logistic variate."""
    rng = as_generator(seed)
    h = reference_bandwidths(ds) if bandwidths is None else bandwidths
    sub, _ = bootstrap_resample_counted(ds, rng, redraw)
    scale = np.array([h[(int(x), int(w))] for x, w in zip(sub.x, sub.w)])
    y = sub.y + scale * rng.logistic(size=sub.n)
    return Dataset(y, sub.x, sub.w, sub.covariates, sub.covariate_names, sub.cell_levels)


def kernel_arm(sample, h: float, points: int = 4001) -> TabulatedCdf:
    """Logistic-kernel smoothed cdf of ``sample``, tabulated on a dense grid.

    The support is cut at 14 bandwidths beyond the sample range, where the
    kernel mass left out is below 1e-6.
    """
    sample = np.asarray(sample, dtype=float)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(sample.min() - KERNEL_REACH * h, sample.max() + KERNEL_REACH * h, points)
    vals = np.empty(points)
    for i in range(0, points, 512):
        block = grid[i:i + 512, None]
        vals[i:i + 512] = np.mean(0.5 * (1.0 + np.tanh((block - sample) / (2.0 * h))), axis=1)
    vals = np.maximum.accumulate(vals)
    vals[-1] = 1.0
    return TabulatedCdf(grid, vals)


def smoothed_population(ds: Dataset, bandwidths: dict | None = None) -> CellEstimates:
    """Parameter of the kernel-smoothed population the smoothed bootstrap samples from."""
    h = reference_bandwidths(ds) if bandwidths is None else bandwidths
    ce = estimate_theta(ds)
    arms = tuple((kernel_arm(s0, h[(0, w)]), kernel_arm(s1, h[(1, w)]))
                 for w, (s0, s1) in zip(ce.cells, ce.samples))
    return CellEstimates(ce.cells, arms, ce.p1, ce.q, ce.n)


@dataclass
class EpsilonSelection:
    """Chosen step, the candidate grid, and the smoothed-bootstrap coverage of each candidate."""

    epsilon: float
    grid: np.ndarray
    coverage: np.ndarray
    ratio: float


def _outer_worker(args):
    ds, truth, bandwidths, seeds, claim, eps_grid, B_inner, alpha, node_budget, clip = args
    rows = []
    for seed in seeds:
        inner_seed, outer_seed = seed.spawn(2)
        pseudo = smoothed_resample(ds, np.random.default_rng(outer_seed), bandwidths)
        ce_b = estimate_theta(pseudo)
        c = default_c_grid(min(ce_b.c_max, truth.c_max))
        truth_vals = frontier_values(truth, claim, c)[0]
        fc = breakdown_frontier(ce_b, claim, c)
        mats, flagged = bootstrap_draws(pseudo, ce_b, claim, c, eps_grid, B_inner, inner_seed,
                                        threads=1, clip=clip)
        hits = []
        for D in mats:
            band = min_area_band(fc, D, alpha, pseudo.n, flagged, node_budget)
            hits.append(bool(np.all(band.lb_on_grid <= truth_vals + 1e-12)))
        rows.append(hits)
    return rows


def default_epsilon_grid(n: int) -> np.ndarray:
    return np.array(EPS_GRID_RATIOS) / math.sqrt(n)


def select_epsilon(ds: Dataset, claim: Claim, alpha: float = 0.05, eps_grid=None,
                   B_outer: int = 500, B_inner: int = 1000, seed=0,
                   threads: int | None = None, node_budget: int = 20000,
                   clip_draws: bool = False) -> EpsilonSelection:
    """Pick the step whose smoothed-bootstrap coverage is closest to 1 - alpha.

    Ties go to the smaller step.
    """
    grid = default_epsilon_grid(ds.n) if eps_grid is None else np.asarray(eps_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("epsilon grid is empty")
    order = np.argsort(grid, kind="stable")
    grid = grid[order]
    if grid.size == 1:
        return EpsilonSelection(float(grid[0]), grid, np.array([np.nan]),
                                float(grid[0] * math.sqrt(ds.n)))
    bandwidths = reference_bandwidths(ds)
    truth = smoothed_population(ds, bandwidths)
    seeds = spawn_seeds(seed, B_outer)
    n_workers = threads or os.cpu_count() or 1
    tasks = [(ds, truth, bandwidths, chunk, claim, tuple(grid), B_inner, alpha, node_budget,
              clip_draws)
             for chunk in _chunks(seeds, n_workers)]
    rows = [r for part in _map_chunks(_outer_worker, tasks, n_workers) for r in part]
    cov = np.mean(np.array(rows, dtype=float), axis=0)
    gap = np.abs(cov - (1.0 - alpha))
    best = int(np.flatnonzero(gap <= gap.min() + 1e-12)[0])
    return EpsilonSelection(float(grid[best]), grid, cov, float(grid[best] * math.sqrt(ds.n)))
