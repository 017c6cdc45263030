"""Simulation design with a truncated-normal outcome, its exact frontier, and coverage studies.

Y | X=x is pi*x + (1 + gamma*x) * T with T standard normal truncated to
[-lo, hi]; there are no covariates.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

from .bootstrap import (_chunks, _map_chunks, min_area_band, perturb_theta, _step_factor,
                        _resample_theta)
from .data import Dataset
from .empirical import CellEstimates, as_generator, estimate_theta, spawn_seeds
from .frontier import (Claim, DteClaim, FrontierCurve, default_c_grid, dte_components,
                       frontier_from_components, frontier_values, step_area)

DEFAULT_P_LOWERS = (0.1, 0.25, 0.5, 0.75, 0.9)


@dataclass(frozen=True)
class McDgp:
    gamma: float = 0.1
    pi: float = 1.0
    p_treat: float = 0.5
    trunc: tuple = (-4.0, 4.0)

    def __post_init__(self):
        if not self.gamma > -1:
            raise ValueError("gamma must exceed -1")
        lo, hi = self.trunc
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError("truncation bounds must be finite and increasing")
        if not 0 < self.p_treat < 1:
            raise ValueError("p_treat must lie in (0, 1)")

    def scale(self, x: int) -> float:
        return 1.0 + self.gamma * x

    def loc(self, x: int) -> float:
        return self.pi * x


@dataclass(frozen=True)
class TruncNormalArm:
    """Exact cdf and quantile of loc + scale * T, T ~ N(0,1) truncated to [a, b]."""

    loc: float
    scale: float
    a: float
    b: float
    grid_points: int = 4001

    @property
    def _mass(self):
        return ndtr(self.a), ndtr(self.b)

    def cdf(self, y):
        lo, hi = self._mass
        t = (np.asarray(y, dtype=float) - self.loc) / self.scale
        return np.clip((ndtr(np.clip(t, self.a, self.b)) - lo) / (hi - lo), 0.0, 1.0)

    def cdf_shifted(self, y, shift: float):
        return self.cdf(np.asarray(y, dtype=float) - shift)

    def quantile(self, tau):
        lo, hi = self._mass
        t = ndtri(lo + np.asarray(tau, dtype=float) * (hi - lo))
        return self.loc + self.scale * np.clip(t, self.a, self.b)

    @property
    def lower(self) -> float:
        return self.loc + self.scale * self.a

    @property
    def upper(self) -> float:
        return self.loc + self.scale * self.b

    def breakpoints(self, shift: float = 0.0) -> np.ndarray:
        g = np.linspace(self.lower, self.upper, self.grid_points)
        return g + shift if shift else g


def dgp_sample(dgp: McDgp, n: int, seed) -> Dataset:
    """n draws by inverse-cdf sampling of the truncated normal."""
    rng = as_generator(seed)
    x = (rng.random(n) < dgp.p_treat).astype(np.int8)
    a, b = dgp.trunc
    lo, hi = ndtr(a), ndtr(b)
    t = np.clip(ndtri(lo + rng.random(n) * (hi - lo)), a, b)
    y = dgp.pi * x + (1.0 + dgp.gamma * x) * t
    return Dataset.from_arrays(y, x)


def population_theta(dgp: McDgp, grid_points: int = 4001) -> CellEstimates:
    a, b = dgp.trunc
    arms = ((TruncNormalArm(dgp.loc(0), dgp.scale(0), a, b, grid_points),
             TruncNormalArm(dgp.loc(1), dgp.scale(1), a, b, grid_points)),)
    return CellEstimates((0,), arms, np.array([dgp.p_treat]), np.array([1.0]), n=10**12)


def population_frontier(dgp: McDgp, claim: Claim, c_grid, grid_points: int = 4001,
                        u_grid=None) -> FrontierCurve:
    """Frontier of the design itself on ``c_grid`` (same u-grid rule as the estimator)."""
    c = np.asarray(c_grid, dtype=float)
    vals, undef, c_star = frontier_values(population_theta(dgp, grid_points), claim, c, u_grid)
    return FrontierCurve(c, vals, claim, undefined=undef, breakdown_point=c_star)


# ---------------------------------------------------------------- studies

@dataclass
class StudyConfig:
    """One coverage study: N, S simulated datasets, B draws each, epsilon ratios and p_lower values."""

    n: int = 500
    S: int = 200
    B: int = 200
    ratios: tuple = (0.5, 1.0, 1.5, 2.0, 4.0, 6.0, 8.0, 10.0)
    p_lowers: tuple = DEFAULT_P_LOWERS
    z: float = 0.0
    alpha: float = 0.05
    grid_points: int = 50
    seed: int = 0
    node_budget: int = 20000
    threads: int | None = None
    dgp: McDgp = field(default_factory=McDgp)
    clip_draws: bool = False


@dataclass
class StudyResult:
    """Per-dataset outcomes; arrays are indexed [s, ratio, p_lower]."""

    config: StudyConfig
    covered: np.ndarray
    area_ratio: np.ndarray
    frontiers: np.ndarray
    truths: np.ndarray
    c_grids: np.ndarray
    flagged: np.ndarray

    def coverage(self, ratio: float, p_lower: float) -> float:
        i, j = self._idx(ratio, p_lower)
        return float(self.covered[:, i, j].mean())

    def mean_area_ratio(self, ratio: float, p_lower: float) -> float:
        i, j = self._idx(ratio, p_lower)
        return float(np.nanmean(self.area_ratio[:, i, j]))

    def _idx(self, ratio, p_lower):
        return (list(self.config.ratios).index(ratio), list(self.config.p_lowers).index(p_lower))

    def table(self) -> list[dict]:
        cfg = self.config
        rows = []
        for i, r in enumerate(cfg.ratios):
            for j, p in enumerate(cfg.p_lowers):
                rows.append({"N": cfg.n, "epsilon": r / math.sqrt(cfg.n), "ratio": r,
                             "p_lower": p, "coverage": float(self.covered[:, i, j].mean()),
                             "area_ratio": float(np.nanmean(self.area_ratio[:, i, j]))})
        return rows


def _one_dataset(cfg: StudyConfig, seed, truth_ce: CellEstimates):
    data_seed, boot_seed = seed.spawn(2)
    ds = dgp_sample(cfg.dgp, cfg.n, np.random.default_rng(data_seed))
    ce = estimate_theta(ds)
    c = default_c_grid(ce.c_max, cfg.grid_points)
    sp, su = dte_components(ce, cfg.z, c)
    base = np.vstack([frontier_from_components(sp, su, p)[0] for p in cfg.p_lowers])
    base_draw = np.vstack([frontier_from_components(sp, su, p, cfg.clip_draws)[0]
                           for p in cfg.p_lowers])
    tsp, tsu = dte_components(truth_ce, cfg.z, c)
    truth = np.vstack([frontier_from_components(tsp, tsu, p)[0] for p in cfg.p_lowers])

    eps = [r / math.sqrt(cfg.n) for r in cfg.ratios]
    draws = np.zeros((len(eps), len(cfg.p_lowers), cfg.B, c.size))
    good = np.ones(cfg.B, dtype=bool)
    for b, child in enumerate(spawn_seeds(boot_seed, cfg.B)):
        ce_star = _resample_theta(ds, child, True)
        if ce_star is None:
            good[b] = False
            continue
        for i, e in enumerate(eps):
            theta, _ = perturb_theta(ce, ce_star, _step_factor(e, ce.n), float(c.max()))
            psp, psu = dte_components(theta, cfg.z, c)
            for j, p in enumerate(cfg.p_lowers):
                draws[i, j, b] = (frontier_from_components(psp, psu, p, cfg.clip_draws)[0]
                                  - base_draw[j]) / e
    covered = np.zeros((len(eps), len(cfg.p_lowers)), dtype=bool)
    ratio = np.full((len(eps), len(cfg.p_lowers)), np.nan)
    for i in range(len(eps)):
        for j, p in enumerate(cfg.p_lowers):
            fc = FrontierCurve(c, base[j], DteClaim(cfg.z, p))
            band = min_area_band(fc, draws[i, j][good], cfg.alpha, cfg.n,
                                 int((~good).sum()), cfg.node_budget)
            covered[i, j] = np.all(band.lb_on_grid <= truth[j] + 1e-12)
            ratio[i, j] = band.area_ratio
    return covered, ratio, base, truth, c, int((~good).sum())


def _study_worker(args):
    cfg, seeds, truth_ce = args
    return [_one_dataset(cfg, s, truth_ce) for s in seeds]


def coverage_study(cfg: StudyConfig) -> StudyResult:
    """Uniform coverage of min-area bands against the exact frontier, plus area ratios."""
    truth_ce = population_theta(cfg.dgp)
    seeds = spawn_seeds(cfg.seed, cfg.S)
    n_workers = cfg.threads or os.cpu_count() or 1
    tasks = [(cfg, chunk, truth_ce) for chunk in _chunks(seeds, n_workers)]
    out = [r for part in _map_chunks(_study_worker, tasks, n_workers) for r in part]
    return StudyResult(cfg,
                       np.array([o[0] for o in out]), np.array([o[1] for o in out]),
                       np.array([o[2] for o in out]), np.array([o[3] for o in out]),
                       np.array([o[4] for o in out]), np.array([o[5] for o in out]))


@dataclass
class BiasResult:
    c_grid: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    truth: np.ndarray


def bias_study(dgp: McDgp, claim: DteClaim, n: int, S: int, seed=0, c_grid=None,
               grid_points: int = 50) -> BiasResult:
    """Mean of S estimated frontiers on a common grid against the exact frontier.

    The default common grid stops at 0.8 * min(p, 1 - p), inside every sample's
    admissible range with overwhelming probability at moderate n.
    """
    c = (np.linspace(0.0, 0.8 * min(dgp.p_treat, 1 - dgp.p_treat), grid_points)
         if c_grid is None else np.asarray(c_grid, dtype=float))
    truth = population_frontier(dgp, claim, c).t_values
    curves = np.array([frontier_values(estimate_theta(dgp_sample(dgp, n, s)), claim, c)[0]
                       for s in spawn_seeds(seed, S)])
    se = curves.std(axis=0, ddof=1) / math.sqrt(S) if S > 1 else np.zeros(c.size)
    return BiasResult(c, curves.mean(axis=0), se, truth)


def write_table(rows: list[dict], path) -> None:
    path = Path(path)
    cols = ["N", "epsilon", "ratio", "p_lower", "coverage", "area_ratio"]
    with path.open("w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]) for k in cols})
