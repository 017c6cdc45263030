"""Plug-in estimates of the conditional outcome cdfs, propensities and cell masses.

Every arm-cell distribution is an object with the same small surface
(``cdf``, ``cdf_shifted``, ``quantile``, ``lower``, ``upper``,
``breakpoints``) so the bound formulas run unchanged on empirical step cdfs,
perturbed step cdfs from the numerical delta method, and exact population
cdfs used as Monte Carlo truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, OverlapError, check_overlap

EPS_Q = 1e-9
MAX_REDRAWS = 1000


@dataclass(frozen=True)
class StepCdf:
    """Right-continuous step cdf with jumps at ``points`` and value ``values[k]`` on
    ``[points[k], points[k+1])``. ``values`` is nondecreasing and ends at 1."""

    points: np.ndarray
    values: np.ndarray

    @classmethod
    def from_sample(cls, sample) -> "StepCdf":
        sample = np.sort(np.asarray(sample, dtype=float))
        if sample.size == 0:
            raise ValueError("empty sample")
        points, counts = np.unique(sample, return_counts=True)
        values = np.cumsum(counts) / sample.size
        values[-1] = 1.0
        return cls(points, values)

    def cdf(self, y):
        idx = np.searchsorted(self.points, y, side="right") - 1
        return np.where(idx < 0, 0.0, self.values[np.maximum(idx, 0)])

    def cdf_shifted(self, y, shift: float):
        """F(y - shift), exact at the shifted jump points ``points + shift``."""
        if shift == 0.0:
            return self.cdf(y)
        idx = np.searchsorted(self.points + shift, y, side="right") - 1
        return np.where(idx < 0, 0.0, self.values[np.maximum(idx, 0)])

    def quantile(self, tau):
        idx = np.searchsorted(self.values, tau, side="left")
        return self.points[np.minimum(idx, self.points.size - 1)]

    @property
    def lower(self) -> float:
        return float(self.points[np.argmax(self.values > 0.0)])

    @property
    def upper(self) -> float:
        return float(self.points[np.argmax(self.values >= 1.0)])

    def breakpoints(self, shift: float = 0.0) -> np.ndarray:
        return self.points + shift if shift else self.points


@dataclass(frozen=True)
class ContinuousCdf:
    """Continuous cdf on ``[lower, upper]`` given by vectorised callables.

    ``grid`` is the set of y-points used for sup/inf scans and L_p quadrature.
    """

    cdf_fn: Callable[[np.ndarray], np.ndarray]
    ppf_fn: Callable[[np.ndarray], np.ndarray]
    lower: float
    upper: float
    grid: np.ndarray

    def cdf(self, y):
        return np.clip(self.cdf_fn(np.asarray(y, dtype=float)), 0.0, 1.0)

    def cdf_shifted(self, y, shift: float):
        return self.cdf(np.asarray(y, dtype=float) - shift)

    def quantile(self, tau):
        return self.ppf_fn(np.asarray(tau, dtype=float))

    def breakpoints(self, shift: float = 0.0) -> np.ndarray:
        return self.grid + shift if shift else self.grid


@dataclass(frozen=True)
class TabulatedCdf:
    """Continuous cdf given by its values on a dense increasing grid; linear in between."""

    grid: np.ndarray
    values: np.ndarray

    def cdf(self, y):
        return np.interp(y, self.grid, self.values, left=0.0, right=1.0)

    def cdf_shifted(self, y, shift: float):
        return self.cdf(np.asarray(y, dtype=float) - shift)

    def quantile(self, tau):
        return np.interp(tau, self.values, self.grid)

    @property
    def lower(self) -> float:
        return float(self.grid[0])

    @property
    def upper(self) -> float:
        return float(self.grid[-1])

    def breakpoints(self, shift: float = 0.0) -> np.ndarray:
        return self.grid + shift if shift else self.grid


@dataclass(frozen=True)
class CellEstimates:
    """theta-hat: per-cell arm distributions, propensities P(X=1|W=w) and masses P(W=w).

    ``arms[k] = (arm for x=0, arm for x=1)`` for the cell ``cells[k]``.
    ``samples[k]`` holds the sorted outcome samples when built from data.
    """

    cells: tuple
    arms: tuple
    p1: np.ndarray
    q: np.ndarray
    n: int
    samples: tuple | None = None

    def index(self, w) -> int:
        try:
            return self.cells.index(w)
        except ValueError:
            raise KeyError(f"unknown cell {w!r}") from None

    def arm(self, x: int, w):
        if x not in (0, 1):
            raise KeyError(f"treatment arm must be 0 or 1, got {x!r}")
        return self.arms[self.index(w)][x]

    def propensity(self, x: int, w) -> float:
        p = float(self.p1[self.index(w)])
        return p if x == 1 else 1.0 - p

    @property
    def p0(self) -> np.ndarray:
        return 1.0 - self.p1

    @property
    def c_max(self) -> float:
        """Smallest propensity over cells and arms: the admissible bound on c."""
        return float(min(self.p1.min(), self.p0.min()))

    def support(self, x: int, w) -> tuple[float, float]:
        arm = self.arm(x, w)
        return arm.lower, arm.upper


def estimate_theta(ds: Dataset) -> CellEstimates:
    """Sample-analog F(y|x,w), p_{x|w} and q_w from a dataset."""
    cells = tuple(int(c) for c in ds.cells)
    arms, samples, p1, q = [], [], [], []
    for w in cells:
        in_cell = ds.w == w
        y1 = np.sort(ds.y[in_cell & (ds.x == 1)])
        y0 = np.sort(ds.y[in_cell & (ds.x == 0)])
        if y0.size == 0 or y1.size == 0:
            raise OverlapError(f"overlap violated in cell {w}", cell=w)
        arms.append((StepCdf.from_sample(y0), StepCdf.from_sample(y1)))
        samples.append((y0, y1))
        n_w = y0.size + y1.size
        p1.append(y1.size / n_w)
        q.append(n_w / ds.n)
    return CellEstimates(cells, tuple(arms), np.array(p1), np.array(q), ds.n, tuple(samples))


def cdf_eval(ce: CellEstimates, y, x: int, w):
    """Right-continuous F(y | x, w); 0 below the sample minimum, 1 at and above the maximum."""
    return ce.arm(x, w).cdf(y)


def quantile_eval(ce: CellEstimates, tau, x: int, w):
    """Generalized inverse inf{y : F(y|x,w) >= tau} for tau in (0, 1)."""
    tau_arr = np.asarray(tau, dtype=float)
    if np.any((tau_arr <= 0.0) | (tau_arr >= 1.0)):
        raise ValueError("tau must lie strictly inside (0, 1)")
    return ce.arm(x, w).quantile(tau_arr)


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed, count: int) -> list[np.random.SeedSequence]:
    """Independent child seeds; child ``b`` depends only on (seed, b)."""
    if isinstance(seed, np.random.SeedSequence):
        return seed.spawn(count)
    return np.random.SeedSequence(seed).spawn(count)


def bootstrap_resample(ds: Dataset, rng_seed, redraw: bool = True) -> Dataset:
    """n i.i.d. row draws with replacement.

    With ``redraw`` the draw is repeated until every original cell has both arms,
    giving up after ``MAX_REDRAWS`` attempts. ``resample.redraws`` is not stored;
    use :func:`bootstrap_resample_counted` to get the count.
    """
    return bootstrap_resample_counted(ds, rng_seed, redraw)[0]


def bootstrap_resample_counted(ds: Dataset, rng_seed, redraw: bool = True) -> tuple[Dataset, int]:
    rng = as_generator(rng_seed)
    cells = ds.cells
    for attempt in range(MAX_REDRAWS + 1):
        idx = rng.integers(0, ds.n, size=ds.n)
        sub = ds.take(idx, check=False)
        if not redraw:
            return sub, 0
        try:
            check_overlap(sub.x, sub.w, cells)
        except OverlapError:
            continue
        return sub, attempt
    raise OverlapError(f"could not draw a resample with overlap in every cell "
                       f"after {MAX_REDRAWS} redraws")


def clamp_rank(tau):
    return np.clip(tau, EPS_Q, 1.0 - EPS_Q)


def union_points(arms: Sequence[StepCdf]) -> np.ndarray:
    return np.unique(np.concatenate([a.points for a in arms]))
