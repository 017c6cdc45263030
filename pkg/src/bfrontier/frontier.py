"""DTE bounds under joint (c, t) relaxations and the breakdown frontier.

The DTE conclusion "P(Y_1 - Y_0 > z) >= p_lower" holds at (c, t) whenever the
upper DTE bound is at most 1 - p_lower. The upper bound is affine in t,

    DTE_upper(z, c, t) = sum_w q_w [(1 - t) Pbar_w(c) + t U_w(c)],

so the frontier is a ratio of two c-indexed sums. Everything below computes
``Pbar`` (rank-invariant term) and ``U`` (Makarov term) per cell, vectorised
over the c-grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .bounds import (IdentificationError, ate_breakdown_point, cdf_bound_values,
                     perturbed_rank)
from .empirical import CellEstimates

DEFAULT_U_CELLS = 2000
DEFAULT_GRID_POINTS = 50
DENOM_TOL = 1e-12


@dataclass(frozen=True)
class DteClaim:
    """Conclusion P(Y_1 - Y_0 > z) >= p_lower."""

    z: float = 0.0
    p_lower: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.p_lower <= 1.0:
            raise ValueError("p_lower must lie in [0, 1]")

    @property
    def label(self) -> str:
        return f"dte(z={self.z:g},p={self.p_lower:g})"


@dataclass(frozen=True)
class AteClaim:
    """Conclusion ATE >= mu."""

    mu: float = 0.0

    @property
    def label(self) -> str:
        return f"ate(mu={self.mu:g})"


@dataclass(frozen=True)
class JointClaim:
    claims: tuple
    combinator: str = "and"

    def __post_init__(self):
        if self.combinator not in ("and", "or"):
            raise ValueError("combinator must be 'and' or 'or'")
        if not self.claims:
            raise ValueError("a joint claim needs at least one member")
        object.__setattr__(self, "claims", tuple(self.claims))

    @property
    def label(self) -> str:
        inner = ",".join(c.label for c in self.claims)
        return f"{self.combinator}[{inner}]"


Claim = Union[DteClaim, AteClaim, JointClaim]


@dataclass(frozen=True)
class DteBounds:
    lower: float
    upper: float


@dataclass
class FrontierCurve:
    """Breakdown frontier values on a c-grid.

    ``undefined`` marks grid points where the denominator vanished and the
    value came from the sign of the numerator alone.
    """

    c_grid: np.ndarray
    t_values: np.ndarray
    claim: Claim
    c_bar: float | None = None
    undefined: np.ndarray = field(default=None)
    breakdown_point: float | None = None

    def __post_init__(self):
        self.c_grid = np.asarray(self.c_grid, dtype=float)
        self.t_values = np.asarray(self.t_values, dtype=float)
        if self.c_bar is None:
            self.c_bar = float(self.c_grid[-1])
        if self.undefined is None:
            self.undefined = np.zeros(self.c_grid.size, dtype=bool)


def default_u_grid(cells: int = DEFAULT_U_CELLS) -> np.ndarray:
    """Midpoints of ``cells`` equal cells of (0, 1); with an even count u=1/2 is never a node."""
    return (np.arange(cells) + 0.5) / cells


def default_c_grid(c_max: float, points: int = DEFAULT_GRID_POINTS, frac: float = 0.9,
                   jitter_seed=None, extra=()) -> np.ndarray:
    """Equally spaced grid on [0, frac * c_max].

    With ``jitter_seed`` the interior points are replaced by sorted uniform
    draws on the same range; ``extra`` points (e.g. leave-out c-bar values)
    below the upper end are merged in.
    """
    top = frac * c_max
    if jitter_seed is None:
        grid = np.linspace(0.0, top, points)
    else:
        rng = np.random.default_rng(jitter_seed)
        grid = np.concatenate([[0.0], np.sort(rng.uniform(0.0, top, points - 2)), [top]])
    extra = np.asarray([e for e in extra if 0.0 <= e <= top], dtype=float)
    return np.unique(np.concatenate([grid, extra]))


def _rank_invariant_term(arm0, arm1, p0, p1, z, c, u, side):
    """Fraction of u-grid where the bounding quantile difference is <= z; shape (J,)."""
    s = -1 if side == "upper" else 1
    diff = arm1.quantile(perturbed_rank(u, p1, c, s)) - arm0.quantile(perturbed_rank(u, p0, c, -s))
    return np.mean(diff <= z, axis=-1)


def support_window(arm0, arm1, z: float):
    """Endpoints of [y1_lo, y1_hi] intersected with [y0_lo + z, y0_hi + z], or None if empty."""
    a = max(arm1.lower, arm0.lower + z)
    b = min(arm1.upper, arm0.upper + z)
    return (a, b) if a <= b else None


def degenerate_value(arm0, arm1, z: float) -> float:
    """CDTE value when the support window is empty: 1 above the support of Y_1 - Y_0, else 0."""
    return 1.0 if z > arm1.upper - arm0.lower else 0.0


def makarov_grid(arm0, arm1, z: float, a: float, b: float) -> np.ndarray:
    """Window endpoints plus every jump of y -> F_1(y) and y -> F_0(y - z) in (a, b]."""
    pts1 = arm1.breakpoints()
    pts0 = arm0.breakpoints(z)
    inner = np.concatenate([pts1[(pts1 > a) & (pts1 <= b)], pts0[(pts0 > a) & (pts0 <= b)]])
    return np.unique(np.concatenate([[a], inner, [b]]))


def _makarov_scan(arm0, arm1, p0, p1, z, c, side, ys):
    """inf (upper side) or sup (lower side) over ``ys`` of the cdf-bound difference; shape (J,)."""
    F1 = arm1.cdf(ys)
    F0 = arm0.cdf_shifted(ys, z)
    lo1, hi1 = cdf_bound_values(F1, p1, c)
    lo0, hi0 = cdf_bound_values(F0, p0, c)
    if side == "upper":
        return np.min(hi1 - lo0, axis=-1)
    return np.max(lo1 - hi0, axis=-1)


def _cell_terms(ce: CellEstimates, k: int, z: float, c, u, side):
    """(rank-invariant term, Makarov term) for cell index ``k``, arrays over c."""
    arm0, arm1 = ce.arms[k]
    p1 = float(ce.p1[k])
    p0 = 1.0 - p1
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if np.any(c < 0) or np.any(c >= min(p0, p1)):
        raise IdentificationError(
            f"c exceeds identification region in cell {ce.cells[k]}: "
            f"max c={np.max(c):.6g}, min propensity={min(p0, p1):.6g}")
    window = support_window(arm0, arm1, z)
    if window is None:
        d = degenerate_value(arm0, arm1, z)
        return np.full(c.size, d), np.full(c.size, d)
    ys = makarov_grid(arm0, arm1, z, *window)
    cc = c[:, None]
    ri = _rank_invariant_term(arm0, arm1, p0, p1, z, cc, u, side)
    scan = _makarov_scan(arm0, arm1, p0, p1, z, cc, side, ys)
    # the comonotone coupling lies inside the Makarov interval; the clamp removes
    # u-grid error (< 1/M) that would otherwise break nesting in t
    if side == "upper":
        mk = 1.0 + np.minimum(scan, 0.0)
        ri = np.minimum(ri, mk)
    else:
        mk = np.maximum(scan, 0.0)
        ri = np.maximum(ri, mk)
    return ri, mk


def prerearrangement(ce: CellEstimates, z: float, w, c: float, direction: str = "upper",
                     u_grid=None) -> float:
    """Measure of u in (0,1) where the bounding quantile difference is at most z."""
    if direction not in ("upper", "lower"):
        raise ValueError("direction must be 'upper' or 'lower'")
    u = default_u_grid() if u_grid is None else np.asarray(u_grid, dtype=float)
    k = ce.index(w)
    arm0, arm1 = ce.arms[k]
    p1 = float(ce.p1[k])
    return float(_rank_invariant_term(arm0, arm1, 1.0 - p1, p1, z, np.array([[c]]), u,
                                      direction)[0])


def prerearrange_function(f, z: float, u_grid=None) -> float:
    """Measure of {u : f(u) <= z} for a callable ``f`` on (0, 1) by the u-grid rule."""
    u = default_u_grid() if u_grid is None else np.asarray(u_grid, dtype=float)
    return float(np.mean(np.asarray(f(u)) <= z))


def makarov_terms(ce: CellEstimates, z: float, w, c: float) -> tuple[float, float]:
    """(sup of lower-bound difference, inf of upper-bound difference) over the support window.

    Returns ``(nan, nan)`` when the window is empty.
    """
    k = ce.index(w)
    arm0, arm1 = ce.arms[k]
    window = support_window(arm0, arm1, z)
    if window is None:
        return float("nan"), float("nan")
    ys = makarov_grid(arm0, arm1, z, *window)
    p1 = float(ce.p1[k])
    cc = np.array([[c]])
    sup = _makarov_scan(arm0, arm1, 1.0 - p1, p1, z, cc, "lower", ys)[0]
    inf = _makarov_scan(arm0, arm1, 1.0 - p1, p1, z, cc, "upper", ys)[0]
    return float(sup), float(inf)


def _check_t(t):
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")


def cdte_bounds(ce: CellEstimates, z: float, w, c: float, t: float, u_grid=None) -> DteBounds:
    """Bounds on P(Y_1 - Y_0 <= z | W=w) under c-dependence and (1-t) rank invariance."""
    _check_t(t)
    u = default_u_grid() if u_grid is None else np.asarray(u_grid, dtype=float)
    k = ce.index(w)
    ri_hi, mk_hi = _cell_terms(ce, k, z, [c], u, "upper")
    ri_lo, mk_lo = _cell_terms(ce, k, z, [c], u, "lower")
    upper = (1.0 - t) * ri_hi[0] + t * mk_hi[0]
    lower = (1.0 - t) * ri_lo[0] + t * mk_lo[0]
    return DteBounds(float(lower), float(upper))


def dte_bounds(ce: CellEstimates, z: float, c: float, t: float, u_grid=None) -> DteBounds:
    """Cell-mass weighted average of :func:`cdte_bounds`."""
    parts = [cdte_bounds(ce, z, w, c, t, u_grid) for w in ce.cells]
    lo = float(sum(q * b.lower for q, b in zip(ce.q, parts)))
    hi = float(sum(q * b.upper for q, b in zip(ce.q, parts)))
    return DteBounds(lo, hi)


def dte_components(ce: CellEstimates, z: float, c_grid, u_grid=None):
    """(sum_w q_w Pbar_w(c), sum_w q_w U_w(c)) over the c-grid.

    These two curves determine the frontier for every p_lower at this z.
    """
    u = default_u_grid() if u_grid is None else np.asarray(u_grid, dtype=float)
    c = np.asarray(c_grid, dtype=float)
    sp = np.zeros(c.size)
    su = np.zeros(c.size)
    for k in range(len(ce.cells)):
        ri, mk = _cell_terms(ce, k, z, c, u, "upper")
        sp += ce.q[k] * ri
        su += ce.q[k] * mk
    return sp, su


def frontier_from_components(sp, su, p_lower: float, clip: bool = True):
    """Frontier (clipped to [0, 1] unless ``clip`` is False) and the vanishing-denominator mask."""
    num = 1.0 - p_lower - sp
    denom = su - sp
    undefined = denom <= DENOM_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        bf = np.where(undefined, np.where(num >= 0, 1.0, 0.0), num / np.where(undefined, 1.0, denom))
    return (np.clip(bf, 0.0, 1.0) if clip else bf), undefined


def _ate_values(ce, claim: AteClaim, c, tau_grid=None):
    c_top = float(np.max(c))
    bp = ate_breakdown_point(ce, claim.mu, c_search_max=c_top, tau_grid=tau_grid)
    if bp.degenerate:
        return np.zeros(c.size), bp.c_star
    return (c <= bp.c_star).astype(float), bp.c_star


def frontier_values(ce: CellEstimates, claim: Claim, c_grid, u_grid=None, tau_grid=None,
                    cache=None, clip: bool = True):
    """(values, undefined mask, ATE breakdown point or None) for any claim.

    ``clip=False`` leaves DTE values as the raw ratio num / denom.
    """
    c = np.asarray(c_grid, dtype=float)
    if isinstance(claim, DteClaim):
        key = ("dte", claim.z)
        if cache is not None and key in cache:
            sp, su = cache[key]
        else:
            sp, su = dte_components(ce, claim.z, c, u_grid)
            if cache is not None:
                cache[key] = (sp, su)
        vals, undef = frontier_from_components(sp, su, claim.p_lower, clip)
        return vals, undef, None
    if isinstance(claim, AteClaim):
        vals, c_star = _ate_values(ce, claim, c, tau_grid)
        return vals, np.zeros(c.size, dtype=bool), c_star
    if isinstance(claim, JointClaim):
        members = [frontier_values(ce, m, c, u_grid, tau_grid, cache, clip) for m in claim.claims]
        stack = np.vstack([m[0] for m in members])
        vals = stack.min(axis=0) if claim.combinator == "and" else stack.max(axis=0)
        undef = np.any(np.vstack([m[1] for m in members]), axis=0)
        return vals, undef, None
    raise TypeError(f"unsupported claim type {type(claim).__name__}")


def breakdown_frontier(ce: CellEstimates, claim: Claim, c_grid=None, u_grid=None,
                       tau_grid=None) -> FrontierCurve:
    """Estimated breakdown frontier t = BF(c) on ``c_grid`` (default: 50 points on [0, 0.9 c_max])."""
    c = default_c_grid(ce.c_max) if c_grid is None else np.asarray(c_grid, dtype=float)
    if c.ndim != 1 or c.size == 0 or np.any(np.diff(c) < 0):
        raise ValueError("c grid must be a nonempty sorted 1-d array")
    vals, undef, c_star = frontier_values(ce, claim, c, u_grid, tau_grid)
    return FrontierCurve(c, vals, claim, undefined=undef, breakdown_point=c_star)


def robust_region_area(fc: FrontierCurve) -> float:
    """Trapezoid area under the frontier over [0, c_bar], normalised by c_bar."""
    if fc.c_bar <= 0:
        return float(fc.t_values[0])
    c, t = fc.c_grid, fc.t_values
    return float(np.sum(np.diff(c) * (t[1:] + t[:-1]) / 2) / fc.c_bar)


def step_area(c_grid, values) -> float:
    """Area under the least monotone step interpolation of grid values (value at c_j on (c_{j-1}, c_j])."""
    c = np.asarray(c_grid, dtype=float)
    widths = np.diff(np.concatenate([[0.0], c]))
    return float(np.sum(widths * np.asarray(values, dtype=float)))


def in_robust_region(ce: CellEstimates, claim: Claim, c: float, t: float, u_grid=None,
                     tau_grid=None) -> bool:
    vals, _, _ = frontier_values(ce, claim, [c], u_grid, tau_grid)
    return bool(t <= vals[0])


def directional_breakdown_point(ce: CellEstimates, claim: Claim, direction,
                                c_cap: float | None = None, tol: float = 1e-4,
                                u_grid=None, tau_grid=None) -> float:
    """Largest m with m * direction inside the robust region, by bisection along the ray.

    The ray stops where c reaches ``c_cap`` (default 0.9 c_max) or t reaches 1.
    """
    d = np.asarray(direction, dtype=float)
    if d.shape != (2,) or np.any(d < 0) or not np.any(d > 0):
        raise ValueError("direction must be a nonzero pair of nonnegative numbers")
    c_cap = 0.9 * ce.c_max if c_cap is None else c_cap
    limits = [c_cap / d[0] if d[0] > 0 else np.inf, 1.0 / d[1] if d[1] > 0 else np.inf]
    m_hi = float(min(limits))

    if isinstance(claim, AteClaim) and d[1] == 0:
        bp = ate_breakdown_point(ce, claim.mu, c_search_max=c_cap, tol=tol * d[0],
                                 tau_grid=tau_grid)
        return bp.c_star / d[0]

    def inside(m):
        return in_robust_region(ce, claim, m * d[0], m * d[1], u_grid, tau_grid)

    if not inside(0.0):
        return 0.0
    if inside(m_hi):
        return m_hi
    lo, hi = 0.0, m_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if inside(mid):
            lo = mid
        else:
            hi = mid
    return lo


def frontier_family(ce: CellEstimates, z: float, p_lowers: Sequence[float], c_grid,
                    u_grid=None) -> np.ndarray:
    """Frontiers for several p_lower values at one z; rows follow ``p_lowers``."""
    sp, su = dte_components(ce, z, c_grid, u_grid)
    return np.vstack([frontier_from_components(sp, su, p)[0] for p in p_lowers])
