import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bfrontier.bootstrap import constant_band
from bfrontier.empirical import estimate_theta
from bfrontier.frontier import (AteClaim, DteClaim, breakdown_frontier, default_c_grid,
                                default_u_grid)
from bfrontier.montecarlo import McDgp, dgp_sample, population_frontier
from bfrontier.smoothing import (SmoothingConfig, SmoothingError, lp_soft_infimum,
                                 smooth_step, smoothed_band, smoothed_frontier,
                                 smoothed_prerearrangement, soft_min0_lower, soft_min0_upper,
                                 soft_minmax, spline_step)

from conftest import random_dataset

finite = st.floats(-50, 50, allow_nan=False)


# ---------------------------------------------------------------- soft min / max

def test_soft_minmax_examples():
    assert soft_minmax([0.3, 0.3], 17.0) == pytest.approx(0.3)
    assert soft_minmax([0.0, 1.0], 1.0) == pytest.approx(math.e / (1 + math.e), abs=1e-15)
    assert soft_minmax([0.0, 1.0], 1.0) == pytest.approx(0.7310585786300049)


def test_soft_minmax_limits():
    v = np.array([0.2, 0.5, 0.9, 0.3])
    assert abs(soft_minmax(v, 1e3) - 0.9) < 1e-6
    assert abs(soft_minmax(v, -1e3) - 0.2) < 1e-6


def test_soft_minmax_no_overflow():
    assert soft_minmax([1e3, 0.0], 1e4) == pytest.approx(1e3)
    with pytest.raises(ValueError):
        soft_minmax([], 1.0)


@given(st.lists(finite, min_size=1, max_size=8), st.floats(0.01, 500))
def test_soft_minmax_envelopes(vals, k):
    assert soft_minmax(vals, k) <= max(vals) + 1e-9
    assert soft_minmax(vals, -k) >= min(vals) - 1e-9


def test_config_invariants():
    with pytest.raises(ValueError):
        SmoothingConfig(kappa_minmax=0.0)
    with pytest.raises(ValueError):
        SmoothingConfig(p_norm=0.5)


# ---------------------------------------------------------------- smooth step

def test_smooth_step_at_zero():
    assert smooth_step(0.0, 50.0, "lower") == 0.0
    assert smooth_step(0.0, 50.0, "upper") == 1.0
    with pytest.raises(ValueError):
        smooth_step(0.0, 0.0, "lower")
    with pytest.raises(ValueError):
        smooth_step(0.0, 1.0, "middle")


@given(finite, st.floats(0.1, 1e4))
def test_smooth_step_sandwich(x, k):
    ind = 1.0 if x >= 0 else 0.0
    assert smooth_step(x, k, "lower") <= ind <= smooth_step(x, k, "upper")


@pytest.mark.parametrize("kappa", [1.0, 10.0, 200.0])
def test_smooth_step_l1_distance(kappa):
    # the spline integrates to 1/2 on [0, 1], so each side sits 1/(2 kappa) from the indicator
    x = np.linspace(-2.0 / kappa, 2.0 / kappa, 400_001)
    ind = (x >= 0).astype(float)
    dx = x[1] - x[0]
    for side in ("lower", "upper"):
        dist = np.sum(np.abs(smooth_step(x, kappa, side) - ind)) * dx
        assert dist <= 1.0 / kappa
        assert dist == pytest.approx(0.5 / kappa, rel=1e-4)


def test_spline_endpoints():
    np.testing.assert_array_equal(spline_step([-1.0, 0.0, 0.5, 1.0, 2.0]), [0, 0, 0.5, 1, 1])


# ---------------------------------------------------------------- smoothed pre-rearrangement

def test_spr_constant_functions():
    u = default_u_grid()
    assert smoothed_prerearrangement(np.ones(u.size), 0.0, 200.0, "upper") == 0.0
    assert smoothed_prerearrangement(np.ones(u.size), 0.0, 200.0, "lower") == 0.0
    for side in ("lower", "upper"):
        assert smoothed_prerearrangement(-np.ones(u.size), 0.0, 200.0, side) == 1.0


def test_spr_ordering_and_limit():
    rng = np.random.default_rng(0)
    u = default_u_grid()
    for _ in range(50):
        a, b, z = rng.normal(size=3)
        f = a + b * u + 0.3 * np.sin(7 * u * rng.uniform(0.5, 2))
        pr = np.mean(f <= z)
        lo = smoothed_prerearrangement(f, z, 50.0, "upper")
        hi = smoothed_prerearrangement(f, z, 50.0, "lower")
        assert lo <= pr + 1e-15 and pr <= hi + 1e-15
        for side in ("lower", "upper"):
            assert abs(smoothed_prerearrangement(f, z, 1e4, side) - pr) <= 2.0 / u.size


# ---------------------------------------------------------------- Lp soft infimum

@pytest.mark.parametrize("p", [1.0, 2.0, 64.0, 256.0])
def test_lp_constant(p):
    assert lp_soft_infimum(np.full(50, -0.37), p) == pytest.approx(-0.37, abs=1e-14)


@given(st.lists(st.floats(-2, -1e-3), min_size=1, max_size=30), st.floats(1, 300))
def test_lp_above_infimum(vals, p):
    assert lp_soft_infimum(np.array(vals), p) >= min(vals) - 1e-12


def test_lp_p64_piecewise():
    y = np.linspace(0, 1, 20_001)
    # the infimum is attained on a set of measure 0.4, as for a flat Makarov trough
    f = np.where(y < 0.3, -0.2, np.where(y < 0.7, -0.9, -0.4))
    widths = np.full(y.size, y[1] - y[0])
    assert abs(lp_soft_infimum(f, 64.0, widths) - f.min()) < 0.02


def test_lp_zero_norm():
    with pytest.raises(SmoothingError, match="soft infimum undefined at zero norm"):
        lp_soft_infimum(np.zeros(10), 8.0)


def test_soft_min0_envelopes():
    x = np.linspace(-1, 1, 2001)
    assert np.all(soft_min0_upper(x, 20.0) >= np.minimum(x, 0) - 1e-15)
    assert np.all(soft_min0_lower(x, 20.0) <= np.minimum(x, 0) + 1e-15)


# ---------------------------------------------------------------- smoothed frontier

def test_envelope_on_random_datasets():
    worst = -np.inf
    for seed in range(100):
        ds = random_dataset(seed, ties=seed % 4 == 0)
        ce = estimate_theta(ds)
        c = default_c_grid(ce.c_max)
        claim = DteClaim(float(np.quantile(ds.y, 0.3) * 0.2), 0.1 + 0.8 * (seed % 9) / 8)
        gap = smoothed_frontier(ce, claim, c).t_values - breakdown_frontier(ce, claim, c).t_values
        worst = max(worst, float(gap.max()))
    assert worst <= 1e-12


def test_gap_shrinks_along_kappa_ladder():
    for seed in range(10):
        ce = estimate_theta(random_dataset(seed))
        c = default_c_grid(ce.c_max)
        claim = DteClaim(0.0, 0.4)
        bf = breakdown_frontier(ce, claim, c).t_values
        gaps = np.array([bf - smoothed_frontier(ce, claim, c, SmoothingConfig(k, k, 64)).t_values
                         for k in 100.0 * 2 ** np.arange(6)])
        assert np.all(np.diff(gaps, axis=0) <= 1e-9)


def test_degenerate_claim_is_zero():
    ce = estimate_theta(random_dataset(3))
    c = default_c_grid(ce.c_max)
    claim = DteClaim(1e6, 0.999)
    assert np.all(breakdown_frontier(ce, claim, c).t_values == 0)
    np.testing.assert_array_equal(smoothed_frontier(ce, claim, c).t_values, 0.0)


def test_ate_claim_rejected():
    ce = estimate_theta(random_dataset(3))
    with pytest.raises(TypeError):
        smoothed_frontier(ce, AteClaim(0.0))


def test_convergence_on_mc_sample():
    ds = dgp_sample(McDgp(), 2000, 7)
    ce = estimate_theta(ds)
    c = default_c_grid(ce.c_max)
    cfg = SmoothingConfig(1e4, 1e4, 256)
    worst = 0.0
    for p in (0.1, 0.25, 0.5, 0.75, 0.9):
        claim = DteClaim(0.0, p)
        gap = np.abs(smoothed_frontier(ce, claim, c, cfg).t_values
                     - breakdown_frontier(ce, claim, c).t_values)
        worst = max(worst, float(gap.max()))
    assert worst < 0.01


# ---------------------------------------------------------------- smoothed band

def test_zero_draw_band_equals_sbf():
    ce = estimate_theta(random_dataset(5))
    fc = smoothed_frontier(ce, DteClaim(0.0, 0.3))
    band = constant_band(fc, np.zeros((1, fc.c_grid.size)), 0.05, 100, method="smoothed")
    np.testing.assert_array_equal(band.lb_on_grid, fc.t_values)


def test_band_ordering():
    ds = random_dataset(6, n=150)
    ce = estimate_theta(ds)
    c = default_c_grid(ce.c_max, points=20)
    claim = DteClaim(0.0, 0.3)
    band = smoothed_band(ds, claim, c, B=30, seed=2)
    bf = breakdown_frontier(ce, claim, c).t_values
    assert band.method == "smoothed"
    assert np.all(band.lb_on_grid <= band.frontier) and np.all(band.frontier <= bf + 1e-12)
    again = smoothed_band(ds, claim, c, B=30, seed=2)
    np.testing.assert_array_equal(band.lb_on_grid, again.lb_on_grid)


@pytest.mark.slow
def test_smoothed_band_coverage_on_mc_dgp():
    dgp = McDgp()
    claim = DteClaim(0.0, 0.25)
    c = np.linspace(0.0, 0.4, 30)
    truth = population_frontier(dgp, claim, c).t_values
    hits = []
    for s in range(100):
        ds = dgp_sample(dgp, 500, 1000 + s)
        band = smoothed_band(ds, claim, c, B=100, seed=s, threads=1)
        hits.append(bool(np.all(band.lb_on_grid <= truth + 1e-12)))
    assert np.mean(hits) >= 0.95 - 0.02
