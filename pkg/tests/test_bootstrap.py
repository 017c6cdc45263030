import math
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bfrontier.bootstrap import (BootstrapConfig, EpsilonSelection, constant_band,
                                 critical_value, default_epsilon_grid, delta_draw, grid_weights,
                                 kernel_arm, min_area_band, min_area_exhaustive, min_area_offsets,
                                 monotone_step_extension, perturb_theta, reference_bandwidths,
                                 select_epsilon, smoothed_resample, bootstrap_draws,
                                 confidence_band)
from bfrontier.empirical import bootstrap_resample, estimate_theta, spawn_seeds
from bfrontier.frontier import (DteClaim, FrontierCurve, default_c_grid,
                                frontier_values)
from bfrontier.montecarlo import McDgp, dgp_sample

from conftest import random_dataset


def curve(values, c_grid=None):
    v = np.asarray(values, dtype=float)
    c = np.linspace(0.01, 0.2, v.size) if c_grid is None else np.asarray(c_grid, float)
    return FrontierCurve(c, v, DteClaim(0.0, 0.5), float(c[-1]))


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("kw", [{"B": 0}, {"epsilon": 0.0}, {"epsilon": -1.0}, {"alpha": 1.0},
                                {"sigma_mode": "other"}])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        BootstrapConfig(**kw)


def test_config_naive_step():
    assert BootstrapConfig().step(400) == pytest.approx(0.05)
    assert BootstrapConfig(epsilon=0.3).step(400) == 0.3


# ---------------------------------------------------------------- critical values

def test_critical_value_order_statistic():
    draws = np.arange(1.0, 101.0)[:, None]
    assert critical_value(draws, alpha=0.05) == 95.0


def test_critical_value_zero_draws():
    assert critical_value(np.zeros((30, 7))) == 0.0


def test_critical_value_scale_equivariance():
    rng = np.random.default_rng(0)
    D = rng.normal(size=(200, 9))
    z1 = critical_value(D, np.ones(9))
    z2 = critical_value(D, np.full(9, 2.0))
    assert z2 == pytest.approx(z1 / 2, rel=1e-14)


def test_critical_value_errors():
    with pytest.raises(ValueError):
        critical_value(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        critical_value(np.zeros((3, 3)), np.zeros(3))


# ---------------------------------------------------------------- delta draws

def _pair(seed):
    ds = random_dataset(seed)
    ce = estimate_theta(ds)
    ce_star = None
    for child in spawn_seeds(seed, 20):
        try:
            cand = estimate_theta(bootstrap_resample(ds, np.random.default_rng(child)))
        except Exception:
            continue
        if cand.cells == ce.cells:
            ce_star = cand
            break
    assert ce_star is not None
    c_top = 0.5 * min(ce.c_max, ce_star.c_max)
    return ds, ce, ce_star, np.linspace(c_top / 10, c_top, 10)


def test_identical_resample_gives_zero():
    ds, ce, _, c = _pair(1)
    d = delta_draw(ce, ce, 0.1, DteClaim(0.0, 0.3), c)
    np.testing.assert_array_equal(d, 0.0)


@pytest.mark.parametrize("clip", [False, True])
def test_naive_bootstrap_identity(clip):
    worst = 0.0
    for seed in range(50):
        ds, ce, ce_star, c = _pair(seed)
        claim = DteClaim(float(np.median(ds.y)) * 0.1, 0.3 + 0.01 * seed)
        d = delta_draw(ce, ce_star, 1 / math.sqrt(ds.n), claim, c, clip=clip)
        direct = math.sqrt(ds.n) * (frontier_values(ce_star, claim, c, clip=clip)[0]
                                    - frontier_values(ce, claim, c, clip=clip)[0])
        worst = max(worst, float(np.max(np.abs(d - direct))))
    assert worst <= 1e-12


def test_doubling_epsilon_matches_direct_formula():
    ds, ce, ce_star, c = _pair(3)
    claim = DteClaim(0.0, 0.4)
    eps = 2.0 / math.sqrt(ds.n)
    for e in (eps, 2 * eps):
        s = e * math.sqrt(ds.n)
        theta, _ = perturb_theta(ce, ce_star, s, float(c.max()))
        raw = [frontier_values(t, claim, c, clip=False)[0] for t in (theta, ce)]
        np.testing.assert_allclose(delta_draw(ce, ce_star, e, claim, c), (raw[0] - raw[1]) / e,
                                   rtol=0, atol=1e-12)


def test_perturbed_theta_is_admissible():
    ds, ce, ce_star, c = _pair(5)
    theta, _ = perturb_theta(ce, ce_star, 6.0, float(c.max()))
    assert theta.q.sum() == pytest.approx(1.0) and np.all(theta.q >= 0)
    assert np.all(theta.p1 >= c.max() + 1e-6 - 1e-15)
    assert np.all(theta.p1 <= 1 - c.max() - 1e-6 + 1e-15)
    for a0, a1 in theta.arms:
        for arm in (a0, a1):
            v = arm.cdf(np.linspace(-20, 20, 401))
            assert np.all(np.diff(v) >= 0) and v[0] >= 0 and v[-1] == 1.0


def test_bootstrap_draws_chunking_invariant():
    ds = random_dataset(6, n=80)
    ce = estimate_theta(ds)
    c = default_c_grid(ce.c_max, points=8)
    claim = DteClaim(0.0, 0.4)
    (a,), fa = bootstrap_draws(ds, ce, claim, c, [0.2], 12, 7, threads=1)
    (b,), fb = bootstrap_draws(ds, ce, claim, c, [0.2], 12, 7, threads=3)
    np.testing.assert_array_equal(a, b)
    assert fa == fb


# ---------------------------------------------------------------- min-area solver

def random_draws(rng):
    B = int(rng.integers(2, 13))
    J = int(rng.integers(1, 7))
    kind = rng.integers(0, 3)
    if kind == 0:
        D = rng.normal(size=(B, J))
    elif kind == 1:
        D = rng.integers(-2, 4, size=(B, J)).astype(float)
    else:
        D = np.abs(rng.normal(size=(B, J))) * rng.uniform(0.1, 3.0, size=J)
    c = np.sort(rng.uniform(0.0, 1.0, J))
    return D, c, float(rng.choice([0.05, 0.1, 0.2, 0.3, 0.5]))


def test_min_area_matches_exhaustive():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        D, c, alpha = random_draws(rng)
        sol = min_area_offsets(D, c, alpha)
        assert sol.optimal
        assert sol.area == min_area_exhaustive(D, c, alpha)


def test_single_zero_draw():
    fc = curve([0.9, 0.7, 0.4])
    band = min_area_band(fc, np.zeros((1, 3)), 0.05, 100)
    np.testing.assert_array_equal(band.k_values, 0.0)
    np.testing.assert_array_equal(band.lb_on_grid, fc.t_values)


def test_constant_band_reproduces_critical_value():
    rng = np.random.default_rng(1)
    D = rng.normal(size=(300, 6))
    fc = curve(np.linspace(0.9, 0.2, 6))
    band = constant_band(fc, D, 0.1, 400)
    z = critical_value(D, None, 0.1)
    np.testing.assert_allclose(band.k_values, z / 20.0, rtol=0, atol=0)


def test_min_area_dominates_constant_band():
    rng = np.random.default_rng(3)
    for _ in range(30):
        D = rng.normal(size=(100, 12)) * rng.uniform(0.2, 2.0, 12)
        fc = curve(np.sort(rng.uniform(0.5, 1.0, 12))[::-1])
        w = grid_weights(fc.c_grid)
        lo = min_area_band(fc, D, 0.05, 500)
        co = constant_band(fc, D, 0.05, 500)
        assert w @ lo.k_values <= w @ co.k_values + 1e-15


def test_band_below_frontier_and_coverage_on_draws():
    rng = np.random.default_rng(4)
    for B, alpha in [(100, 0.05), (60, 0.1), (37, 0.2)]:
        D = rng.normal(size=(B, 10))
        fc = curve(np.linspace(1.0, 0.1, 10))
        band = min_area_band(fc, D, alpha, 250)
        assert np.all(band.k_values >= 0)
        assert np.all(band.lb_on_grid <= fc.t_values)
        target = math.ceil((1 - alpha) * B - 1e-9) / B
        assert band.coverage_on_draws == target


# ---------------------------------------------------------------- step extension

def test_step_extension_rule():
    c = np.array([0.1, 0.2, 0.3])
    f = monotone_step_extension(c, [0.8, 0.5, 0.2], c_bar=0.4)
    assert f(0.0) == 0.8 and f(0.1) == 0.8
    assert f(0.15) == 0.5 and f(0.2) == 0.5
    assert f(0.3) == 0.2 and f(0.31) == 0.0 and f(0.4) == 0.0
    with pytest.raises(ValueError):
        f(0.5)
    with pytest.raises(ValueError):
        f(-0.1)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.integers(0, 10_000))
def test_step_extension_monotone_and_iff(vals, seed):
    rng = np.random.default_rng(seed)
    J = len(vals)
    c = np.cumsum(rng.uniform(0.01, 0.1, J))
    lb = np.sort(np.asarray(vals))[::-1]
    f = monotone_step_extension(c, lb)
    x = np.unique(np.r_[np.linspace(0, c[-1], 501), c])
    ext = f(x)
    assert np.all(np.diff(ext) <= 0)
    np.testing.assert_array_equal(f(c), lb)
    # synthetic nonincreasing truth: a step function with random drops plus a slope
    knots = np.sort(rng.uniform(0, c[-1], 4))
    shift = rng.uniform(-0.8, 0.3)

    def truth(t):
        return 1.2 + shift - 0.3 * t - 0.25 * np.searchsorted(knots, t, side="right")

    on_grid = bool(np.all(lb <= truth(c)))
    everywhere = bool(np.all(ext <= truth(x)))
    assert on_grid == everywhere


# ---------------------------------------------------------------- smoothed bootstrap

def test_zero_bandwidth_is_plain_bootstrap():
    ds = random_dataset(9, n_cells=2)
    h0 = {k: 0.0 for k in reference_bandwidths(ds)}
    a = smoothed_resample(ds, 5, h0)
    b = bootstrap_resample(ds, 5)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.x, b.x)


def test_smoothed_resample_seeded():
    ds = random_dataset(10)
    np.testing.assert_array_equal(smoothed_resample(ds, 3).y, smoothed_resample(ds, 3).y)
    assert not np.array_equal(smoothed_resample(ds, 3).y, smoothed_resample(ds, 4).y)


def test_bandwidth_fallback_for_singleton_arm():
    ds = random_dataset(11, n=50, n_cells=1)
    y, x = ds.y.copy(), np.zeros(ds.n, dtype=int)
    x[0] = 1
    from bfrontier.data import Dataset
    one = Dataset.from_arrays(y, x)
    h = reference_bandwidths(one)
    assert h[(1, 0)] > 0
    assert h[(1, 0)] == pytest.approx(0.5 * 1.06 * np.std(y, ddof=1) * y.size ** -0.2)


def test_smoothed_draws_converge_to_kernel_cdf():
    ds = random_dataset(12, n=200, n_cells=1)
    h = reference_bandwidths(ds)
    rng = np.random.default_rng(0)
    pooled = []
    total = 0
    while total < 100_000:
        s = smoothed_resample(ds, rng, h)
        arm = s.y[s.x == 0]
        pooled.append(arm)
        total += arm.size
    sample = np.sort(np.concatenate(pooled))
    target = kernel_arm(ds.y[ds.x == 0], h[(0, 0)])
    F = target.cdf(sample)
    n = sample.size
    ks = max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))
    assert ks < 0.02


def test_kernel_arm_is_cdf():
    arm = kernel_arm(np.array([0.0, 1.0, 1.0, 3.0]), 0.2)
    v = arm.cdf(np.linspace(-10, 10, 201))
    assert np.all(np.diff(v) >= 0) and v[0] == 0.0 and v[-1] == 1.0
    logistic = lambda t: 1.0 / (1.0 + math.exp(-t))
    expected = (logistic(5.0) + 1.0 + logistic(-10.0)) / 4
    assert arm.cdf(1.0) == pytest.approx(expected, abs=1e-3)
    with pytest.raises(ValueError):
        kernel_arm(np.array([1.0]), 0.0)


# ---------------------------------------------------------------- epsilon selection

def test_single_element_grid():
    ds = random_dataset(13)
    sel = select_epsilon(ds, DteClaim(0.0, 0.5), eps_grid=[0.123])
    assert isinstance(sel, EpsilonSelection) and sel.epsilon == 0.123


def test_default_epsilon_grid():
    np.testing.assert_allclose(default_epsilon_grid(500) * math.sqrt(500),
                               [0.5, 1, 1.5, 2, 4, 6, 8, 10])


def test_select_epsilon_small_run_is_deterministic():
    ds = dgp_sample(McDgp(), 150, 1)
    kw = dict(eps_grid=default_epsilon_grid(150)[[1, 4]], B_outer=4, B_inner=20, seed=2,
              threads=1)
    a = select_epsilon(ds, DteClaim(0.0, 0.25), **kw)
    b = select_epsilon(ds, DteClaim(0.0, 0.25), **kw)
    assert a.epsilon == b.epsilon and a.epsilon in kw["eps_grid"]
    np.testing.assert_array_equal(a.coverage, b.coverage)
    assert np.all((a.coverage >= 0) & (a.coverage <= 1))


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("BFRONTIER_SLOW"), reason="set BFRONTIER_SLOW=1 (hours)")
def test_selected_ratio_on_mc_dgp():
    hits = 0
    for s in range(20):
        ds = dgp_sample(McDgp(), 500, 100 + s)
        sel = select_epsilon(ds, DteClaim(0.0, 0.25), seed=s)
        hits += round(sel.ratio, 6) in (1.5, 2.0, 4.0)
    assert hits / 20 >= 0.8


# ---------------------------------------------------------------- end to end

def test_confidence_band_end_to_end():
    ds = random_dataset(14, n=120)
    cfg = BootstrapConfig(B=40, epsilon=2 / math.sqrt(ds.n), seed=1, threads=1)
    band = confidence_band(ds, DteClaim(0.0, 0.4), cfg)
    assert np.all(band.lb_on_grid <= band.frontier)
    assert band.coverage_on_draws >= 0.95
    assert band.meta["B"] == 40 and band.meta["clip_draws"] is False
    again = confidence_band(ds, DteClaim(0.0, 0.4), cfg)
    np.testing.assert_array_equal(band.lb_on_grid, again.lb_on_grid)
    np.testing.assert_array_equal(band.lb_step(band.c_grid), band.lb_on_grid)
