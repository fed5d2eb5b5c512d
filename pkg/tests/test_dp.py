import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wiretap_dp import dp

REFERENCE_DELTA_F = 351.88
REFERENCE_N = 28 * 512


def sorted_quantile(values, q):
    """Order-statistic oracle with linear interpolation (no numpy quantile)."""
    xs = sorted(float(v) for v in values)
    pos = (len(xs) - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])


def test_constant_dataset_bounds():
    b = dp.compute_clip_bounds(np.full((1, 3, 4), 2.5))
    assert b.a == b.b == 2.5


def test_bounds_match_sorted_order_oracle():
    vals = np.arange(1, 1001, dtype=float)
    rng = np.random.default_rng(0)
    data = rng.permutation(vals).reshape(10, 10, 10)
    b = dp.compute_clip_bounds(data, 0.005, 0.995)
    assert b.a == pytest.approx(sorted_quantile(vals, 0.005), abs=1e-12)
    assert b.b == pytest.approx(sorted_quantile(vals, 0.995), abs=1e-12)


@given(arrays(np.float64, st.integers(1, 200), elements=st.floats(-1e3, 1e3)), st.floats(0, 0.49))
def test_bounds_match_oracle_property(values, q):
    b = dp.compute_clip_bounds(values, q, 1.0 - q)
    assert b.a == pytest.approx(sorted_quantile(values, q), abs=1e-9)
    assert b.b == pytest.approx(sorted_quantile(values, 1.0 - q), abs=1e-9)


def test_symmetric_dataset_gives_symmetric_bounds():
    x = np.random.default_rng(1).normal(size=500)
    b = dp.compute_clip_bounds(np.concatenate([x, -x]))
    assert b.a == pytest.approx(-b.b, abs=1e-12)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        dp.compute_clip_bounds(np.zeros((0, 8, 16)))


@given(arrays(np.float64, (6, 5), elements=st.floats(-50, 50)))
def test_clip_properties(z):
    bounds = dp.ClipBounds(-3.0, 4.0)
    once = dp.clip(z, bounds)
    assert np.array_equal(dp.clip(once, bounds), once)
    assert np.all((once >= -3.0) & (once <= 4.0))
    inside = (z >= -3.0) & (z <= 4.0)
    assert np.array_equal(once[inside], z[inside])


def test_closed_form_sensitivity_arithmetic():
    assert dp.sensitivity_closed_form(dp.ClipBounds(0.0, 3.0), 4) == 6.0
    assert dp.sensitivity_closed_form(dp.ClipBounds(1.0, 1.0), 10) == 0.0


def test_reference_sensitivity_range():
    width = REFERENCE_DELTA_F / math.sqrt(REFERENCE_N)
    got = dp.sensitivity_closed_form(dp.ClipBounds(0.0, width), REFERENCE_N)
    assert got == pytest.approx(REFERENCE_DELTA_F, rel=1e-12)
    assert width == pytest.approx(2.93887, abs=1e-5)


def test_extremal_pair_hits_closed_form():
    bounds = dp.ClipBounds(-1.25, 2.0)
    data = np.stack([np.full((3, 4), bounds.a), np.full((3, 4), bounds.b)])
    assert dp.sensitivity_bruteforce(data) == dp.sensitivity_closed_form(bounds, 12)


def test_identical_latents_have_zero_sensitivity():
    assert dp.sensitivity_bruteforce(np.ones((5, 2, 3))) == 0.0


def test_bruteforce_bounded_by_closed_form():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(50, 4, 6))
    bounds = dp.compute_clip_bounds(data)
    clipped = dp.clip(data, bounds)
    flat = clipped.reshape(50, -1)
    oracle = max(
        math.dist(flat[i], flat[j]) for i in range(50) for j in range(i + 1, 50)
    )
    got = dp.sensitivity_bruteforce(clipped)
    assert got == pytest.approx(oracle, rel=1e-12)
    assert got <= dp.sensitivity_closed_form(bounds, 24)


def test_sampler_zero_scale():
    assert np.array_equal(dp.sample_laplace(100, 0.0, 1), np.zeros(100))


def test_sampler_determinism():
    assert np.array_equal(dp.sample_laplace(1000, 2.0, 7), dp.sample_laplace(1000, 2.0, 7))
    assert not np.array_equal(dp.sample_laplace(1000, 2.0, 7), dp.sample_laplace(1000, 2.0, 8))


def test_sampler_rescales_exactly():
    a = dp.sample_laplace(1000, 1.0, 3)
    b = dp.sample_laplace(1000, 4.0, 3)
    np.testing.assert_allclose(b, 4.0 * a, rtol=1e-15)


def test_sampler_moments():
    x = dp.sample_laplace(10**6, 2.0, 11)
    assert 1.99 <= np.mean(np.abs(x)) <= 2.01
    assert np.median(np.abs(x)) == pytest.approx(2.0 * math.log(2.0), rel=0.01)
    assert abs(np.mean(x)) < 0.01


def test_sampler_matches_laplace_cdf():
    x = dp.sample_laplace(10**6, 2.0, 12)
    grid = np.linspace(-10, 10, 201)
    emp = np.searchsorted(np.sort(x), grid, side="right") / x.size
    assert np.max(np.abs(emp - dp.laplace_cdf(grid, 2.0))) < 0.005


def test_sampler_ks_against_scipy():
    stats = pytest.importorskip("scipy.stats")
    x = dp.sample_laplace(10**6, 2.0, 13)
    res = stats.kstest(x, stats.laplace(loc=0.0, scale=2.0).cdf)
    assert res.statistic < 0.005


def test_laplace_cdf_against_scipy():
    stats = pytest.importorskip("scipy.stats")
    grid = np.linspace(-20, 20, 81)
    np.testing.assert_allclose(dp.laplace_cdf(grid, 3.0), stats.laplace.cdf(grid, scale=3.0), atol=1e-15)


@given(
    st.floats(0.1, 10),
    st.floats(-5, 5),
    st.floats(-1, 1),
    st.floats(-20, 20),
    st.floats(0.01, 5),
)
def test_mechanism_likelihood_ratio_bound(eps, x, shift, lo, width):
    """Neighbouring scalar queries (distance <= delta_f) get output
    probabilities within a factor e^eps on any interval."""
    delta_f = 2.0
    scale = dp.DpParams(eps, delta_f).scale
    x2 = x + shift * delta_f
    hi = lo + width

    def prob(center):
        return dp.laplace_cdf(hi - center, scale) - dp.laplace_cdf(lo - center, scale)

    p1, p2 = float(prob(x)), float(prob(x2))
    if p1 > 1e-300 and p2 > 1e-300:
        assert math.log(p1) - math.log(p2) <= eps + 1e-9


def test_huge_epsilon_is_nearly_identity():
    z = np.random.default_rng(0).normal(size=(6, 16))
    out = dp.apply_dp(z, dp.DpParams(1e12, REFERENCE_DELTA_F), 5)
    assert np.max(np.abs(out - z)) < 1e-6 * REFERENCE_DELTA_F


def test_apply_dp_scale_at_reference_sensitivity():
    z = np.zeros((1000, 100))
    out = dp.apply_dp(z, dp.DpParams(1.0, REFERENCE_DELTA_F), 6)
    assert dp.fit_laplace_scale(out - z).scale_hat == pytest.approx(REFERENCE_DELTA_F, rel=0.02)


def test_apply_dp_uses_sampler_stream():
    z = np.random.default_rng(0).normal(size=(6, 16))
    params = dp.DpParams(3.0, 10.0)
    expected = dp.sample_laplace(96, params.scale, 21).reshape(6, 16)
    np.testing.assert_array_equal(dp.apply_dp(z, params, 21), z + expected)


def test_fit_recovers_scale():
    x = np.random.default_rng(4).laplace(0.0, 5.0, size=10**5)
    assert dp.fit_laplace_scale(x).scale_hat == pytest.approx(5.0, rel=0.02)


def test_fit_trivial_cases():
    assert dp.fit_laplace_scale(np.zeros(10)).scale_hat == 0.0
    assert dp.fit_laplace_scale([-1.0, 1.0]).scale_hat == 1.0
    with pytest.raises(ValueError):
        dp.fit_laplace_scale([])


def test_fit_is_the_likelihood_maximizer():
    x = np.random.default_rng(5).laplace(0.0, 1.5, size=2000)
    s_hat = dp.fit_laplace_scale(x).scale_hat

    def loglik(s):
        return -x.size * math.log(2 * s) - np.sum(np.abs(x)) / s

    for s in (0.9 * s_hat, 0.99 * s_hat, 1.01 * s_hat, 1.1 * s_hat):
        assert loglik(s_hat) > loglik(s)


def test_approximate_epsilon_arithmetic():
    fit = dp.LaplaceFit(0.0, REFERENCE_DELTA_F / 10.0, 1)
    assert dp.approximate_epsilon(fit, REFERENCE_DELTA_F) == pytest.approx(10.0, rel=1e-12)
    assert dp.approximate_epsilon(dp.LaplaceFit(0.0, 7.0, 1), 7.0) == 1.0
    assert dp.approximate_epsilon(dp.LaplaceFit(0.0, 0.0, 1), 7.0) == math.inf


@pytest.mark.parametrize("eps", [0.5, 3.0, 30.0])
def test_epsilon_round_trip(eps):
    params = dp.DpParams(eps, 50.0)
    noise = dp.apply_dp(np.zeros(10**5), params, 8)
    got = dp.approximate_epsilon(dp.fit_laplace_scale(noise), params.delta_f)
    assert got == pytest.approx(eps, rel=0.03)


@pytest.mark.parametrize("kwargs", [{"epsilon": 0.0, "delta_f": 1.0}, {"epsilon": 1.0, "delta_f": -1.0}])
def test_dp_params_validation(kwargs):
    with pytest.raises(ValueError):
        dp.DpParams(**kwargs)


@given(st.floats(-10, 0), st.floats(0, 10), st.integers(1, 3000))
def test_extremal_pair_equality_property(a, b, n):
    data = np.stack([np.full(n, a), np.full(n, b)])
    assert dp.sensitivity_bruteforce(data) == dp.sensitivity_closed_form(dp.ClipBounds(a, b), n)
