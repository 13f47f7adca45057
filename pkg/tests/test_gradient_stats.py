import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oglr import gradient_stats as gs
from oglr.gradient_stats import GradientField, MetricSpace2x2

finite = st.floats(-50, 50, allow_nan=False)


def test_gradients_constant():
    g = gs.patch_gradients(np.full(9, 3.0), 3)
    assert not g.gx.any() and not g.gy.any()


def test_gradients_ramp():
    p = np.tile(np.arange(4.0), 4)
    g = gs.patch_gradients(p, 4)
    np.testing.assert_array_equal(g.gx.reshape(4, 4), [[1, 1, 1, 0]] * 4)
    assert not g.gy.any()


def test_gradients_2x2():
    g = gs.patch_gradients([0, 1, 2, 4], 2)
    np.testing.assert_array_equal(g.gx, [1, 0, 2, 0])
    np.testing.assert_array_equal(g.gy, [2, 3, 0, 0])


def test_gradients_side_error():
    with pytest.raises(ValueError):
        gs.patch_gradients([1.0], 1)


def test_image_gradients_agree_with_patch(rng):
    img = rng.normal(size=(5, 5))
    gx, gy = gs.image_gradients(img)
    g = gs.patch_gradients(img.ravel(), 5)
    np.testing.assert_array_equal(gx.ravel(), g.gx)
    np.testing.assert_array_equal(gy.ravel(), g.gy)


def test_sigma_g_identical_patches(rng):
    p = rng.normal(size=16)
    assert gs.estimate_sigma_g(np.stack([p] * 4), 4) == 0.0


def test_sigma_g_hand_example():
    assert gs.sigma_g_from_gradients([[0], [2]], [[0], [0]], 1.0) == pytest.approx(1.0)


def test_sigma_g_insufficient():
    with pytest.raises(ValueError, match="insufficient cluster"):
        gs.estimate_sigma_g(np.zeros((1, 4)), 2)


def test_sigma_g_matches_loop_oracle(rng):
    pats = rng.normal(size=(5, 9))
    nu = 1.3
    vals = []
    for i in range(9):
        r, c = divmod(i, 3)
        p = pats.reshape(5, 3, 3)
        gx = p[:, r, c + 1] - p[:, r, c] if c < 2 else np.zeros(5)
        gy = p[:, r + 1, c] - p[:, r, c] if r < 2 else np.zeros(5)
        vals += [np.var(gx, ddof=1), np.var(gy, ddof=1)]
    assert gs.estimate_sigma_g(pats, 3, nu) == pytest.approx(nu * np.mean(vals), rel=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10))
def test_sigma_g_scales_quadratically(seed, c):
    pats = np.random.default_rng(seed).normal(size=(4, 9))
    assert gs.estimate_sigma_g(c * pats, 3) == pytest.approx(c * c * gs.estimate_sigma_g(pats, 3),
                                                             rel=1e-9)


def fields(rng, k, m):
    return [GradientField(rng.normal(size=m), rng.normal(size=m)) for _ in range(k)]


def test_posterior_noiseless(rng):
    fs = fields(rng, 3, 4)
    g, s2 = gs.posterior_gradient(fs, 0.0, 2.0)
    np.testing.assert_allclose(g[:, 0], np.mean([f.gx for f in fs], axis=0))
    assert s2 == 0


def test_posterior_k1_equal_variances(rng):
    fs = fields(rng, 1, 4)
    g, s2 = gs.posterior_gradient(fs, 3.0, 3.0)
    np.testing.assert_allclose(g[:, 1], fs[0].gy / 2)
    assert s2 == pytest.approx(1.5)


def test_posterior_large_k_limit():
    f = GradientField(np.array([2.0]), np.array([-1.0]))
    g, _ = gs.posterior_gradient([f] * 100_000, 5.0, 1.0)
    np.testing.assert_allclose(g[0], [2.0, -1.0], rtol=1e-4)


@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(0, 10), st.floats(0.1, 10))
def test_posterior_linear(seed, c, sg2, sp2):
    fs = fields(np.random.default_rng(seed), 3, 5)
    scaled = [GradientField(c * f.gx, c * f.gy) for f in fs]
    g, s2 = gs.posterior_gradient(fs, sg2, sp2)
    gc, s2c = gs.posterior_gradient(scaled, sg2, sp2)
    np.testing.assert_allclose(gc, c * g, atol=1e-12)
    assert s2 == s2c == pytest.approx(sg2 / (3 + sg2 / sp2))


def test_gradient_stats_bundle(rng):
    pats = rng.normal(size=(4, 9))
    st_ = gs.gradient_stats(pats, 3, 2.0)
    assert st_.sigma_tilde2 == pytest.approx(st_.sigma_g2 / (4 + st_.sigma_g2 / 2.0))


def test_prior_variance_floor():
    assert gs.estimate_prior_variance(np.full((5, 5), 7.0)) == gs.PRIOR_VARIANCE_FLOOR


def test_optimal_metric_zero_gradient():
    m = gs.optimal_metric([0.0, 0.0], 2.5)
    np.testing.assert_allclose(m.matrix, 2.5 * np.eye(2))
    assert m.mu == pytest.approx(1.0)


def test_optimal_metric_34():
    m = gs.optimal_metric([3.0, 4.0], 1.0)
    np.testing.assert_allclose(sorted(np.linalg.eigvalsh(m.matrix)), [1, 26])
    assert m.mu == pytest.approx(math.sqrt(26))
    assert m.alpha == pytest.approx(math.sqrt(26))
    assert m.theta == pytest.approx(math.atan2(4, 3))


@given(finite, finite, st.floats(0.01, 100), st.floats(0.01, 100))
def test_metric_identities(gx, gy, beta, c):
    m = gs.optimal_metric([gx, gy], beta)
    n2 = gx * gx + gy * gy
    assert m.det > 0 and m.g11 > 0
    assert m.mu**2 == pytest.approx(1 + n2 / beta, rel=1e-10)
    assert m.alpha**2 == pytest.approx(beta * n2 + beta**2, rel=1e-10)
    np.testing.assert_allclose(m.reconstruct(), m.matrix, rtol=1e-10, atol=1e-10 * m.matrix.max())
    if n2 > 1e-6:
        assert gs.optimal_metric([c * gx, c * gy], beta).theta == pytest.approx(m.theta, abs=1e-9)


def test_ideal_metric_examples():
    np.testing.assert_allclose(gs.ideal_metric([1, 0], 1.0).matrix, np.diag([2.0, 1.0]))
    np.testing.assert_allclose(gs.ideal_metric([0, 0], 0.3).matrix, 0.3 * np.eye(2))
    mus = [gs.ideal_metric([1, 1], b).mu for b in (1, 1e-2, 1e-4)]
    assert mus[0] < mus[1] < mus[2]
    assert mus[2] == pytest.approx(math.sqrt(2) / 1e-2, rel=1e-3)
    with pytest.raises(ValueError):
        gs.ideal_metric([1, 0], 0.0)


def test_metric_not_spd():
    with pytest.raises(ValueError):
        MetricSpace2x2(1.0, 2.0, 1.0)


def test_metric_norm_examples():
    assert gs.metric_norm(MetricSpace2x2(1, 0, 1), [3, 4]) == pytest.approx(25)
    assert gs.metric_norm(MetricSpace2x2(2, 0, 1), [1, 1]) == pytest.approx(1.5)
    m = gs.optimal_metric([3.0, 4.0], 1.0)
    v = np.array([0.6, 0.8]) * 2
    assert gs.metric_norm(m, v) == pytest.approx(4 / (m.alpha * m.mu))


def test_metric_norm_singular():
    with pytest.raises(ValueError):
        gs.metric_norm(MetricSpace2x2(1.0, 0.0, 1e-20), [1, 1])


def test_diffusion_eigenvalues():
    assert gs.diffusion_eigenvalues(0.0, 2.0, 0.3) == pytest.approx((1.0, 1.0))
    assert gs.diffusion_eigenvalues(2.0, 2.0, 0.5) == pytest.approx((0.5, 1.0))


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 10), st.floats(0, 2))
def test_diffusion_ratio_below_one(norm, beta, gamma):
    l1, l2 = gs.diffusion_eigenvalues(norm, beta, gamma)
    assert l1 / l2 < 1


def test_contrast_parameter():
    assert gs.contrast_parameter(1.0, 0.0) == pytest.approx(0.70711, abs=1e-5)
    assert gs.contrast_parameter(1.0, 0.5) == pytest.approx(1.0)
    ts = [gs.contrast_parameter(1.0, g) for g in np.linspace(0, 0.99, 20)]
    assert np.all(np.diff(ts) > 0)
    with pytest.raises(ValueError, match="no backward regime"):
        gs.contrast_parameter(1.0, 1.0)


def test_flux_derivative_examples():
    for g in (0.0, 0.5, 1.0, 2.0):
        assert gs.flux_derivative(0.0, 1.5, g) == pytest.approx(1.0)
    for g in (0.0, 0.3, 0.9):
        t = gs.contrast_parameter(1.5, g)
        assert gs.flux_derivative(t, 1.5, g) == pytest.approx(0.0, abs=1e-12)
    assert np.all(gs.flux_derivative(np.linspace(0, 100, 500), 1.5, 1.0) > 0)


@pytest.mark.parametrize("gamma", [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0])
@pytest.mark.parametrize("beta", [0.1, 1.0, 7.0])
def test_flux_derivative_matches_central_difference(gamma, beta):
    x = np.linspace(0, 10 * beta, 201)
    h = 1e-5
    num = (gs.flux(x + h, beta, gamma) - gs.flux(x - h, beta, gamma)) / (2 * h)
    np.testing.assert_allclose(gs.flux_derivative(x, beta, gamma), num, atol=1e-6)


@pytest.mark.parametrize("gamma", [0.0, 0.3, 0.6, 0.95, 1.0, 1.7])
def test_flux_sign_structure(gamma):
    beta = 2.0
    x = np.linspace(0, 20 * beta, 4001)
    d = gs.flux_derivative(x, beta, gamma)
    if gamma < 1:
        t = gs.contrast_parameter(beta, gamma)
        assert np.all(d[x < t * (1 - 1e-9)] > 0)
        assert np.all(d[x > t * (1 + 1e-9)] < 0)
    else:
        assert np.all(d > 0)
