import numpy as np
import pytest

from conftest import small_set
from splatlab.loss import coupled_reg_grad, dssim, photometric_loss, regularization_value
from splatlab.primitives import activate_scale, opacity_derivative


def per_pixel_photometric_oracle(render, target, lambda1):
    """Scalar-loop L1 part plus the library DSSIM value (value check only)."""
    h, w, c = render.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            for k in range(c):
                total += abs(render[i, j, k] - target[i, j, k])
    l1 = total / (h * w * c)
    value = (1 - lambda1) * l1
    if lambda1 > 0:
        value += lambda1 * dssim(render, target)[0]
    return value


class TestPhotometric:
    def test_identical_images(self, rng):
        img = rng.random((16, 16, 3))
        v, g = photometric_loss(img, img.copy(), 0.2)
        assert v == 0.0
        # zero up to stabilizer-level float noise in the SSIM statistics
        assert np.abs(g).max() < 1e-14

    def test_pure_l1_constant_difference(self):
        r = np.zeros((16, 16, 3))
        t = np.full((16, 16, 3), 0.1)
        v, _ = photometric_loss(r, t, 0.0)
        assert v == pytest.approx(0.1, rel=1e-12)

    def test_matches_scalar_oracle(self, rng):
        r = rng.random((16, 16, 3))
        t = rng.random((16, 16, 3))
        v, _ = photometric_loss(r, t, 0.2)
        assert v == pytest.approx(per_pixel_photometric_oracle(r, t, 0.2), rel=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            photometric_loss(rng.random((16, 16, 3)), rng.random((16, 12, 3)), 0.2)

    def test_bad_lambda_rejected(self, rng):
        img = rng.random((16, 16, 3))
        with pytest.raises(ValueError):
            photometric_loss(img, img, 1.5)

    def test_gradient_matches_finite_differences(self, rng):
        r = rng.random((16, 16, 3))
        # keep per-pixel differences away from the |.| kink
        t = np.clip(r + rng.choice([-1, 1], size=r.shape) * rng.uniform(0.05, 0.3, r.shape), 0, 1)
        _, g = photometric_loss(r, t, 0.2)
        h = 1e-5
        for (i, j, k) in [(0, 0, 0), (5, 3, 1), (15, 15, 2), (8, 11, 0), (3, 14, 2)]:
            rp = r.copy(); rp[i, j, k] += h
            rm = r.copy(); rm[i, j, k] -= h
            fd = (photometric_loss(rp, t, 0.2)[0] - photometric_loss(rm, t, 0.2)[0]) / (2 * h)
            assert fd == pytest.approx(g[i, j, k], rel=1e-4, abs=1e-10)


class TestDssim:
    def test_identical_is_zero(self, rng):
        img = rng.random((16, 16, 3))
        v, g = dssim(img, img.copy())
        assert v == 0.0
        assert np.abs(g).max() < 1e-12

    def test_constant_black_vs_white(self):
        a = np.zeros((16, 16, 3))
        b = np.ones((16, 16, 3))
        v, _ = dssim(a, b)
        c1 = 0.01 ** 2
        # closed-form SSIM of constants: C1 / (1 + C1)
        assert v == pytest.approx(1.0 - c1 / (1.0 + c1), rel=1e-12)

    def test_value_symmetry(self, rng):
        a, b = rng.random((20, 14, 3)), rng.random((20, 14, 3))
        assert dssim(a, b)[0] == pytest.approx(dssim(b, a)[0], rel=1e-12)

    def test_too_small_rejected(self, rng):
        with pytest.raises(ValueError):
            dssim(rng.random((8, 8, 3)), rng.random((8, 8, 3)))

    def test_range_on_random_pairs(self, rng):
        for _ in range(5):
            a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
            v, _ = dssim(a, b)
            assert 0.0 <= v <= 1.0

    def test_gradient_matches_finite_differences(self, rng):
        # correlated pair: stays inside the unsaturated dissimilarity range
        a = rng.random((16, 16, 3))
        b = np.clip(0.6 * a + 0.2 + 0.1 * rng.standard_normal(a.shape), 0, 1)
        _, g = dssim(a, b)
        h = 1e-5
        worst = 0.0
        for (i, j, k) in [(0, 0, 0), (4, 9, 1), (15, 15, 2), (7, 7, 0), (11, 2, 1), (2, 13, 2)]:
            ap = a.copy(); ap[i, j, k] += h
            am = a.copy(); am[i, j, k] -= h
            fd = (dssim(ap, b)[0] - dssim(am, b)[0]) / (2 * h)
            err = abs(fd - g[i, j, k]) / max(abs(fd), abs(g[i, j, k]), 1e-8)
            worst = max(worst, err)
        assert worst < 1e-3


class TestCoupledReg:
    def test_zero_lambdas(self, rng):
        ps = small_set(rng, n=6)
        vis = np.ones(6, bool)
        g_tau, g_kappa = coupled_reg_grad(ps, vis, 0.0, 0.0)
        assert np.all(g_tau == 0.0) and np.all(g_kappa == 0.0)

    def test_hand_value(self, rng):
        ps = small_set(rng, n=100)
        ps.tau[:] = 0.0
        vis = np.ones(100, bool)
        g_tau, _ = coupled_reg_grad(ps, vis, 0.01, 0.0)
        # 0.01 * 0.25 / 100
        assert np.allclose(g_tau, 2.5e-5, rtol=1e-12)

    def test_no_visible_skips_term(self, rng):
        ps = small_set(rng, n=4)
        g_tau, g_kappa = coupled_reg_grad(ps, np.zeros(4, bool), 0.01, 0.01)
        assert np.all(g_tau == 0.0) and np.all(g_kappa == 0.0)

    def test_visible_rows_only_in_sparse_form(self, rng):
        ps = small_set(rng, n=8)
        vis = np.zeros(8, bool)
        vis[[1, 4]] = True
        g_tau, g_kappa = coupled_reg_grad(ps, vis, 0.01, 0.01)
        assert np.all(g_tau[~vis] == 0.0)
        assert np.all(g_tau[vis] > 0.0)
        assert np.all(g_kappa[vis] > 0.0)

    def test_all_rows_in_sync_form(self, rng):
        ps = small_set(rng, n=8)
        vis = np.zeros(8, bool)
        vis[[0, 2]] = True
        g_tau, _ = coupled_reg_grad(ps, vis, 0.01, 0.0, apply_to_all=True)
        assert np.all(g_tau > 0.0)
        # normalizer is the visible count
        expected = 0.01 * opacity_derivative(ps.tau) / 2
        assert np.allclose(g_tau, expected, rtol=1e-12)

    def test_strictly_positive_on_live_rows(self, rng):
        ps = small_set(rng, n=20, opacity=(0.05, 0.95))
        vis = np.ones(20, bool)
        g_tau, g_kappa = coupled_reg_grad(ps, vis, 0.01, 0.01)
        assert np.all(g_tau > 0.0)
        assert np.all(g_kappa > 0.0)

    def test_reg_value(self, rng):
        ps = small_set(rng, n=5)
        val = regularization_value(ps, 0.01, 0.02)
        expected = 0.01 * np.abs(ps.opacity()).sum() \
            + 0.02 * np.abs(activate_scale(ps.kappa)).sum()
        assert val == pytest.approx(expected, rel=1e-12)
