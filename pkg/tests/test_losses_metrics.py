"""Loss functions and reference quality metrics."""

import numpy as np
import pytest

from modem.losses import correlation_loss, kl_loss, l1_loss
from modem.metrics import psnr, ssim, to_grayscale
from modem.tensor import ShapeError, Tensor


class TestL1:
    def test_value(self):
        a = Tensor(np.array([1.0, 2.0, 3.0]))
        b = Tensor(np.array([2.0, 2.0, 1.0]))
        assert float(l1_loss(a, b).data) == pytest.approx(1.0)

    def test_zero_on_identical(self, rng):
        x = Tensor(rng.normal(size=(3, 4)))
        assert float(l1_loss(x, x).data) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


class TestCorrelation:
    def test_perfect_correlation_zero(self, rng):
        x = Tensor(rng.normal(size=(2, 5, 5)))
        loss, fb = correlation_loss(x, x)
        assert not fb
        assert float(loss.data) == pytest.approx(0.0, abs=1e-12)

    def test_affine_invariance(self, rng):
        x = Tensor(rng.normal(size=(3, 6, 6)))
        y = rng.normal(size=(3, 6, 6))
        base, _ = correlation_loss(x, Tensor(y))
        for a, b in [(2.0, 0.0), (0.5, 3.0), (7.0, -1.0)]:
            scaled, _ = correlation_loss(x, Tensor(a * y + b))
            assert abs(float(scaled.data) - float(base.data)) < 1e-12

    def test_anticorrelation_is_one(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        loss, _ = correlation_loss(x, Tensor(-x.data))
        assert float(loss.data) == pytest.approx(1.0, abs=1e-12)

    def test_zero_variance_fallback(self, rng):
        const = Tensor(np.full((3, 3), 2.0))
        loss, fb = correlation_loss(Tensor(rng.normal(size=(3, 3))), const)
        assert fb
        assert float(loss.data) == 0.5

    def test_bounded_zero_one(self, rng):
        for _ in range(50):
            a = Tensor(rng.normal(size=20))
            b = Tensor(rng.normal(size=20))
            loss, _ = correlation_loss(a, b)
            assert 0.0 <= float(loss.data) <= 1.0


class TestKL:
    def test_pinned_example(self):
        # teacher [0, 0], student [0, ln 3]:
        # 0.5*ln(0.5/0.25) + 0.5*ln(0.5/0.75) = 0.1438 (4 s.f.)
        val = float(kl_loss(np.array([0.0, 0.0]),
                            Tensor(np.array([0.0, np.log(3.0)]))).data)
        assert val == pytest.approx(0.1438, abs=1e-4)
        exact = 0.5 * np.log(0.5 / 0.25) + 0.5 * np.log(0.5 / 0.75)
        assert val == pytest.approx(exact, abs=1e-14)

    def test_identical_is_zero(self, rng):
        z = rng.normal(size=10)
        assert abs(float(kl_loss(z, Tensor(z.copy())).data)) < 1e-12

    def test_nonnegative_on_random_pairs(self, rng):
        for _ in range(1000):
            t = rng.normal(size=8) * rng.uniform(0.1, 5)
            s = rng.normal(size=8) * rng.uniform(0.1, 5)
            assert float(kl_loss(t, Tensor(s)).data) >= -1e-12

    def test_gradient_only_into_student(self, rng):
        teacher = Tensor(rng.normal(size=6), requires_grad=True)
        student = Tensor(rng.normal(size=6), requires_grad=True)
        kl_loss(teacher, student).backward()
        assert teacher.grad is None
        assert student.grad is not None

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            kl_loss(np.zeros(3), Tensor(np.zeros(4)))


class TestPSNR:
    def test_black_vs_white(self):
        assert psnr(np.zeros((3, 4, 4)), np.ones((3, 4, 4))) == 0.0

    def test_uniform_error_closed_form(self):
        # error of 1/255 everywhere: 20*log10(255) ~ 48.13 dB
        a = np.full((3, 8, 8), 0.5)
        b = a + 1.0 / 255.0
        assert psnr(a, b) == pytest.approx(20 * np.log10(255), abs=1e-10)
        assert psnr(a, b) == pytest.approx(48.13, abs=0.01)

    def test_identical_is_inf(self, rng):
        x = rng.uniform(size=(3, 4, 4))
        assert psnr(x, x) == float("inf")


class TestSSIM:
    def test_identical_is_one(self, rng):
        x = rng.uniform(size=(3, 16, 16))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_sliding_window_oracle(self, rng):
        # independent direct computation at every window position
        from modem.metrics import (SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
                                   _gaussian_window)
        x = rng.uniform(size=(13, 14))
        y = np.clip(x + rng.normal(scale=0.05, size=(13, 14)), 0, 1)
        w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
        c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
        vals = []
        for i in range(13 - SSIM_WINDOW + 1):
            for j in range(14 - SSIM_WINDOW + 1):
                xa = x[i:i + SSIM_WINDOW, j:j + SSIM_WINDOW]
                ya = y[i:i + SSIM_WINDOW, j:j + SSIM_WINDOW]
                mx, my = (w * xa).sum(), (w * ya).sum()
                vx = (w * xa * xa).sum() - mx * mx
                vy = (w * ya * ya).sum() - my * my
                cxy = (w * xa * ya).sum() - mx * my
                vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                            / ((mx * mx + my * my + c1) * (vx + vy + c2)))
        assert ssim(x, y) == pytest.approx(np.mean(vals), abs=1e-12)

    def test_noise_lowers_ssim(self, rng):
        x = rng.uniform(size=(3, 20, 20))
        y = np.clip(x + rng.normal(scale=0.2, size=x.shape), 0, 1)
        assert ssim(x, y) < ssim(x, x)

    def test_too_small_rejected(self, rng):
        with pytest.raises(ValueError):
            ssim(rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8)))

    def test_grayscale_luma(self):
        img = np.zeros((3, 12, 12))
        img[0] = 1.0
        np.testing.assert_allclose(to_grayscale(img), 0.299)
