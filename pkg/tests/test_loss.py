"""Similarity loss: frozen examples, brute-force oracle, properties."""

import numpy as np
import pytest

from psae.tensor import ShapeError, Tensor
from psae import loss as L
from psae.loss import MsSsimConfig

from helpers import check_gradients, random_projection

C1 = MsSsimConfig().c1
C2 = MsSsimConfig().c2


# -- independent reference implementation (explicit loops) --------------------

def naive_pool(img):
    h, w = img.shape
    if h % 2:
        img = np.vstack([img, img[-1:]])
    if w % 2:
        img = np.hstack([img, img[:, -1:]])
    return img.reshape(img.shape[0] // 2, 2, img.shape[1] // 2, 2).mean(axis=(1, 3))


def naive_ms_ssim(y, y_hat, cfg: MsSsimConfig):
    weights = cfg.weights()
    k, stride = cfg.size, cfg.window_stride
    c1, c2, c3 = cfg.c1, cfg.c2, cfg.c3_value
    h = 1.0
    for j in range(cfg.top_scale + 1):
        if j > 0:
            y, y_hat = naive_pool(y), naive_pool(y_hat)
        terms = []
        for r in range(0, y.shape[0] - k + 1, stride):
            for c in range(0, y.shape[1] - k + 1, stride):
                p = y[r:r + k, c:c + k]
                q = y_hat[r:r + k, c:c + k]
                if weights is None:
                    mu_a, mu_b = p.mean(), q.mean()
                    va = (p * p).mean() - mu_a ** 2
                    vb = (q * q).mean() - mu_b ** 2
                    cov = (p * q).mean() - mu_a * mu_b
                else:
                    mu_a, mu_b = (weights * p).sum(), (weights * q).sum()
                    va = (weights * p * p).sum() - mu_a ** 2
                    vb = (weights * q * q).sum() - mu_b ** 2
                    cov = (weights * p * q).sum() - mu_a * mu_b
                sa, sb = np.sqrt(max(va, 0.0)), np.sqrt(max(vb, 0.0))
                cs = ((2 * sa * sb + c2) / (va + vb + c2)) * ((cov + c3) / (sa * sb + c3))
                cs = min(max(cs, 0.0), 1.0)
                if j == cfg.top_scale:
                    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
                    terms.append(lum * cs)
                else:
                    terms.append(cs)
        h *= np.mean(terms) ** cfg.alphas[j]
    return min(h, 1.0)


class TestWindowStats:
    def test_constant_image(self):
        img = np.full((10, 10), 0.7)
        stats = L.window_stats(img, img)
        np.testing.assert_allclose(stats.mu_a, 0.7, atol=1e-9)
        np.testing.assert_allclose(stats.sigma_a, 0.0, atol=1e-9)

    def test_self_pair_covariance_equals_variance(self):
        img = np.random.default_rng(0).random((12, 12))
        stats = L.window_stats(img, img)
        np.testing.assert_allclose(stats.cov, stats.sigma_a ** 2, atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        y, y_hat = rng.random((16, 16)), rng.random((16, 16))
        stats = L.window_stats(y, y_hat)
        for r in range(9):
            for c in range(9):
                p, q = y[r:r + 8, c:c + 8], y_hat[r:r + 8, c:c + 8]
                assert abs(stats.mu_a[r, c] - p.mean()) < 1e-6
                assert abs(stats.sigma_b[r, c] - q.std()) < 1e-6
                cov = ((p - p.mean()) * (q - q.mean())).mean()
                assert abs(stats.cov[r, c] - cov) < 1e-6

    def test_negative_pixels_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            L.window_stats(np.full((9, 9), -0.1), np.zeros((9, 9)))

    def test_small_image_rejected(self):
        with pytest.raises(ShapeError, match="exceeds"):
            L.window_stats(np.ones((5, 5)), np.ones((5, 5)))


class TestComponents:
    def test_identical_windows_all_one(self):
        img = np.random.default_rng(2).random((10, 10))
        l, c, s = L.ssim_components(L.window_stats(img, img))
        for comp in (l, c, s):
            np.testing.assert_allclose(comp, 1.0, atol=1e-12)

    def test_constant_one_vs_zero(self):
        stats = L.window_stats(np.ones((8, 8)), np.zeros((8, 8)))
        l, c, s = L.ssim_components(stats)
        np.testing.assert_allclose(l, C1 / (1.0 + C1), rtol=1e-12)
        np.testing.assert_allclose(c, 1.0)
        np.testing.assert_allclose(s, 1.0)

    def test_random_windows_stay_in_unit_interval(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            y, y_hat = rng.random((17, 17)), rng.random((17, 17))
            l, c, s = L.ssim_components(L.window_stats(y, y_hat))
            for comp in (l, c, s):  # 100 pairs x 100 windows each
                assert comp.min() >= 0.0 and comp.max() <= 1.0


class TestMsSsim:
    def test_identity(self):
        img = np.random.default_rng(4).random((32, 32))
        h = L.ms_ssim(img, img).item()
        assert abs(h - 1.0) <= 1e-9

    def test_identity_float32(self):
        img = np.random.default_rng(4).random((32, 32)).astype(np.float32)
        assert abs(L.ms_ssim(img, img).item() - 1.0) <= 1e-9

    def test_constant_closed_form(self):
        h = L.ms_ssim(np.ones((32, 32)), np.zeros((32, 32))).item()
        assert abs(h - (C1 / (1.0 + C1)) ** 0.65) < 1e-12

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_naive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        y, y_hat = rng.random((64, 64)), rng.random((64, 64))
        cfg = MsSsimConfig()
        assert abs(L.ms_ssim(y, y_hat, cfg).item() - naive_ms_ssim(y, y_hat, cfg)) < 1e-6

    def test_matches_naive_oracle_gaussian_window(self):
        rng = np.random.default_rng(11)
        y, y_hat = rng.random((64, 64)), rng.random((64, 64))
        cfg = MsSsimConfig(window="gaussian")
        assert abs(L.ms_ssim(y, y_hat, cfg).item() - naive_ms_ssim(y, y_hat, cfg)) < 1e-6

    def test_matches_naive_oracle_strided(self):
        rng = np.random.default_rng(12)
        y, y_hat = rng.random((40, 40)), rng.random((40, 40))
        cfg = MsSsimConfig(window_stride=2)
        assert abs(L.ms_ssim(y, y_hat, cfg).item() - naive_ms_ssim(y, y_hat, cfg)) < 1e-6

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        y, y_hat = rng.random((48, 48)), rng.random((48, 48))
        assert abs(L.ms_ssim(y, y_hat).item() - L.ms_ssim(y_hat, y).item()) <= 1e-9

    def test_bounds_random_sweep(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            y = rng.random((24, 32)) * rng.uniform(0.2, 1.0)
            y_hat = rng.random((24, 32)) * rng.uniform(0.2, 1.0)
            h = L.ms_ssim(y, y_hat).item()
            assert 0.0 <= h <= 1.0

    def test_too_small_at_top_scale_rejected(self):
        with pytest.raises(ShapeError, match="scale"):
            L.ms_ssim(np.ones((16, 16)), np.ones((16, 16)))  # 4x4 at scale 2

    def test_scale_consistency_on_blockwise_constant_images(self):
        rng = np.random.default_rng(7)
        y = np.kron(rng.random((16, 16)), np.ones((4, 4)))
        y_hat = np.kron(rng.random((16, 16)), np.ones((4, 4)))
        cfg1 = MsSsimConfig(top_scale=1, alphas=(0.3, 0.7))
        direct = L.scale_terms(y, y_hat, cfg1)[1].item()
        pooled = L.scale_terms(naive_pool(y), naive_pool(y_hat),
                               MsSsimConfig(top_scale=0, alphas=(1.0,)))[0].item()
        assert abs(direct - pooled) < 1e-12

    def test_fractional_exponents_never_hurt(self):
        rng = np.random.default_rng(8)
        flat = MsSsimConfig(alphas=(1.0, 1.0, 1.0))
        for _ in range(10):
            y, y_hat = rng.random((32, 32)), rng.random((32, 32))
            assert L.ms_ssim(y, y_hat).item() >= L.ms_ssim(y, y_hat, flat).item()

    def test_mean_exponent_below_one_raises_value(self):
        # m^a > m for m in (0,1), a < 1: the per-scale powered term grows
        rng = np.random.default_rng(13)
        y, y_hat = rng.random((24, 24)), rng.random((24, 24))
        term = L.scale_terms(y, y_hat, MsSsimConfig(top_scale=0, alphas=(1.0,)))[0].item()
        assert 0.0 < term < 1.0
        assert term ** 0.65 > term

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.random((32, 32))
        y_hat = rng.random((32, 32))

        def scalar(t):
            return L.ms_ssim(Tensor(y), t)

        check_gradients(scalar, [y_hat], tol=1e-4)

    def test_gradient_flows_to_both_images(self):
        rng = np.random.default_rng(9)
        y = Tensor(rng.random((32, 32)), requires_grad=True, dtype=np.float64)
        y_hat = Tensor(rng.random((32, 32)), requires_grad=True, dtype=np.float64)
        L.ms_ssim(y, y_hat).backward()
        assert y.grad is not None and np.abs(y.grad).max() > 0
        assert y_hat.grad is not None and np.abs(y_hat.grad).max() > 0


class TestBatchLoss:
    def test_perfect_prediction_is_zero(self):
        batch = np.random.default_rng(0).random((3, 32, 32))
        assert L.batch_loss(batch, batch.copy()).item() == 0.0

    def test_mean_of_one_minus_h(self):
        rng = np.random.default_rng(1)
        y = rng.random((2, 32, 32))
        y_hat = np.stack([y[0], rng.random((24, 24))])  # h ~ {1, small}
        h0 = L.ms_ssim(y[0], y_hat[0]).item()
        h1 = L.ms_ssim(y[1], y_hat[1]).item()
        expected = 0.5 * ((1 - h0) + (1 - h1))
        assert abs(L.batch_loss(y, y_hat).item() - expected) < 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        y = rng.random((4, 32, 32))
        y_hat = rng.random((4, 32, 32))
        perm = [2, 0, 3, 1]
        assert abs(L.batch_loss(y, y_hat).item()
                   - L.batch_loss(y[perm], y_hat[perm]).item()) < 1e-12

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            L.batch_loss(np.zeros((0, 32, 32)), np.zeros((0, 32, 32)))

    def test_batched_h_equals_per_image(self):
        rng = np.random.default_rng(3)
        y = rng.random((3, 32, 32))
        y_hat = rng.random((3, 32, 32))
        h_batch = L.ms_ssim(y, y_hat).data
        singles = [L.ms_ssim(y[i], y_hat[i]).item() for i in range(3)]
        np.testing.assert_allclose(h_batch, singles, atol=1e-12)


class TestBaselines:
    def test_mse_identities(self):
        img = np.random.default_rng(0).random((2, 8, 8))
        assert L.mse_loss(img, img.copy()).item() == 0.0
        assert abs(L.mse_loss(np.zeros((2, 8, 8)), np.full((2, 8, 8), 0.5)).item()
                   - 0.25) < 1e-12

    def test_mse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            L.mse_loss(np.zeros((2, 8, 8)), np.zeros((2, 8, 9)))

    def test_single_scale_equals_top_scale_zero(self):
        rng = np.random.default_rng(4)
        y, y_hat = rng.random((24, 24)), rng.random((24, 24))
        direct = L.ms_ssim(y, y_hat, MsSsimConfig(top_scale=0, alphas=(1.0,))).item()
        assert L.single_scale_ssim(y, y_hat).item() == direct

    def test_single_scale_inherits_window_choice(self):
        rng = np.random.default_rng(5)
        y, y_hat = rng.random((24, 24)), rng.random((24, 24))
        base = MsSsimConfig(window="gaussian")
        direct = L.ms_ssim(y, y_hat, MsSsimConfig(top_scale=0, alphas=(1.0,),
                                                  window="gaussian")).item()
        assert L.single_scale_ssim(y, y_hat, base).item() == direct
