import numpy as np
import pytest

from splatsr import losses
from splatsr.errors import InvalidInputError

import helpers


def naive_ssim(a, b):
    """Independent SSIM oracle: direct per-pixel window loops, zero padding."""
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    half = losses.SSIM_WINDOW // 2
    t = np.arange(losses.SSIM_WINDOW) - half
    g1 = np.exp(-(t**2) / (2 * losses.SSIM_SIGMA**2))
    g1 /= g1.sum()
    win = np.outer(g1, g1)
    h, w, c = a.shape
    pa = np.zeros((h + 2 * half, w + 2 * half, c))
    pb = np.zeros_like(pa)
    pa[half:half + h, half:half + w] = a
    pb[half:half + h, half:half + w] = b
    total = 0.0
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                wa = pa[i:i + losses.SSIM_WINDOW, j:j + losses.SSIM_WINDOW, ch]
                wb = pb[i:i + losses.SSIM_WINDOW, j:j + losses.SSIM_WINDOW, ch]
                mx = (win * wa).sum()
                my = (win * wb).sum()
                vx = (win * wa * wa).sum() - mx * mx
                vy = (win * wb * wb).sum() - my * my
                cxy = (win * wa * wb).sum() - mx * my
                num = (2 * mx * my + losses.SSIM_C1) * (2 * cxy + losses.SSIM_C2)
                den = (mx * mx + my * my + losses.SSIM_C1) * (vx + vy + losses.SSIM_C2)
                total += num / den
    return total / (h * w * c)


def fd_image_grad(fn, img, analytic, rng, samples=30, step=1e-4, tol=1e-3):
    idx_all = list(np.ndindex(img.shape))
    chosen = rng.choice(len(idx_all), size=min(samples, len(idx_all)), replace=False)
    for ci in chosen:
        idx = idx_all[ci]
        plus = img.copy()
        minus = img.copy()
        plus[idx] += step
        minus[idx] -= step
        num = (fn(plus) - fn(minus)) / (2 * step)
        ana = analytic[idx]
        if abs(num) < 1e-6 and abs(ana) < 1e-6:
            continue
        rel = abs(num - ana) / max(abs(num), abs(ana))
        assert rel < tol, f"{idx}: numeric {num} vs analytic {ana}"


# ---------------------------------------------------------------------------
# l1
# ---------------------------------------------------------------------------

def test_l1_identical_is_zero():
    a = np.random.default_rng(1).uniform(0, 1, (8, 8, 3))
    v, g = losses.l1(a, a.copy())
    assert v == 0.0
    np.testing.assert_array_equal(g, 0.0)


def test_l1_constant_offset():
    a = np.random.default_rng(2).uniform(0, 0.9, (8, 8, 3))
    v, _ = losses.l1(a + 0.1, a)
    assert v == pytest.approx(0.1, rel=1e-12)


def test_l1_matches_elementwise_oracle_and_fd():
    rng = np.random.default_rng(3)
    a = rng.uniform(0, 1, (8, 8, 3))
    b = rng.uniform(0, 1, (8, 8, 3))
    v, g = losses.l1(a, b)
    assert v == pytest.approx(np.abs(a - b).mean(), rel=1e-12)
    fd_image_grad(lambda x: losses.l1(x, b)[0], a, g, rng)


def test_l1_shape_mismatch():
    with pytest.raises(InvalidInputError):
        losses.l1(np.zeros((4, 4)), np.zeros((4, 5)))


# ---------------------------------------------------------------------------
# d_ssim
# ---------------------------------------------------------------------------

def test_d_ssim_identical_is_zero():
    a = np.random.default_rng(4).uniform(0, 1, (12, 12, 3))
    v, g = losses.d_ssim(a, a.copy())
    assert v == pytest.approx(0.0, abs=1e-12)


def test_ssim_matches_naive_oracle():
    rng = np.random.default_rng(5)
    a = rng.uniform(0, 1, (10, 11, 3))
    b = rng.uniform(0, 1, (10, 11, 3))
    assert losses.ssim(a, b) == pytest.approx(naive_ssim(a, b), rel=1e-10)
    v, _ = losses.d_ssim(a, b)
    assert v == pytest.approx((1 - naive_ssim(a, b)) / 2, rel=1e-10)


def test_d_ssim_against_inverted_pattern():
    rng = np.random.default_rng(6)
    a = (rng.uniform(0, 1, (12, 12)) > 0.5).astype(float)
    b = 1.0 - a
    v, _ = losses.d_ssim(a, b)
    assert v == pytest.approx((1 - naive_ssim(a, b)) / 2, rel=1e-10)
    assert v > 0.2


def test_d_ssim_gradient_matches_fd():
    rng = np.random.default_rng(7)
    a = rng.uniform(0.1, 0.9, (8, 8, 3))
    b = rng.uniform(0.1, 0.9, (8, 8, 3))
    _, g = losses.d_ssim(a, b)
    fd_image_grad(lambda x: losses.d_ssim(x, b)[0], a, g, rng)


def test_d_ssim_2d_and_3d_agree():
    rng = np.random.default_rng(8)
    a = rng.uniform(0, 1, (9, 9))
    b = rng.uniform(0, 1, (9, 9))
    v2, g2 = losses.d_ssim(a, b)
    v3, g3 = losses.d_ssim(a[:, :, None], b[:, :, None])
    assert v2 == pytest.approx(v3, rel=1e-12)
    np.testing.assert_allclose(g2, g3[:, :, 0], rtol=1e-12)


# ---------------------------------------------------------------------------
# loss_sr
# ---------------------------------------------------------------------------

def test_loss_sr_is_exact_convex_combination():
    rng = np.random.default_rng(9)
    a = rng.uniform(0, 1, (8, 8, 3))
    b = rng.uniform(0, 1, (8, 8, 3))
    v1, _ = losses.l1(a, b)
    v2, _ = losses.d_ssim(a, b)
    for beta in [0.0, 0.2, 1.0]:
        v, _ = losses.loss_sr(a, b, beta)
        assert v == pytest.approx((1 - beta) * v1 + beta * v2, rel=1e-12)


def test_loss_sr_grads_target_side_matches_fd():
    rng = np.random.default_rng(10)
    a = rng.uniform(0.1, 0.9, (8, 8, 3))
    b = rng.uniform(0.1, 0.9, (8, 8, 3))
    _, _, g_target = losses.loss_sr_grads(a, b)
    fd_image_grad(lambda y: losses.loss_sr(a, y)[0], b, g_target, rng)


# ---------------------------------------------------------------------------
# tv
# ---------------------------------------------------------------------------

def test_tv_constant_is_zero():
    v, g = losses.tv(np.full((6, 7, 3), 0.4))
    assert v == 0.0
    np.testing.assert_array_equal(g, 0.0)


def test_tv_hand_computed_4x4():
    # one vertical step edge between columns 1 and 2, height 0.5
    img = np.zeros((4, 4))
    img[:, 2:] = 0.5
    # vertical diffs all 0 (12 of them); horizontal: 4 rows x 3 diffs, one
    # nonzero (0.5) per row -> sum 2.0 over 24 total differences
    v, _ = losses.tv(img)
    assert v == pytest.approx(2.0 / 24.0, rel=1e-12)


def test_tv_gradient_matches_fd():
    rng = np.random.default_rng(11)
    img = rng.uniform(0, 1, (8, 8, 3))
    _, g = losses.tv(img)
    fd_image_grad(lambda x: losses.tv(x)[0], img, g, rng)


# ---------------------------------------------------------------------------
# subpixel
# ---------------------------------------------------------------------------

def test_subpixel_zero_for_nearest_upsampled():
    rng = np.random.default_rng(12)
    # dyadic values keep the block means exact in floating point
    lr = rng.integers(0, 256, (4, 4, 3)) / 256.0
    hr = np.repeat(np.repeat(lr, 4, axis=0), 4, axis=1)
    v, g = losses.subpixel(hr, lr, 4)
    assert v == 0.0
    np.testing.assert_array_equal(g, 0.0)


def test_subpixel_block_mean_cancels():
    hr = np.array([[0.0, 0.0], [1.0, 1.0]])[:, :, None] * np.ones((1, 1, 3))
    lr = np.full((1, 1, 3), 0.5)
    v, _ = losses.subpixel(hr, lr, 2)
    assert v == 0.0


def test_subpixel_matches_block_mean_oracle_and_fd():
    rng = np.random.default_rng(13)
    hr = rng.uniform(0, 1, (8, 8, 3))
    lr = rng.uniform(0, 1, (4, 4, 3))
    v, g = losses.subpixel(hr, lr, 2)
    down = hr.reshape(4, 2, 4, 2, 3).mean(axis=(1, 3))
    assert v == pytest.approx(np.abs(down - lr).mean(), rel=1e-12)
    fd_image_grad(lambda x: losses.subpixel(x, lr, 2)[0], hr, g, rng)


def test_subpixel_rejects_indivisible():
    with pytest.raises(InvalidInputError):
        losses.subpixel(np.zeros((7, 8, 3)), np.zeros((3, 4, 3)), 2)


def test_area_downsample_values():
    img = np.arange(16, dtype=float).reshape(4, 4)
    down = losses.area_downsample(img, 2)
    np.testing.assert_allclose(down, [[2.5, 4.5], [10.5, 12.5]])


# ---------------------------------------------------------------------------
# pearson_depth
# ---------------------------------------------------------------------------

def test_pearson_affine_invariance():
    rng = np.random.default_rng(14)
    d = rng.uniform(1, 5, (8, 8))
    for a, b in [(1.0, 0.0), (2.5, 1.0), (0.3, -0.7)]:
        v, _ = losses.pearson_depth(d, a * d + b)
        assert abs(v) < 1e-9


def test_pearson_negative_correlation_is_two():
    rng = np.random.default_rng(15)
    d = rng.uniform(1, 5, (8, 8))
    v, _ = losses.pearson_depth(d, -d)
    assert v == pytest.approx(2.0, abs=1e-9)


def test_pearson_matches_direct_formula():
    rng = np.random.default_rng(16)
    x = rng.uniform(0, 3, (8, 8))
    y = rng.uniform(0, 3, (8, 8))
    v, _ = losses.pearson_depth(x, y)
    rho = np.corrcoef(x.ravel(), y.ravel())[0, 1]
    assert v == pytest.approx(1 - rho, rel=1e-10)


def test_pearson_gradient_matches_fd():
    rng = np.random.default_rng(17)
    x = rng.uniform(0, 3, (8, 8))
    y = rng.uniform(0, 3, (8, 8))
    _, g = losses.pearson_depth(x, y)
    fd_image_grad(lambda z: losses.pearson_depth(z, y)[0], x, g, rng)


def test_pearson_respects_mask():
    rng = np.random.default_rng(18)
    x = rng.uniform(0, 3, (8, 8))
    y = 2.0 * x + 1.0
    y[0, 0] = 50.0  # corrupted pixel excluded by the mask
    mask = np.ones((8, 8), dtype=bool)
    mask[0, 0] = False
    v_masked, g = losses.pearson_depth(x, y, mask)
    assert abs(v_masked) < 1e-9
    assert g[0, 0] == 0.0
    v_full, _ = losses.pearson_depth(x, y)
    assert v_full > 1e-3


def test_pearson_degenerate_returns_zero():
    flat = np.full((4, 4), 2.0)
    vary = np.random.default_rng(19).uniform(0, 1, (4, 4))
    v, g = losses.pearson_depth(flat, vary)
    assert v == 0.0
    np.testing.assert_array_equal(g, 0.0)
    v2, _ = losses.pearson_depth(vary, flat)
    assert v2 == 0.0


def test_pearson_positive_rescale_of_prior():
    rng = np.random.default_rng(20)
    x = rng.uniform(0, 3, (8, 8))
    y = rng.uniform(0, 3, (8, 8))
    v1, _ = losses.pearson_depth(x, y)
    v2, _ = losses.pearson_depth(x, 7.3 * y)
    assert abs(v1 - v2) < 1e-9


# ---------------------------------------------------------------------------
# stage-2 total
# ---------------------------------------------------------------------------

def test_stage2_total_zero_case():
    img = np.full((8, 8, 3), 0.5)
    lr = np.full((4, 4, 3), 0.5)
    total, parts, grads = losses.loss_total_stage2(img, img, img, lr, 2)
    assert total == pytest.approx(0.0, abs=1e-12)
    assert parts["tv"] == 0.0 and parts["subpixel"] == 0.0
    np.testing.assert_array_equal(grads["render"], 0.0)


def test_stage2_total_is_sum_of_terms():
    rng = np.random.default_rng(21)
    r = rng.uniform(0, 1, (8, 8, 3))
    rb = rng.uniform(0, 1, (8, 8, 3))
    sup = rng.uniform(0, 1, (8, 8, 3))
    lr = rng.uniform(0, 1, (4, 4, 3))
    total, parts, _ = losses.loss_total_stage2(r, rb, sup, lr, 2)
    v_tv, _ = losses.tv(r)
    v_sub, _ = losses.subpixel(r, lr, 2)
    v_sr, _ = losses.loss_sr(rb, sup)
    assert total == pytest.approx(v_tv + v_sub + v_sr, rel=1e-12)
    assert parts["sr"] == pytest.approx(v_sr, rel=1e-12)


def test_stage2_total_respects_weights():
    rng = np.random.default_rng(22)
    r = rng.uniform(0, 1, (8, 8, 3))
    lr = rng.uniform(0, 1, (4, 4, 3))
    sup = rng.uniform(0, 1, (8, 8, 3))
    t1, _, _ = losses.loss_total_stage2(r, r, sup, lr, 2, tv_weight=0.0, subpixel_weight=0.0)
    v_sr, _ = losses.loss_sr(r, sup)
    assert t1 == pytest.approx(v_sr, rel=1e-12)
