"""Training objectives for both stages, each returning value plus adjoint image.

Every loss is a pure function ``(images...) -> (scalar, gradient array)`` with
the gradient taken w.r.t. the first argument.  Gradients are hand-derived and
pinned by the finite-difference suite; no autodiff framework is involved.
"""

import logging

import numpy as np
from scipy.ndimage import convolve1d

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
DEFAULT_BETA = 0.2


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")


def _as_float(img):
    return np.asarray(img, dtype=np.float64)


def l1(a, b):
    """Mean absolute error; subgradient zero at exact ties."""
    a = _as_float(a)
    b = _as_float(b)
    _check_same_shape(a, b)
    diff = a - b
    value = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return value, grad


def _ssim_window():
    half = SSIM_WINDOW // 2
    t = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(t**2) / (2.0 * SSIM_SIGMA**2))
    return g / g.sum()


_WINDOW = _ssim_window()


def _smooth(img):
    """Separable window filter, zero padded, per channel; self-adjoint."""
    out = convolve1d(img, _WINDOW, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, _WINDOW, axis=1, mode="constant", cval=0.0)


def _with_channels(img):
    img = _as_float(img)
    if img.ndim == 2:
        return img[:, :, None], True
    if img.ndim == 3:
        return img, False
    raise InvalidInputError(f"expected (H, W) or (H, W, C) image, got {img.shape}")


def _ssim_parts(x, y):
    mu_x = _smooth(x)
    mu_y = _smooth(y)
    sxx = _smooth(x * x)
    syy = _smooth(y * y)
    sxy = _smooth(x * y)
    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * (sxy - mu_x * mu_y) + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = (sxx - mu_x * mu_x) + (syy - mu_y * mu_y) + SSIM_C2
    return mu_x, mu_y, sxx, syy, sxy, a1, a2, b1, b2


def ssim(a, b):
    """Raw windowed SSIM score, channel and pixel averaged."""
    x, _ = _with_channels(a)
    y, _ = _with_channels(b)
    _check_same_shape(x, y)
    *_, a1, a2, b1, b2 = _ssim_parts(x, y)
    return float(np.mean(a1 * a2 / (b1 * b2)))


def d_ssim(a, b):
    """Structural dissimilarity (1 - SSIM)/2 and its gradient w.r.t. ``a``."""
    x, squeeze = _with_channels(a)
    y, _ = _with_channels(b)
    _check_same_shape(x, y)
    mu_x, mu_y, _, _, _, a1, a2, b1, b2 = _ssim_parts(x, y)
    denom = b1 * b2
    s_map = a1 * a2 / denom
    value = float((1.0 - np.mean(s_map)) / 2.0)

    up = -1.0 / (2.0 * s_map.size)
    d_mu_x = up * (2.0 * mu_y * (a2 - a1) / denom - 2.0 * mu_x * s_map * (1.0 / b1 - 1.0 / b2))
    d_sxx = up * (-s_map / b2)
    d_sxy = up * (2.0 * a1 / denom)
    grad = _smooth(d_mu_x) + 2.0 * x * _smooth(d_sxx) + y * _smooth(d_sxy)
    if squeeze:
        grad = grad[:, :, 0]
    return value, grad


def loss_sr(pred, target, beta=DEFAULT_BETA):
    """(1-beta) L1 + beta D-SSIM and its gradient w.r.t. ``pred``."""
    v1, g1 = l1(pred, target)
    v2, g2 = d_ssim(pred, target)
    return (1.0 - beta) * v1 + beta * v2, (1.0 - beta) * g1 + beta * g2


def loss_sr_grads(pred, target, beta=DEFAULT_BETA):
    """loss_sr value plus gradients w.r.t. both arguments.

    Both terms are symmetric in their arguments, so the target gradient is the
    pred gradient with the roles swapped.
    """
    value, g_pred = loss_sr(pred, target, beta)
    _, g_target = loss_sr(target, pred, beta)
    return value, g_pred, g_target


def tv(img):
    """Mean absolute forward difference, horizontal and vertical combined."""
    x = _as_float(img)
    dv = x[1:, ...] - x[:-1, ...]
    dh = x[:, 1:, ...] - x[:, :-1, ...]
    count = dv.size + dh.size
    if count == 0:
        return 0.0, np.zeros_like(x)
    value = float((np.abs(dv).sum() + np.abs(dh).sum()) / count)
    grad = np.zeros_like(x)
    sv = np.sign(dv) / count
    sh = np.sign(dh) / count
    grad[1:, ...] += sv
    grad[:-1, ...] -= sv
    grad[:, 1:, ...] += sh
    grad[:, :-1, ...] -= sh
    return value, grad


def area_downsample(img, factor):
    """Block mean over factor x factor tiles."""
    x = _as_float(img)
    if factor < 1 or x.shape[0] % factor or x.shape[1] % factor:
        raise InvalidInputError(
            f"image {x.shape[:2]} is not divisible by factor {factor}"
        )
    h, w = x.shape[0] // factor, x.shape[1] // factor
    if x.ndim == 2:
        return x.reshape(h, factor, w, factor).mean(axis=(1, 3))
    return x.reshape(h, factor, w, factor, x.shape[2]).mean(axis=(1, 3))


def subpixel(pred_hr, target_lr, factor):
    """L1 between the area-downsampled prediction and the LR target.

    The gradient spreads each LR residual sign uniformly (1/factor^2) over its
    source block.
    """
    hr = _as_float(pred_hr)
    lr = _as_float(target_lr)
    down = area_downsample(hr, factor)
    _check_same_shape(down, lr)
    value, g_lr = l1(down, lr)
    g_hr = np.repeat(np.repeat(g_lr, factor, axis=0), factor, axis=1) / (factor**2)
    return value, g_hr


def pearson_depth(rendered, prior, valid_mask=None):
    """1 - Pearson correlation over valid pixels, gradient w.r.t. ``rendered``.

    Degenerate inputs (fewer than two valid pixels, or zero variance on either
    side) contribute nothing: value 0 with a zero gradient, logged as a
    warning.
    """
    x = _as_float(rendered)
    y = _as_float(prior)
    _check_same_shape(x, y)
    if valid_mask is None:
        valid_mask = np.ones(x.shape, dtype=bool)
    else:
        valid_mask = np.asarray(valid_mask, dtype=bool)
        _check_same_shape(x, np.empty(valid_mask.shape))
    grad = np.zeros_like(x)
    xs = x[valid_mask]
    ys = y[valid_mask]
    if xs.size < 2:
        logger.warning("pearson_depth: fewer than 2 valid pixels, skipping")
        return 0.0, grad
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    sxx = float(np.dot(xc, xc))
    syy = float(np.dot(yc, yc))
    if sxx < 1e-12 or syy < 1e-12:
        logger.warning("pearson_depth: zero variance, skipping")
        return 0.0, grad
    sxy = float(np.dot(xc, yc))
    root = np.sqrt(sxx * syy)
    rho = sxy / root
    # d rho / d x_j with the mean-centering chain already folded in
    g = yc / root - rho * xc / sxx
    grad[valid_mask] = -g
    return 1.0 - rho, grad


def loss_total_stage2(
    render_hr,
    render_hr_blur,
    supervision,
    lr_image,
    factor,
    beta=DEFAULT_BETA,
    tv_weight=1.0,
    subpixel_weight=1.0,
):
    """Full stage-2 objective: auxiliary terms on the raw render plus the
    super-resolution term on the blurred render.

    Returns (total, parts, grads) where parts maps term names to values and
    grads carries 'render' (TV + subpixel adjoint on the raw render),
    'render_blur' (SR adjoint), and 'supervision' (SR adjoint on the target,
    used to train the inconsistency head).
    """
    v_tv, g_tv = tv(render_hr)
    v_sub, g_sub = subpixel(render_hr, lr_image, factor)
    v_sr, g_blur, g_sup = loss_sr_grads(render_hr_blur, supervision, beta)
    total = tv_weight * v_tv + subpixel_weight * v_sub + v_sr
    parts = {"tv": v_tv, "subpixel": v_sub, "sr": v_sr, "total": total}
    grads = {
        "render": tv_weight * g_tv + subpixel_weight * g_sub,
        "render_blur": g_blur,
        "supervision": g_sup,
    }
    return total, parts, grads
