"""Hand-differentiated 2D convolutional heads and per-pixel blur application.

Two small networks support stage-2 training: the inconsistency head (a
residual stack added to super-resolved supervision images) and the blur
proposal head (per-pixel softmax-normalized blur kernels predicted from a
gradient-detached render).  All layers are written directly in numpy with
explicit adjoints; the finite-difference suite arbitrates every formula.

Images are (H, W, C) float arrays throughout.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import InvalidInputError

IM_WIDTH = 16
BP_WIDTH = 16
DELTA_LOGIT = 10.0


# ---------------------------------------------------------------------------
# layer primitives
# ---------------------------------------------------------------------------

def _windows3(padded, height, width):
    """(H, W, 3, 3, C) sliding views over a zero/reflect padded image."""
    sh, sw, sc = padded.strides
    return as_strided(
        padded,
        shape=(height, width, 3, 3, padded.shape[2]),
        strides=(sh, sw, sh, sw, sc),
        writeable=False,
    )


def conv3x3_forward(x, weight, bias):
    """Same-size 3x3 convolution, zero padded. weight is (O, 3, 3, I)."""
    if x.ndim != 3 or x.shape[2] != weight.shape[3]:
        raise InvalidInputError(
            f"conv input {x.shape} incompatible with weight {weight.shape}"
        )
    h, w, _ = x.shape
    padded = np.zeros((h + 2, w + 2, x.shape[2]))
    padded[1:-1, 1:-1] = x
    flat = _flat_windows3(padded, h, w)
    kernel = np.ascontiguousarray(weight.transpose(1, 2, 3, 0))
    y = (flat @ kernel.reshape(-1, weight.shape[0])).reshape(h, w, -1) + bias
    return y, (padded, weight)


def _flat_windows3(padded, h, w):
    # contiguous (H*W, 9*C) copy of the taps so the products hit BLAS
    return np.ascontiguousarray(_windows3(padded, h, w)).reshape(h * w, -1)


def conv3x3_backward(cache, d_y):
    padded, weight = cache
    h, w, _ = d_y.shape
    n_out, n_in = weight.shape[0], weight.shape[3]
    flat = _flat_windows3(padded, h, w)
    d_flat = d_y.reshape(h * w, n_out)
    d_weight = (flat.T @ d_flat).reshape(3, 3, n_in, n_out).transpose(3, 0, 1, 2)
    d_bias = d_y.sum(axis=(0, 1))
    d_padded = np.zeros_like(padded)
    for k in range(3):
        for l in range(3):
            d_padded[k:k + h, l:l + w] += d_y @ weight[:, k, l, :]
    return d_padded[1:-1, 1:-1], d_weight, d_bias


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, d_y):
    return d_y * mask


def softmax_lastaxis_forward(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_lastaxis_backward(probs, d_probs):
    inner = np.sum(probs * d_probs, axis=-1, keepdims=True)
    return probs * (d_probs - inner)


def _he_conv(rng, c_out, c_in, gain=1.0):
    std = gain * np.sqrt(2.0 / (9.0 * c_in))
    return rng.normal(0.0, std, (c_out, 3, 3, c_in))


# ---------------------------------------------------------------------------
# inconsistency head: two residual blocks plus a zero-initialized output conv
# ---------------------------------------------------------------------------

def im_init(rng, width=IM_WIDTH):
    """Parameters such that the head is exactly the identity at start."""
    return {
        "b1c1_w": _he_conv(rng, width, 3), "b1c1_b": np.zeros(width),
        "b1c2_w": _he_conv(rng, width, width), "b1c2_b": np.zeros(width),
        "b2c1_w": _he_conv(rng, width, width), "b2c1_b": np.zeros(width),
        "b2c2_w": _he_conv(rng, width, width), "b2c2_b": np.zeros(width),
        "out_w": np.zeros((3, 3, 3, width)), "out_b": np.zeros(3),
    }


def _block_forward(x, params, prefix):
    """conv -> relu -> conv with a skip from the first conv's output."""
    h, c1 = conv3x3_forward(x, params[prefix + "c1_w"], params[prefix + "c1_b"])
    a, mask = relu_forward(h)
    t, c2 = conv3x3_forward(a, params[prefix + "c2_w"], params[prefix + "c2_b"])
    return h + t, (c1, mask, c2)


def _block_backward(cache, params, prefix, d_out, d_params):
    c1, mask, c2 = cache
    d_a, d_w2, d_b2 = conv3x3_backward(c2, d_out)
    d_params[prefix + "c2_w"] = d_w2
    d_params[prefix + "c2_b"] = d_b2
    d_h = d_out + relu_backward(mask, d_a)
    d_x, d_w1, d_b1 = conv3x3_backward(c1, d_h)
    d_params[prefix + "c1_w"] = d_w1
    d_params[prefix + "c1_b"] = d_b1
    return d_x


def im_forward(image, params):
    """image + residual(image); returns (output, cache)."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"expected (H, W, 3) image, got {image.shape}")
    z1, c_b1 = _block_forward(image, params, "b1")
    z2, c_b2 = _block_forward(z1, params, "b2")
    res, c_out = conv3x3_forward(z2, params["out_w"], params["out_b"])
    return image + res, (c_b1, c_b2, c_out)


def im_backward(cache, params, d_out):
    """Gradients of a scalar loss given d loss / d output."""
    c_b1, c_b2, c_out = cache
    d_params = {}
    d_z2, d_wo, d_bo = conv3x3_backward(c_out, d_out)
    d_params["out_w"] = d_wo
    d_params["out_b"] = d_bo
    d_z1 = _block_backward(c_b2, params, "b2", d_z2, d_params)
    d_image = _block_backward(c_b1, params, "b1", d_z1, d_params)
    d_image = d_image + d_out  # identity branch
    return d_image, d_params


# ---------------------------------------------------------------------------
# blur proposal head: four convolutions to per-pixel kernel logits
# ---------------------------------------------------------------------------

def blur_kernel_size(factor):
    """Odd kernel width for a given SR factor (5 for the x4 task)."""
    k = factor + 1
    return k if k % 2 == 1 else k + 1


def bp_init(rng, kernel_size, width=BP_WIDTH):
    """Last layer biased so every per-pixel kernel starts as a center delta."""
    k2 = kernel_size * kernel_size
    out_b = np.zeros(k2)
    out_b[k2 // 2] = DELTA_LOGIT
    return {
        "c1_w": _he_conv(rng, width, 3), "c1_b": np.zeros(width),
        "c2_w": _he_conv(rng, width, width), "c2_b": np.zeros(width),
        "c3_w": _he_conv(rng, width, width), "c3_b": np.zeros(width),
        "c4_w": _he_conv(rng, k2, width, gain=1e-2), "c4_b": out_b,
    }


def bp_forward(image, params):
    """Per-pixel normalized blur kernels (H, W, K, K) from a detached render."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"expected (H, W, 3) image, got {image.shape}")
    k2 = params["c4_b"].shape[0]
    k = int(round(np.sqrt(k2)))
    if k * k != k2 or k % 2 == 0:
        raise InvalidInputError(f"kernel logit count {k2} is not an odd square")
    h1, c1 = conv3x3_forward(image, params["c1_w"], params["c1_b"])
    a1, m1 = relu_forward(h1)
    h2, c2 = conv3x3_forward(a1, params["c2_w"], params["c2_b"])
    a2, m2 = relu_forward(h2)
    h3, c3 = conv3x3_forward(a2, params["c3_w"], params["c3_b"])
    a3, m3 = relu_forward(h3)
    logits, c4 = conv3x3_forward(a3, params["c4_w"], params["c4_b"])
    probs = softmax_lastaxis_forward(logits)
    field = probs.reshape(image.shape[0], image.shape[1], k, k)
    return field, (c1, m1, c2, m2, c3, m3, c4, probs)


def bp_backward(cache, params, d_field):
    c1, m1, c2, m2, c3, m3, c4, probs = cache
    h, w = d_field.shape[:2]
    d_probs = d_field.reshape(h, w, -1)
    d_logits = softmax_lastaxis_backward(probs, d_probs)
    d_params = {}
    d_a3, d_params["c4_w"], d_params["c4_b"] = conv3x3_backward(c4, d_logits)
    d_h3 = relu_backward(m3, d_a3)
    d_a2, d_params["c3_w"], d_params["c3_b"] = conv3x3_backward(c3, d_h3)
    d_h2 = relu_backward(m2, d_a2)
    d_a1, d_params["c2_w"], d_params["c2_b"] = conv3x3_backward(c2, d_h2)
    d_h1 = relu_backward(m1, d_a1)
    d_image, d_params["c1_w"], d_params["c1_b"] = conv3x3_backward(c1, d_h1)
    return d_image, d_params


# ---------------------------------------------------------------------------
# blur application
# ---------------------------------------------------------------------------

def delta_field(height, width, kernel_size):
    """Identity blur: center-delta kernel at every pixel."""
    field = np.zeros((height, width, kernel_size, kernel_size))
    c = kernel_size // 2
    field[:, :, c, c] = 1.0
    return field


def _check_field(image, field):
    if image.ndim != 3:
        raise InvalidInputError(f"expected (H, W, C) image, got {image.shape}")
    if field.ndim != 4 or field.shape[:2] != image.shape[:2]:
        raise InvalidInputError(
            f"field {field.shape} does not match image {image.shape}"
        )
    k = field.shape[2]
    if field.shape[3] != k or k % 2 == 0:
        raise InvalidInputError(f"kernels must be odd and square, got {field.shape[2:]}")
    return k


def _reflect_windows(image, k):
    r = k // 2
    padded = np.pad(image, ((r, r), (r, r), (0, 0)), mode="reflect")
    sh, sw, sc = padded.strides
    h, w, _ = image.shape
    win = as_strided(
        padded,
        shape=(h, w, k, k, image.shape[2]),
        strides=(sh, sw, sh, sw, sc),
        writeable=False,
    )
    return win, padded.shape


def apply_blur(image, field):
    """out(p) = sum_offsets kernel_p(offset) * image(p + offset), reflect pad."""
    k = _check_field(image, field)
    win, _ = _reflect_windows(image, k)
    out = np.einsum("hwklc,hwkl->hwc", win, field, optimize=True)
    return out, (image, field, k)


def apply_blur_backward(cache, d_out):
    """Gradients w.r.t. both the image and the kernel field."""
    image, field, k = cache
    win, padded_shape = _reflect_windows(image, k)
    d_field = np.einsum("hwklc,hwc->hwkl", win, d_out, optimize=True)

    h, w, c = image.shape
    r = k // 2
    d_padded = np.zeros(padded_shape)
    for i in range(k):
        for j in range(k):
            d_padded[i:i + h, j:j + w] += field[:, :, i, j, None] * d_out
    # adjoint of reflect padding: fold border contributions onto their sources
    row_idx = np.pad(np.arange(h), r, mode="reflect")
    col_idx = np.pad(np.arange(w), r, mode="reflect")
    d_image = np.zeros_like(image)
    np.add.at(d_image, (row_idx[:, None], col_idx[None, :]), d_padded)
    return d_image, d_field
