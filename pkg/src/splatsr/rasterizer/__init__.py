"""Differentiable tile-based splatting renderer.

Public surface:

- ``project(gaussian, camera)``: screen-space mean/covariance/depth of one
  Gaussian, or None when culled.
- ``render(cloud, camera, background)``: RenderOutput with color, alpha,
  normalized depth, and per-pixel contributor counts.
- ``render_with_context``: same, plus a reusable context for the adjoint.
- ``render_backward``: analytic gradients of a scalar loss w.r.t. every
  Gaussian attribute, given upstream gradients on the output images.

Splats composite front to back within 16 px tiles; the depth order is a
stable sort on camera-space z so equal depths resolve by index.  The active
kernel set follows the package backend flag.
"""

from dataclasses import dataclass, field

import numpy as np

from .. import backend
from ..errors import InvalidInputError
from . import geometry, kernels_numba, kernels_numpy
from .geometry import DEFAULT_ZNEAR, ProjectionContext, project, project_cloud

TILE = kernels_numba.TILE
T_STOP = kernels_numba.T_STOP
# Pixels with accumulated opacity at or below this report depth 0.
DEPTH_ALPHA_MIN = 1e-8


def _kernels():
    return kernels_numba if backend.USE_NUMBA else kernels_numpy


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W) accumulated opacity, 1 - final transmittance
    depth: np.ndarray  # (H, W) opacity-weighted mean depth (0 where empty)
    n_contrib: np.ndarray  # (H, W) int32 composited splat count


@dataclass
class RenderGradients:
    positions: np.ndarray  # (N, 3)
    scales: np.ndarray  # (N, 3) w.r.t. decoded (positive) scale
    rotations: np.ndarray  # (N, 4) w.r.t. the raw quaternion
    opacities: np.ndarray  # (N,) w.r.t. decoded opacity
    sh: np.ndarray  # (N, K, 3)
    visible: np.ndarray  # (N,) bool, True where the Gaussian reached the screen


@dataclass
class RenderContext:
    proj: ProjectionContext
    order: np.ndarray  # depth-sorted positions into proj arrays
    means2d: np.ndarray  # sorted copies consumed by the kernels
    conics: np.ndarray
    colors: np.ndarray
    sigmas: np.ndarray
    depths: np.ndarray
    tile_splats: np.ndarray
    tile_start: np.ndarray
    tile_end: np.ndarray
    n_tiles_x: np.ndarray
    background: np.ndarray
    tfinal: np.ndarray  # (H, W)
    alphasum: np.ndarray  # (H, W) directly accumulated weights, no cancellation
    depthsum: np.ndarray  # (H, W)
    endpos: np.ndarray  # (H, W)


def _build_tiles(means2d, radii, width, height):
    """Duplicate each splat into every 16 px tile its 3-sigma box touches.

    Input arrays are already depth sorted; entries within a tile stay in that
    order, so the kernels see strict front-to-back sequences.
    """
    n_tx = (width + TILE - 1) // TILE
    n_ty = (height + TILE - 1) // TILE
    m = means2d.shape[0]
    if m == 0:
        empty = np.zeros(0, dtype=np.int64)
        starts = np.zeros(n_tx * n_ty, dtype=np.int64)
        return empty, starts, starts.copy(), n_tx

    x0 = np.clip(np.floor((means2d[:, 0] - radii) / TILE).astype(np.int64), 0, n_tx)
    x1 = np.clip(np.floor((means2d[:, 0] + radii) / TILE).astype(np.int64) + 1, 0, n_tx)
    y0 = np.clip(np.floor((means2d[:, 1] - radii) / TILE).astype(np.int64), 0, n_ty)
    y1 = np.clip(np.floor((means2d[:, 1] + radii) / TILE).astype(np.int64) + 1, 0, n_ty)
    span_x = np.maximum(x1 - x0, 0)
    span_y = np.maximum(y1 - y0, 0)
    counts = span_x * span_y

    offsets = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = offsets[-1]
    rep = np.repeat(np.arange(m, dtype=np.int64), counts)
    e = np.arange(total, dtype=np.int64) - offsets[rep]
    tx = x0[rep] + e % span_x[rep]
    ty = y0[rep] + e // span_x[rep]
    tile_id = ty * n_tx + tx

    order = np.lexsort((rep, tile_id))
    tile_splats = rep[order]
    sorted_ids = tile_id[order]
    grid = np.arange(n_tx * n_ty, dtype=np.int64)
    tile_start = np.searchsorted(sorted_ids, grid, side="left")
    tile_end = np.searchsorted(sorted_ids, grid, side="right")
    return tile_splats, tile_start, tile_end, n_tx


def _normalize_background(background):
    if background is None:
        return np.zeros(3)
    bg = np.asarray(background, dtype=np.float64).reshape(-1)
    if bg.size == 1:
        bg = np.repeat(bg, 3)
    if bg.size != 3:
        raise InvalidInputError("background must be a scalar or length-3 RGB")
    return bg.copy()


def render_with_context(cloud, camera, background=None, znear=DEFAULT_ZNEAR):
    bg = _normalize_background(background)
    proj = project_cloud(cloud, camera, znear)
    order = np.argsort(proj.depths, kind="stable")

    means2d = np.ascontiguousarray(proj.means2d[order])
    conics = np.ascontiguousarray(proj.conics[order])
    colors = np.ascontiguousarray(proj.colors[order])
    sigmas = np.ascontiguousarray(proj.sigmas[order])
    depths = np.ascontiguousarray(proj.depths[order])
    radii = proj.radii[order]

    h, w = camera.height, camera.width
    tile_splats, tile_start, tile_end, n_tx = _build_tiles(means2d, radii, w, h)

    color = np.zeros((h, w, 3))
    tfinal = np.ones((h, w))
    alphasum = np.zeros((h, w))
    depthsum = np.zeros((h, w))
    endpos = np.zeros((h, w), dtype=np.int64)
    ncontrib = np.zeros((h, w), dtype=np.int32)

    _kernels().composite_forward(
        means2d, conics, colors, sigmas, depths,
        tile_splats, tile_start, tile_end, n_tx, bg,
        color, tfinal, alphasum, depthsum, endpos, ncontrib,
    )

    depth = np.where(
        alphasum > DEPTH_ALPHA_MIN,
        depthsum / np.maximum(alphasum, DEPTH_ALPHA_MIN),
        0.0,
    )

    out = RenderOutput(color=color, alpha=alphasum.copy(), depth=depth, n_contrib=ncontrib)
    ctx = RenderContext(
        proj=proj, order=order, means2d=means2d, conics=conics, colors=colors,
        sigmas=sigmas, depths=depths, tile_splats=tile_splats,
        tile_start=tile_start, tile_end=tile_end, n_tiles_x=n_tx,
        background=bg, tfinal=tfinal, alphasum=alphasum, depthsum=depthsum,
        endpos=endpos,
    )
    return out, ctx


def render(cloud, camera, background=None, znear=DEFAULT_ZNEAR):
    out, _ = render_with_context(cloud, camera, background, znear)
    return out


def render_backward(
    cloud,
    camera,
    d_color=None,
    d_depth=None,
    d_alpha=None,
    background=None,
    znear=DEFAULT_ZNEAR,
    ctx=None,
):
    """Gradients of sum(d_color * color + d_depth * depth + d_alpha * alpha).

    Upstream arrays may be None (treated as zero).  When ``ctx`` is omitted
    the forward pass is recomputed internally.
    """
    if ctx is None:
        _, ctx = render_with_context(cloud, camera, background, znear)
    h, w = camera.height, camera.width

    d_pix_color = np.zeros((h, w, 3)) if d_color is None else np.asarray(d_color, dtype=np.float64)
    if d_pix_color.shape != (h, w, 3):
        raise InvalidInputError(f"d_color must have shape {(h, w, 3)}")
    d_pix_tfinal = d_pix_color @ ctx.background
    d_pix_dsum = np.zeros((h, w))
    if d_alpha is not None:
        d_pix_tfinal = d_pix_tfinal - np.asarray(d_alpha, dtype=np.float64)
    if d_depth is not None:
        dd = np.asarray(d_depth, dtype=np.float64)
        acc = ctx.alphasum
        valid = acc > DEPTH_ALPHA_MIN
        safe = np.maximum(acc, DEPTH_ALPHA_MIN)
        d_pix_dsum = np.where(valid, dd / safe, 0.0)
        d_pix_tfinal = d_pix_tfinal + np.where(
            valid, dd * ctx.depthsum / (safe * safe), 0.0
        )

    ms = ctx.means2d.shape[0]
    d_mean2d = np.zeros((ms, 2))
    d_conic = np.zeros((ms, 3))
    d_col = np.zeros((ms, 3))
    d_sigma = np.zeros(ms)
    d_z = np.zeros(ms)

    _kernels().composite_backward(
        ctx.means2d, ctx.conics, ctx.colors, ctx.sigmas, ctx.depths,
        ctx.tile_splats, ctx.tile_start, ctx.n_tiles_x,
        ctx.tfinal, ctx.endpos,
        np.ascontiguousarray(d_pix_color), d_pix_tfinal, d_pix_dsum,
        d_mean2d, d_conic, d_col, d_sigma, d_z,
    )

    # kernel gradients live in depth-sorted space; undo the permutation
    inv = ctx.order
    proj_mean2d = np.zeros_like(d_mean2d)
    proj_conic = np.zeros_like(d_conic)
    proj_col = np.zeros_like(d_col)
    proj_sigma = np.zeros_like(d_sigma)
    proj_z = np.zeros_like(d_z)
    proj_mean2d[inv] = d_mean2d
    proj_conic[inv] = d_conic
    proj_col[inv] = d_col
    proj_sigma[inv] = d_sigma
    proj_z[inv] = d_z

    d_position, d_scale, d_rotation, d_opacity, d_sh = geometry.chain_backward(
        ctx.proj, cloud, camera, proj_mean2d, proj_conic, proj_col, proj_sigma, proj_z
    )
    visible = np.zeros(cloud.n, dtype=bool)
    visible[ctx.proj.gauss_index] = True
    return RenderGradients(
        positions=d_position, scales=d_scale, rotations=d_rotation,
        opacities=d_opacity, sh=d_sh, visible=visible,
    )
