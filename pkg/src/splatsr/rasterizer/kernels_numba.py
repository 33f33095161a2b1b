"""Sequential tile/pixel compositing loops, jitted when numba is active.

Both directions run single threaded so accumulation order, and therefore the
output bits, never depend on scheduling.  The numpy fallback in
kernels_numpy.py must produce identical values; the backend equivalence test
holds both to near machine precision.
"""

import numpy as np

from ..backend import jit

TILE = 16
# Stop compositing once transmittance would drop below this (the splat that
# would cross the threshold is skipped, then the pixel terminates).
T_STOP = 1e-4
ALPHA_MAX = 0.99


@jit
def composite_forward(
    means2d,
    conics,
    colors,
    sigmas,
    depths,
    tile_splats,
    tile_start,
    tile_end,
    n_tiles_x,
    background,
    out_color,
    out_tfinal,
    out_alphasum,
    out_depthsum,
    out_endpos,
    out_ncontrib,
):
    height, width = out_tfinal.shape
    n_tiles = tile_start.shape[0]
    for tile in range(n_tiles):
        start = tile_start[tile]
        end = tile_end[tile]
        ty = tile // n_tiles_x
        tx = tile - ty * n_tiles_x
        y0 = ty * TILE
        x0 = tx * TILE
        y1 = min(y0 + TILE, height)
        x1 = min(x0 + TILE, width)
        for py in range(y0, y1):
            for px in range(x0, x1):
                cx = px + 0.5
                cy = py + 0.5
                t = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                asum = 0.0
                dsum = 0.0
                ncontrib = 0
                pos = start
                while pos < end:
                    i = tile_splats[pos]
                    dx = cx - means2d[i, 0]
                    dy = cy - means2d[i, 1]
                    power = -0.5 * (
                        conics[i, 0] * dx * dx
                        + 2.0 * conics[i, 1] * dx * dy
                        + conics[i, 2] * dy * dy
                    )
                    if power > 0.0:
                        pos += 1
                        continue
                    alpha = sigmas[i] * np.exp(power)
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    t_next = t * (1.0 - alpha)
                    if t_next < T_STOP:
                        break
                    w = alpha * t
                    r += w * colors[i, 0]
                    g += w * colors[i, 1]
                    b += w * colors[i, 2]
                    asum += w
                    dsum += w * depths[i]
                    t = t_next
                    ncontrib += 1
                    pos += 1
                out_color[py, px, 0] = r + t * background[0]
                out_color[py, px, 1] = g + t * background[1]
                out_color[py, px, 2] = b + t * background[2]
                out_tfinal[py, px] = t
                out_alphasum[py, px] = asum
                out_depthsum[py, px] = dsum
                out_endpos[py, px] = pos
                out_ncontrib[py, px] = ncontrib


@jit
def composite_backward(
    means2d,
    conics,
    colors,
    sigmas,
    depths,
    tile_splats,
    tile_start,
    n_tiles_x,
    tfinal,
    endpos,
    d_pix_color,
    d_pix_tfinal,
    d_pix_dsum,
    d_mean2d,
    d_conic,
    d_color,
    d_sigma,
    d_z,
):
    height, width = tfinal.shape
    n_tiles = tile_start.shape[0]
    for tile in range(n_tiles):
        start = tile_start[tile]
        ty = tile // n_tiles_x
        tx = tile - ty * n_tiles_x
        y0 = ty * TILE
        x0 = tx * TILE
        y1 = min(y0 + TILE, height)
        x1 = min(x0 + TILE, width)
        for py in range(y0, y1):
            for px in range(x0, x1):
                end = endpos[py, px]
                if end <= start:
                    continue
                cx = px + 0.5
                cy = py + 0.5
                dc0 = d_pix_color[py, px, 0]
                dc1 = d_pix_color[py, px, 1]
                dc2 = d_pix_color[py, px, 2]
                dtf = d_pix_tfinal[py, px]
                dds = d_pix_dsum[py, px]
                t_final = tfinal[py, px]
                t = t_final
                # composited suffix (color and depth seen from the next splat
                # onward, assuming unit transmittance there)
                s0 = 0.0
                s1 = 0.0
                s2 = 0.0
                sd = 0.0
                pos = end - 1
                while pos >= start:
                    i = tile_splats[pos]
                    dx = cx - means2d[i, 0]
                    dy = cy - means2d[i, 1]
                    ca = conics[i, 0]
                    cb = conics[i, 1]
                    cc = conics[i, 2]
                    power = -0.5 * (ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy)
                    if power > 0.0:
                        pos -= 1
                        continue
                    gval = np.exp(power)
                    raw_alpha = sigmas[i] * gval
                    alpha = raw_alpha
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    one_m = 1.0 - alpha
                    t_before = t / one_m
                    w = alpha * t_before
                    d_alpha = (
                        dc0 * t_before * (colors[i, 0] - s0)
                        + dc1 * t_before * (colors[i, 1] - s1)
                        + dc2 * t_before * (colors[i, 2] - s2)
                        + dds * t_before * (depths[i] - sd)
                        - dtf * t_final / one_m
                    )
                    d_color[i, 0] += w * dc0
                    d_color[i, 1] += w * dc1
                    d_color[i, 2] += w * dc2
                    d_z[i] += dds * w
                    if raw_alpha < ALPHA_MAX:
                        d_sigma[i] += gval * d_alpha
                        common = raw_alpha * d_alpha
                        d_conic[i, 0] += common * (-0.5 * dx * dx)
                        d_conic[i, 1] += common * (-dx * dy)
                        d_conic[i, 2] += common * (-0.5 * dy * dy)
                        d_mean2d[i, 0] += common * (ca * dx + cb * dy)
                        d_mean2d[i, 1] += common * (cb * dx + cc * dy)
                    s0 = alpha * colors[i, 0] + one_m * s0
                    s1 = alpha * colors[i, 1] + one_m * s1
                    s2 = alpha * colors[i, 2] + one_m * s2
                    sd = alpha * depths[i] + one_m * sd
                    t = t_before
                    pos -= 1
