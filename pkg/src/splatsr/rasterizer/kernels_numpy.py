"""Vectorized compositing, numerically equivalent to the sequential loops.

The sequential forward stops a pixel once transmittance would cross T_STOP.
Because transmittance is non-increasing along the splat list, the set of
composited entries is exactly the prefix where the running product stays at or
above T_STOP, so a cumprod plus mask reproduces the early-out without any
per-pixel control flow.  Signatures mirror kernels_numba so the dispatcher can
swap them freely.
"""

import numpy as np

TILE = 16
T_STOP = 1e-4
ALPHA_MAX = 0.99


def _tile_pixels(tile, n_tiles_x, width, height):
    ty, tx = divmod(tile, n_tiles_x)
    y0, x0 = ty * TILE, tx * TILE
    y1, x1 = min(y0 + TILE, height), min(x0 + TILE, width)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    return ys.ravel(), xs.ravel()


def _splat_terms(means2d, conics, sigmas, idxs, pys, pxs):
    """Per pixel x splat alpha terms for one tile; returns (P, S) arrays."""
    dx = (pxs[:, None] + 0.5) - means2d[idxs, 0][None, :]
    dy = (pys[:, None] + 0.5) - means2d[idxs, 1][None, :]
    ca = conics[idxs, 0][None, :]
    cb = conics[idxs, 1][None, :]
    cc = conics[idxs, 2][None, :]
    power = -0.5 * (ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy)
    inside = power <= 0.0
    gval = np.exp(np.minimum(power, 0.0))
    raw_alpha = np.where(inside, sigmas[idxs][None, :] * gval, 0.0)
    alpha = np.minimum(raw_alpha, ALPHA_MAX)
    return dx, dy, ca, cb, cc, inside, gval, raw_alpha, alpha


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
    out_color[...] = background[None, None, :]
    out_tfinal[...] = 1.0
    out_alphasum[...] = 0.0
    out_depthsum[...] = 0.0
    out_ncontrib[...] = 0
    for tile in range(tile_start.shape[0]):
        start, end = tile_start[tile], tile_end[tile]
        pys, pxs = _tile_pixels(tile, n_tiles_x, width, height)
        if start == end:
            out_endpos[pys, pxs] = start
            continue
        idxs = tile_splats[start:end]
        _, _, _, _, _, inside, _, _, alpha = _splat_terms(
            means2d, conics, sigmas, idxs, pys, pxs
        )
        one_m = 1.0 - alpha
        t_after = np.cumprod(one_m, axis=1)
        processed = t_after >= T_STOP
        t_before = np.empty_like(t_after)
        t_before[:, 0] = 1.0
        t_before[:, 1:] = t_after[:, :-1]
        w = alpha * t_before * processed

        out_color[pys, pxs] = w @ colors[idxs]
        tfinal = np.where(processed, one_m, 1.0).prod(axis=1)
        out_color[pys, pxs] += tfinal[:, None] * background[None, :]
        out_tfinal[pys, pxs] = tfinal
        out_alphasum[pys, pxs] = w.sum(axis=1)
        out_depthsum[pys, pxs] = w @ depths[idxs]
        out_ncontrib[pys, pxs] = np.sum(processed & inside, axis=1)
        below = t_after < T_STOP
        local_end = np.where(below.any(axis=1), below.argmax(axis=1), idxs.size)
        out_endpos[pys, pxs] = start + local_end


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
    tile_end_full = np.empty_like(tile_start)
    tile_end_full[:-1] = tile_start[1:]
    tile_end_full[-1] = tile_splats.shape[0]
    for tile in range(n_tiles):
        start, end = tile_start[tile], tile_end_full[tile]
        if start == end:
            continue
        pys, pxs = _tile_pixels(tile, n_tiles_x, width, height)
        idxs = tile_splats[start:end]
        dx, dy, ca, cb, cc, inside, gval, raw_alpha, alpha = _splat_terms(
            means2d, conics, sigmas, idxs, pys, pxs
        )
        one_m = 1.0 - alpha
        t_after = np.cumprod(one_m, axis=1)
        processed = t_after >= T_STOP
        t_before = np.empty_like(t_after)
        t_before[:, 0] = 1.0
        t_before[:, 1:] = t_after[:, :-1]
        comp = processed & inside
        w = alpha * t_before * comp

        dc = d_pix_color[pys, pxs]  # (P, 3)
        dtf = d_pix_tfinal[pys, pxs]  # (P,)
        dds = d_pix_dsum[pys, pxs]  # (P,)
        tf = tfinal[pys, pxs]  # (P,)

        # suffix sums of downstream contributions (over j > i)
        wc = w[:, :, None] * colors[idxs][None, :, :]
        suf_c = np.flip(np.cumsum(np.flip(wc, 1), axis=1), 1) - wc
        wz = w * depths[idxs][None, :]
        suf_d = np.flip(np.cumsum(np.flip(wz, 1), axis=1), 1) - wz

        d_alpha = np.einsum(
            "pc,psc->ps", dc, t_before[:, :, None] * colors[idxs][None, :, :]
            - suf_c / one_m[:, :, None]
        )
        d_alpha += dds[:, None] * (t_before * depths[idxs][None, :] - suf_d / one_m)
        d_alpha -= dtf[:, None] * tf[:, None] / one_m
        d_alpha *= comp

        np.add.at(d_color, idxs, np.einsum("ps,pc->sc", w, dc))
        np.add.at(d_z, idxs, w.T @ dds)

        unclipped = comp & (raw_alpha < ALPHA_MAX)
        d_sigma_part = np.sum(gval * d_alpha * unclipped, axis=0)
        np.add.at(d_sigma, idxs, d_sigma_part)
        common = raw_alpha * d_alpha * unclipped
        dcon = np.stack(
            [
                np.sum(common * (-0.5 * dx * dx), axis=0),
                np.sum(common * (-dx * dy), axis=0),
                np.sum(common * (-0.5 * dy * dy), axis=0),
            ],
            axis=1,
        )
        np.add.at(d_conic, idxs, dcon)
        dmean = np.stack(
            [
                np.sum(common * (ca * dx + cb * dy), axis=0),
                np.sum(common * (cb * dx + cc * dy), axis=0),
            ],
            axis=1,
        )
        np.add.at(d_mean2d, idxs, dmean)
