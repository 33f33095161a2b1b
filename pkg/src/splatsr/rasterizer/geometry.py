"""Per-Gaussian projection to screen space and its adjoint.

The forward path maps every Gaussian to a 2D mean, a 2x2 conic (inverse
covariance), a camera-space depth, and a view-dependent color.  The projected
covariance is the first-order (Jacobian) image of the 3D covariance with a
+0.3 px^2 low-pass floor on the diagonal.  The backward path chains pixel-loop
gradients (d mean2d, d conic, d color, d sigma, d z) to the Gaussian
attributes (mu, s, q, sigma, sh) analytically; the finite-difference suite is
the arbiter for every formula here.
"""

from dataclasses import dataclass

import numpy as np

from .. import core
from ..errors import InvalidInputError

# Projected-covariance dilation, in px^2 (screen-space low-pass floor).
COV2D_FLOOR = 0.3
# Guard band beyond the image border inside which projected centers survive.
GUARD_BAND = 0.3
DEFAULT_ZNEAR = 0.01


@dataclass
class ProjectionContext:
    """Screen-space splats plus the cached intermediates the adjoint needs.

    All arrays are indexed by visible-splat position; ``gauss_index`` maps each
    back to its row in the cloud.
    """

    gauss_index: np.ndarray  # (M,) int
    means2d: np.ndarray  # (M, 2) pixel coordinates
    conics: np.ndarray  # (M, 3) packed inverse covariance (a, b, c)
    depths: np.ndarray  # (M,) camera-space z
    colors: np.ndarray  # (M, 3) clamped RGB
    radii: np.ndarray  # (M,) 3-sigma pixel radius
    # cached intermediates
    colors_raw: np.ndarray  # (M, 3) before the >=0 clamp
    basis: np.ndarray  # (M, K) SH basis at the view direction
    view_dirs: np.ndarray  # (M, 3) unit directions camera->gaussian
    view_dists: np.ndarray  # (M,)
    cov2d: np.ndarray  # (M, 3) packed (a, b, c) including the floor
    M2x3: np.ndarray  # (M, 2, 3) J @ R_cw
    cov3d: np.ndarray  # (M, 3, 3)
    rot3: np.ndarray  # (M, 3, 3) Gaussian rotation matrices
    scales: np.ndarray  # (M, 3)
    q_unit: np.ndarray  # (M, 4)
    q_norms: np.ndarray  # (M,)
    sigmas: np.ndarray  # (M,)
    pc: np.ndarray  # (M, 3) camera-space centers


def project_cloud(cloud, camera, znear=DEFAULT_ZNEAR):
    """Project all Gaussians; culled ones simply drop out of the context."""
    n = cloud.n
    if n == 0:
        z = np.zeros
        return ProjectionContext(
            np.zeros(0, dtype=np.int64), z((0, 2)), z((0, 3)), z(0), z((0, 3)),
            z(0), z((0, 3)), z((0, cloud.k_coeff)), z((0, 3)), z(0), z((0, 3)),
            z((0, 2, 3)), z((0, 3, 3)), z((0, 3, 3)), z((0, 3)), z((0, 4)),
            z(0), z(0), z((0, 3)),
        )

    W_cw = camera.rotation_matrix()
    cam_center = camera.center

    pc = cloud.positions @ W_cw.T + camera.translation
    in_front = pc[:, 2] > znear

    idx = np.nonzero(in_front)[0]
    pc = pc[idx]
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]

    mx = camera.fx * x / z + camera.cx
    my = camera.fy * y / z + camera.cy
    w, h = camera.width, camera.height
    in_band = (
        (mx > -GUARD_BAND * w)
        & (mx < (1.0 + GUARD_BAND) * w)
        & (my > -GUARD_BAND * h)
        & (my < (1.0 + GUARD_BAND) * h)
    )
    idx = idx[in_band]
    pc = pc[in_band]
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    mx, my = mx[in_band], my[in_band]
    m = idx.size

    # 3D covariance pieces
    q = cloud.rotations[idx]
    q_norms = np.linalg.norm(q, axis=1)
    if np.any(q_norms < 1e-12):
        raise InvalidInputError("zero-norm quaternion in cloud")
    q_unit = q / q_norms[:, None]
    rot3 = core.rotation_matrices(q_unit)
    scales = cloud.scales[idx]
    m3 = rot3 * scales[:, None, :]  # R @ diag(s)
    cov3d = m3 @ np.transpose(m3, (0, 2, 1))

    # EWA first-order projection
    J = np.zeros((m, 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * x / (z * z)
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * y / (z * z)
    M2x3 = J @ W_cw
    c2 = M2x3 @ cov3d @ np.transpose(M2x3, (0, 2, 1))
    cov2d = np.stack(
        [c2[:, 0, 0] + COV2D_FLOOR, c2[:, 0, 1], c2[:, 1, 1] + COV2D_FLOOR], axis=1
    )

    a, b, c = cov2d[:, 0], cov2d[:, 1], cov2d[:, 2]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radii = np.ceil(3.0 * np.sqrt(lam_max))

    # view-dependent color
    dirs = cloud.positions[idx] - cam_center
    dists = np.linalg.norm(dirs, axis=1)
    dists = np.maximum(dists, 1e-12)
    units = dirs / dists[:, None]
    basis = core.sh_basis(units, cloud.sh_degree)
    colors_raw = np.einsum("mk,mkc->mc", basis, cloud.sh[idx]) + 0.5
    colors = np.maximum(colors_raw, 0.0)

    sigmas = cloud.opacities[idx]

    return ProjectionContext(
        gauss_index=idx,
        means2d=np.stack([mx, my], axis=1),
        conics=conics,
        depths=z.copy(),
        colors=colors,
        radii=radii,
        colors_raw=colors_raw,
        basis=basis,
        view_dirs=units,
        view_dists=dists,
        cov2d=cov2d,
        M2x3=M2x3,
        cov3d=cov3d,
        rot3=rot3,
        scales=scales,
        q_unit=q_unit,
        q_norms=q_norms,
        sigmas=sigmas,
        pc=pc,
    )


def project(gaussian, camera, znear=DEFAULT_ZNEAR):
    """Project a single Gaussian.

    Returns (mean2d, cov2d 2x2, depth) or None when the Gaussian is culled
    (behind znear or outside the frustum guard band).
    """
    cloud = core.GaussianCloud.from_gaussians([gaussian], sh_degree=_degree_of(gaussian))
    ctx = project_cloud(cloud, camera, znear)
    if ctx.gauss_index.size == 0:
        return None
    a, b, c = ctx.cov2d[0]
    return ctx.means2d[0].copy(), np.array([[a, b], [b, c]]), float(ctx.depths[0])


def _degree_of(gaussian):
    k = gaussian.sh.shape[0]
    deg = int(round(np.sqrt(k))) - 1
    if (deg + 1) ** 2 != k:
        raise InvalidInputError(f"SH coefficient count {3 * k} is not 3*(deg+1)^2")
    return deg


# ---------------------------------------------------------------------------
# Backward chain
# ---------------------------------------------------------------------------

def _rotation_jacobian(q_unit):
    """d R / d q_unit as an (M, 3, 3, 4) tensor for unit quaternions."""
    w, x, y, z = q_unit[:, 0], q_unit[:, 1], q_unit[:, 2], q_unit[:, 3]
    m = q_unit.shape[0]
    T = np.zeros((m, 3, 3, 4))
    zero = np.zeros(m)
    # rows of R, entry by entry: (d/dw, d/dx, d/dy, d/dz) * 2
    T[:, 0, 0] = np.stack([zero, zero, -2 * y, -2 * z], axis=1)
    T[:, 0, 1] = np.stack([-z, y, x, -w], axis=1)
    T[:, 0, 2] = np.stack([y, z, w, x], axis=1)
    T[:, 1, 0] = np.stack([z, y, x, w], axis=1)
    T[:, 1, 1] = np.stack([zero, -2 * x, zero, -2 * z], axis=1)
    T[:, 1, 2] = np.stack([-x, -w, z, y], axis=1)
    T[:, 2, 0] = np.stack([-y, z, -w, x], axis=1)
    T[:, 2, 1] = np.stack([x, w, z, y], axis=1)
    T[:, 2, 2] = np.stack([zero, -2 * x, -2 * y, zero], axis=1)
    return 2.0 * T


def _sh_basis_jacobian(units, deg):
    """d basis / d direction as an (M, K, 3) tensor."""
    m = units.shape[0]
    k = (deg + 1) ** 2
    D = np.zeros((m, k, 3))
    if deg >= 1:
        D[:, 1, 1] = -core.SH_C1
        D[:, 2, 2] = core.SH_C1
        D[:, 3, 0] = -core.SH_C1
    if deg >= 2:
        x, y, z = units[:, 0], units[:, 1], units[:, 2]
        c20, c21, c22, c23, c24 = core.SH_C2
        D[:, 4, 0] = c20 * y
        D[:, 4, 1] = c20 * x
        D[:, 5, 1] = c21 * z
        D[:, 5, 2] = c21 * y
        D[:, 6, 0] = -2.0 * c22 * x
        D[:, 6, 1] = -2.0 * c22 * y
        D[:, 6, 2] = 4.0 * c22 * z
        D[:, 7, 0] = c23 * z
        D[:, 7, 2] = c23 * x
        D[:, 8, 0] = 2.0 * c24 * x
        D[:, 8, 1] = -2.0 * c24 * y
    return D


def chain_backward(ctx, cloud, camera, d_mean2d, d_conic, d_color, d_sigma, d_z):
    """Chain pixel-loop splat gradients back to Gaussian attributes.

    Inputs are per visible splat (aligned with ctx); returns dense per-cloud
    arrays (d_position, d_scale, d_rotation, d_opacity, d_sh) with zeros for
    culled Gaussians.  d_scale and d_opacity are w.r.t. decoded values;
    d_rotation is w.r.t. the raw (unnormalized) quaternion.
    """
    n = cloud.n
    k = cloud.k_coeff
    d_position = np.zeros((n, 3))
    d_scale = np.zeros((n, 3))
    d_rotation = np.zeros((n, 4))
    d_opacity = np.zeros(n)
    d_sh = np.zeros((n, k, 3))
    m = ctx.gauss_index.size
    if m == 0:
        return d_position, d_scale, d_rotation, d_opacity, d_sh

    W_cw = camera.rotation_matrix()
    fx, fy = camera.fx, camera.fy
    x, y, z = ctx.pc[:, 0], ctx.pc[:, 1], ctx.pc[:, 2]

    # color clamp, SH coefficients, and view direction
    active = (ctx.colors_raw > 0.0).astype(np.float64)
    d_raw = d_color * active  # (M, 3)
    dsh_m = ctx.basis[:, :, None] * d_raw[:, None, :]  # (M, K, 3)
    sh_vis = cloud.sh[ctx.gauss_index]
    g_coeff = np.einsum("mkc,mc->mk", sh_vis, d_raw)  # (M, K)
    Dbasis = _sh_basis_jacobian(ctx.view_dirs, cloud.sh_degree)
    d_unit = np.einsum("mk,mkj->mj", g_coeff, Dbasis)  # (M, 3)
    # through normalization of the view direction
    rdot = np.einsum("mj,mj->m", ctx.view_dirs, d_unit)
    d_mu_color = (d_unit - ctx.view_dirs * rdot[:, None]) / ctx.view_dists[:, None]

    # conic -> packed 2D covariance
    a, b, c = ctx.cov2d[:, 0], ctx.cov2d[:, 1], ctx.cov2d[:, 2]
    det = a * c - b * b
    inv_det2 = 1.0 / (det * det)
    ga, gb, gc = d_conic[:, 0], d_conic[:, 1], d_conic[:, 2]
    d_cov_a = (-c * c * ga + b * c * gb + (det - a * c) * gc) * inv_det2
    d_cov_b = (2 * b * c * ga - (2 * b * b + det) * gb + 2 * a * b * gc) * inv_det2
    d_cov_c = ((det - a * c) * ga + a * b * gb - a * a * gc) * inv_det2

    G2 = np.empty((m, 2, 2))
    G2[:, 0, 0] = d_cov_a
    G2[:, 0, 1] = 0.5 * d_cov_b
    G2[:, 1, 0] = 0.5 * d_cov_b
    G2[:, 1, 1] = d_cov_c

    Mt = np.transpose(ctx.M2x3, (0, 2, 1))
    d_cov3 = Mt @ G2 @ ctx.M2x3  # (M, 3, 3), symmetric
    d_M = 2.0 * G2 @ ctx.M2x3 @ ctx.cov3d  # (M, 2, 3)
    d_J = d_M @ W_cw.T  # (M, 2, 3)

    # projection Jacobian entries depend on the camera-space center
    z2 = z * z
    z3 = z2 * z
    d_pc = np.zeros((m, 3))
    d_pc[:, 0] = d_J[:, 0, 2] * (-fx / z2)
    d_pc[:, 1] = d_J[:, 1, 2] * (-fy / z2)
    d_pc[:, 2] = (
        d_J[:, 0, 0] * (-fx / z2)
        + d_J[:, 1, 1] * (-fy / z2)
        + d_J[:, 0, 2] * (2 * fx * x / z3)
        + d_J[:, 1, 2] * (2 * fy * y / z3)
    )

    # 2D mean
    d_pc[:, 0] += d_mean2d[:, 0] * fx / z
    d_pc[:, 1] += d_mean2d[:, 1] * fy / z
    d_pc[:, 2] += -d_mean2d[:, 0] * fx * x / z2 - d_mean2d[:, 1] * fy * y / z2

    # compositing depth
    d_pc[:, 2] += d_z

    d_mu = d_pc @ W_cw + d_mu_color

    # 3D covariance -> (s, q)
    m3 = ctx.rot3 * ctx.scales[:, None, :]
    d_m3 = 2.0 * d_cov3 @ m3
    ds_m = np.einsum("mrk,mrk->mk", d_m3, ctx.rot3)
    d_R = d_m3 * ctx.scales[:, None, :]
    RJ = _rotation_jacobian(ctx.q_unit)
    d_qu = np.einsum("mrc,mrcj->mj", d_R, RJ)
    qdot = np.einsum("mj,mj->m", ctx.q_unit, d_qu)
    d_q = (d_qu - ctx.q_unit * qdot[:, None]) / ctx.q_norms[:, None]

    np.add.at(d_position, ctx.gauss_index, d_mu)
    np.add.at(d_scale, ctx.gauss_index, ds_m)
    np.add.at(d_rotation, ctx.gauss_index, d_q)
    np.add.at(d_opacity, ctx.gauss_index, d_sigma)
    np.add.at(d_sh, ctx.gauss_index, dsh_m)
    return d_position, d_scale, d_rotation, d_opacity, d_sh
