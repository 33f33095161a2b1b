"""Density control: the six-way shuffle split and classic clone/split/prune.

The shuffle split replaces every sufficiently opaque Gaussian with six
axis-shifted, shrunken children (two per principal axis), then resets every
primitive's opacity to a small value so optimization re-selects the useful
ones.  Classic adaptive density control drives growth from accumulated
positional-gradient statistics between optimizer steps.
"""

from dataclasses import dataclass

import numpy as np

from . import core, rasterizer, sceneio
from .errors import InvalidInputError

DEFAULT_ALPHA_SHIFT = 0.5
DEFAULT_LAMBDA = 1.9
DEFAULT_OPACITY_THRESHOLD = 0.5
DEFAULT_RESET_OPACITY = 0.01
OFFSET_AXIS_SHRINK = 4.0

ADC_GRAD_THRESHOLD = 2e-4
ADC_PERCENT_DENSE = 0.01
ADC_PRUNE_OPACITY = 0.005
ADC_SPLIT_SHRINK = 1.6


def split_children(gaussian, alpha_shift=DEFAULT_ALPHA_SHIFT, lam=DEFAULT_LAMBDA):
    """The six sub-Gaussians of one parent, keeping the parent's opacity.

    Child order: axis 0 +, axis 0 -, axis 1 +, axis 1 -, axis 2 +, axis 2 -.
    """
    rot = core.rotation_matrix(gaussian.rotation)
    s = gaussian.scale
    children = []
    for axis in range(3):
        offset = alpha_shift * s[axis] * rot[:, axis]
        child_scale = s / lam
        child_scale[axis] = s[axis] / OFFSET_AXIS_SHRINK
        for sign in (1.0, -1.0):
            children.append(
                core.Gaussian(
                    position=gaussian.position + sign * offset,
                    scale=child_scale.copy(),
                    rotation=gaussian.rotation.copy(),
                    opacity=gaussian.opacity,
                    sh=gaussian.sh.copy(),
                )
            )
    return children


def shuffle_split(
    cloud,
    alpha_shift=DEFAULT_ALPHA_SHIFT,
    lam=DEFAULT_LAMBDA,
    opacity_threshold=DEFAULT_OPACITY_THRESHOLD,
    reset_opacity=DEFAULT_RESET_OPACITY,
):
    """Six-way split of opaque Gaussians, then a global opacity reset.

    Gaussians at or below the opacity threshold carry over geometrically
    unchanged.  Every output primitive (children and carried) gets opacity
    ``reset_opacity`` and a zeroed flag vector.
    """
    n = cloud.n
    eligible = cloud.opacities > opacity_threshold
    counts = np.where(eligible, 6, 1)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])

    parent = np.repeat(np.arange(n), counts)
    positions = cloud.positions[parent].copy()
    log_scales = cloud.log_scales[parent].copy()
    rotations = cloud.rotations[parent].copy()
    sh = cloud.sh[parent].copy()

    idx_e = np.nonzero(eligible)[0]
    if idx_e.size:
        q = cloud.rotations[idx_e]
        norms = np.linalg.norm(q, axis=1)
        if np.any(norms < 1e-12):
            raise InvalidInputError("zero-norm quaternion in cloud")
        rot = core.rotation_matrices(q / norms[:, None])  # (E, 3, 3)
        s = cloud.scales[idx_e]  # (E, 3)

        # (E, 6, 3) child positions: mu +- alpha * s_i * R[:, i] per axis
        axis_cols = np.transpose(rot, (0, 2, 1))  # (E, 3, 3) row a = R[:, a]
        shift = alpha_shift * s[:, :, None] * axis_cols  # (E, 3, 3)
        signs = np.array([1.0, -1.0])
        child_pos = (
            cloud.positions[idx_e][:, None, None, :]
            + signs[None, None, :, None] * shift[:, :, None, :]
        ).reshape(idx_e.size, 6, 3)

        # (E, 6, 3) child scales: offset axis /4, the others /lam
        base = np.repeat((s / lam)[:, None, :], 3, axis=1)  # (E, 3axis, 3)
        ax = np.arange(3)
        base[:, ax, ax] = s / OFFSET_AXIS_SHRINK
        child_scales = np.repeat(base, 2, axis=1)  # (E, 6, 3)

        slots = (offsets[idx_e][:, None] + np.arange(6)[None, :]).ravel()
        positions[slots] = child_pos.reshape(-1, 3)
        log_scales[slots] = np.log(child_scales.reshape(-1, 3))

    out = core.GaussianCloud(
        positions=positions,
        log_scales=log_scales,
        rotations=rotations,
        opacity_logits=np.full(total, core.encode_opacity(reset_opacity)),
        sh=sh,
        sh_degree=cloud.sh_degree,
        flags=np.zeros((total, core.flag_dim(cloud.sh_degree))),
    )
    return out


def render_equivalence_score(parent, children, cameras, background=None):
    """Mean PSNR between renders of the parent and of its six children.

    ``children`` may be a list of Gaussians or a GaussianCloud; they are
    rendered at their stored (pre-reset) opacity.
    """
    if len(cameras) == 0:
        raise InvalidInputError("camera set must not be empty")
    deg = int(round(np.sqrt(parent.sh.shape[0]))) - 1
    parent_cloud = core.GaussianCloud.from_gaussians([parent], sh_degree=deg)
    if isinstance(children, core.GaussianCloud):
        child_cloud = children
    else:
        child_cloud = core.GaussianCloud.from_gaussians(children, sh_degree=deg)
    scores = []
    for cam in cameras:
        a = rasterizer.render(parent_cloud, cam, background).color
        b = rasterizer.render(child_cloud, cam, background).color
        scores.append(sceneio.psnr(a, b))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# classic adaptive density control
# ---------------------------------------------------------------------------

@dataclass
class DensifyStats:
    """Accumulated positional-gradient norms between densification rounds."""

    grad_accum: np.ndarray  # (N,) sum of world-space position-gradient norms
    denom: np.ndarray  # (N,) visibility counts

    @staticmethod
    def zeros(n):
        return DensifyStats(np.zeros(n), np.zeros(n))

    def update(self, grads):
        norms = np.linalg.norm(grads.positions, axis=1)
        self.grad_accum[grads.visible] += norms[grads.visible]
        self.denom[grads.visible] += 1.0

    def average(self):
        avg = np.zeros_like(self.grad_accum)
        seen = self.denom > 0
        avg[seen] = self.grad_accum[seen] / self.denom[seen]
        return avg


def _sample_offsets(rng, cloud, indices):
    """Positions drawn from each selected Gaussian's own distribution."""
    stds = cloud.scales[indices]
    local = rng.standard_normal((indices.size, 3)) * stds
    q = cloud.rotations[indices]
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    rot = core.rotation_matrices(q)
    return np.einsum("nij,nj->ni", rot, local)


def adaptive_density_control(
    cloud,
    stats,
    rng,
    extent,
    optimizer=None,
    grad_threshold=ADC_GRAD_THRESHOLD,
    percent_dense=ADC_PERCENT_DENSE,
    prune_opacity=ADC_PRUNE_OPACITY,
    split_shrink=ADC_SPLIT_SHRINK,
):
    """One clone/split/prune round; returns (cloud, fresh stats).

    Clones (small, high gradient) are copies shifted by a sampled offset;
    splits (large, high gradient) produce two resampled children at scale
    s/split_shrink and remove the parent; pruning drops low-opacity
    primitives.  When an optimizer is given, its moment rows follow the
    surviving primitives and new rows start at zero.
    """
    avg = stats.average()
    high = avg >= grad_threshold
    size_limit = percent_dense * extent
    small = cloud.scales.max(axis=1) <= size_limit
    clone_mask = high & small
    split_mask = high & ~small

    keep_mask = ~split_mask  # split parents are replaced by their children
    keep_mask &= cloud.opacities >= prune_opacity

    new_parts = []
    clone_idx = np.nonzero(clone_mask & keep_mask)[0]
    if clone_idx.size:
        clone = cloud.select(np.isin(np.arange(cloud.n), clone_idx))
        clone.positions = clone.positions + _sample_offsets(rng, cloud, clone_idx)
        if clone.flags is not None:
            clone.flags[:] = 0.0
        new_parts.append(clone)

    split_idx = np.nonzero(split_mask & (cloud.opacities >= prune_opacity))[0]
    if split_idx.size:
        doubled = np.repeat(split_idx, 2)
        child = cloud.select(np.isin(np.arange(cloud.n), split_idx))
        child = core.GaussianCloud.concatenate(child, child)
        # interleave back to per-parent pairs for deterministic ordering
        order = np.argsort(np.concatenate([split_idx, split_idx]), kind="stable")
        for field in ("positions", "log_scales", "rotations", "opacity_logits", "sh"):
            setattr(child, field, getattr(child, field)[order])
        if child.flags is not None:
            child.flags = np.zeros_like(child.flags[order])
        child.positions = cloud.positions[doubled] + _sample_offsets(rng, cloud, doubled)
        child.log_scales = np.log(cloud.scales[doubled] / split_shrink)
        new_parts.append(child)

    survivors = cloud.select(keep_mask)
    if optimizer is not None:
        optimizer.select(keep_mask)
    out = survivors
    for part in new_parts:
        out = core.GaussianCloud.concatenate(out, part)
    n_new = out.n - survivors.n
    if optimizer is not None and n_new > 0:
        optimizer.append({key: n_new for key in optimizer.m})
    return out, DensifyStats.zeros(out.n)


def clamp_opacity(cloud, ceiling=DEFAULT_RESET_OPACITY):
    """Periodic opacity reset: opacity := min(opacity, ceiling), in place."""
    capped = np.minimum(cloud.opacities, ceiling)
    cloud.opacity_logits = core.encode_opacity(capped)
    return cloud
