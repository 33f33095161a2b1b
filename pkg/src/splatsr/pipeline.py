"""Two-stage training: LR optimization, six-way split handoff, HR refinement.

Stage 1 fits a Gaussian cloud to the low-resolution views with a photometric
loss plus depth-correlation regularization.  The cloud is then densified by
the six-way split and handed to stage 2, which supervises high-resolution
renders against super-resolved images (from a pluggable resolver) passed
through the learned inconsistency head, with a learned per-pixel blur between
the render and the loss.  Pseudo cameras interpolated between training poses
extend the supervision set; their low-resolution ground truth comes from the
frozen stage-1 cloud.

Pretrained depth and super-resolution networks are replaced by providers:
oracles backed by the ground-truth synthetic cloud, or classical fallbacks
(bicubic upscaling, noisy depth).
"""

import logging
from dataclasses import dataclass, field

import cv2
import numpy as np

from . import core, densify, losses, neural2d, optim, rasterizer, robust, sceneio
from .config import TrainConfig, serialize, validate
from .errors import InvalidInputError, PipelineError

logger = logging.getLogger(__name__)


def _rng(seed, *stream):
    """Independent deterministic stream per (seed, purpose) pair."""
    return np.random.default_rng([int(seed), *(int(s) for s in stream)])


# stream tags for _rng
_S_SCENE, _S_INIT, _S_STAGE1, _S_STAGE2, _S_CORRUPT, _S_NETS, _S_BASELINE = range(7)


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------

@dataclass
class View:
    """One training view: a low-resolution camera and its image."""

    camera: core.Camera
    image: np.ndarray  # (H, W, 3) in [0, 1]


@dataclass
class Dataset:
    """Synthetic scene bundle: ground truth plus derived train/test data."""

    gt_cloud: core.GaussianCloud
    lr_views: list
    hr_images: list  # GT HR render per train view
    test_cameras: list  # held-out LR cameras
    test_hr_images: list  # GT HR render per test camera
    factor: int
    extent: float
    background: np.ndarray


# ---------------------------------------------------------------------------
# scene synthesis
# ---------------------------------------------------------------------------

def synth_scene(seed, n_gaussians, extent, sh_degree=1, scale_range=(0.05, 0.18)):
    """Reproducible random scene: anisotropic Gaussians in a bounded volume.

    ``scale_range`` bounds the per-axis scales as fractions of the extent and
    sets how much detail the scene holds below the rendering resolution.
    """
    if n_gaussians < 1:
        raise InvalidInputError("need at least one Gaussian")
    rng = _rng(seed, _S_SCENE)
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n_gaussians, k, 3))
    sh[:, 0, :] = rng.uniform(-0.8, 1.6, (n_gaussians, 3))
    if k > 1:
        sh[:, 1:, :] = rng.normal(0.0, 0.15, (n_gaussians, k - 1, 3))
    return core.GaussianCloud(
        positions=rng.uniform(-0.6 * extent, 0.6 * extent, (n_gaussians, 3)),
        log_scales=np.log(
            rng.uniform(scale_range[0], scale_range[1], (n_gaussians, 3)) * extent
        ),
        rotations=rng.normal(0.0, 1.0, (n_gaussians, 4)),
        opacity_logits=core.encode_opacity(rng.uniform(0.5, 0.95, n_gaussians)),
        sh=sh,
        sh_degree=sh_degree,
    )


def orbit_rig(n_views, width, height, extent, elevation=0.35, phase=0.0):
    """Cameras on a circle of radius 3x extent, looking at the origin."""
    radius = 3.0 * extent
    f = 0.9 * max(width, height)
    cams = []
    for i in range(n_views):
        az = 2.0 * np.pi * i / n_views + phase
        eye = [radius * np.cos(az), elevation * radius, radius * np.sin(az)]
        cams.append(core.look_at_camera(
            eye=eye, target=[0.0, 0.0, 0.0], up=[0.0, -1.0, 0.0],
            fx=f, fy=f, width=width, height=height,
        ))
    return cams


def synth_dataset(cfg):
    """Ground-truth cloud, LR train views (area-downsampled HR renders), and
    held-out test cameras with their GT HR images."""
    gt = synth_scene(
        cfg.seed, cfg.n_gaussians, cfg.scene_extent, cfg.sh_degree,
        scale_range=(cfg.scene_scale_min, cfg.scene_scale_max),
    )
    background = np.full(3, float(cfg.background))
    train_cams = orbit_rig(
        cfg.n_views, cfg.lr_width, cfg.lr_height, cfg.scene_extent
    )
    # test poses sit between training azimuths at a different elevation
    test_cams = orbit_rig(
        cfg.n_test_views, cfg.lr_width, cfg.lr_height, cfg.scene_extent,
        elevation=0.5, phase=np.pi / max(cfg.n_views, 1),
    )
    lr_views, hr_images = [], []
    for cam in train_cams:
        hr = np.clip(
            rasterizer.render(gt, cam.scaled(cfg.sr_factor), background).color,
            0.0, 1.0,
        )
        hr_images.append(hr)
        lr_views.append(View(cam, losses.area_downsample(hr, cfg.sr_factor)))
    test_hr = [
        np.clip(
            rasterizer.render(gt, cam.scaled(cfg.sr_factor), background).color,
            0.0, 1.0,
        )
        for cam in test_cams
    ]
    return Dataset(
        gt_cloud=gt,
        lr_views=lr_views,
        hr_images=hr_images,
        test_cameras=test_cams,
        test_hr_images=test_hr,
        factor=cfg.sr_factor,
        extent=cfg.scene_extent,
        background=background,
    )


# ---------------------------------------------------------------------------
# providers
# ---------------------------------------------------------------------------

class OracleDepthProvider:
    """Depth rendered from the ground-truth cloud (pretrained-net stand-in)."""

    def __init__(self, gt_cloud, background=None):
        self.gt_cloud = gt_cloud
        self.background = background

    def estimate(self, image, camera):
        out = rasterizer.render(self.gt_cloud, camera, self.background)
        valid = out.depth > 0.0
        return out.depth, valid


class NoisyDepthProvider(OracleDepthProvider):
    """Oracle depth under a fixed positive-affine distortion plus noise.

    The depth-correlation loss is affine-invariant, so stage 1 must tolerate
    exactly this family of corruptions.
    """

    def __init__(self, gt_cloud, seed=0, noise=0.02, background=None):
        super().__init__(gt_cloud, background)
        rng = _rng(seed, _S_CORRUPT, 1)
        self.scale = float(rng.uniform(0.5, 2.0))
        self.offset = float(rng.uniform(0.0, 1.0))
        self.noise = noise
        self._rng = rng

    def estimate(self, image, camera):
        depth, valid = super().estimate(image, camera)
        noisy = self.scale * depth + self.offset
        noisy = noisy + self.noise * self._rng.standard_normal(depth.shape)
        return np.where(valid, noisy, 0.0), valid


class OracleSuperResolver:
    """Ground-truth HR render at the upscaled camera (pretrained-SR stand-in)."""

    def __init__(self, gt_cloud, background=None):
        self.gt_cloud = gt_cloud
        self.background = background

    def upscale(self, image, factor, camera):
        out = rasterizer.render(self.gt_cloud, camera.scaled(factor), self.background)
        return np.clip(out.color, 0.0, 1.0)


class BicubicSuperResolver:
    """Classical bicubic upscaling; ignores the camera."""

    def upscale(self, image, factor, camera=None):
        h, w = image.shape[:2]
        out = cv2.resize(
            np.asarray(image, dtype=np.float64),
            (w * factor, h * factor),
            interpolation=cv2.INTER_CUBIC,
        )
        return np.clip(out, 0.0, 1.0)


def make_depth_provider(cfg, gt_cloud, background=None):
    if cfg.depth_provider == "noisy":
        return NoisyDepthProvider(gt_cloud, seed=cfg.seed, background=background)
    return OracleDepthProvider(gt_cloud, background)


def make_resolver(cfg, gt_cloud, background=None):
    if cfg.resolver == "bicubic":
        return BicubicSuperResolver()
    return OracleSuperResolver(gt_cloud, background)


# ---------------------------------------------------------------------------
# shared training pieces
# ---------------------------------------------------------------------------

def init_cloud(rng, cfg):
    """Random training initialization: mid-gray, semi-transparent blobs."""
    n = cfg.init_gaussians
    extent = cfg.scene_extent
    k = (cfg.sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = rng.normal(0.0, 0.3, (n, 3))
    return core.GaussianCloud(
        positions=rng.uniform(-0.7 * extent, 0.7 * extent, (n, 3)),
        log_scales=np.log(rng.uniform(0.08, 0.16, (n, 3)) * extent),
        rotations=rng.normal(0.0, 1.0, (n, 4)),
        opacity_logits=np.full(n, core.encode_opacity(0.1)),
        sh=sh,
        sh_degree=cfg.sh_degree,
    )


def _gauss_state(cfg, gate_enabled, max_steps):
    return robust.default_state(
        extent=cfg.scene_extent,
        max_steps=max(max_steps, 1),
        epsilon_gate=cfg.epsilon_gate,
        gate_enabled=gate_enabled,
        per_component=cfg.per_component_gate,
        sh_degree=cfg.sh_degree,
        lr_position=cfg.lr_position,
        lr_position_final=cfg.lr_position_final,
        lr_sh=cfg.lr_sh,
        lr_opacity=cfg.lr_opacity,
        lr_scale=cfg.lr_scale,
        lr_rotation=cfg.lr_rotation,
    )


def _maybe_densify(cloud, stats, rng, cfg, state, iteration, stop_iteration):
    """Clone/split/prune plus the periodic opacity clamp, on schedule."""
    step = iteration + 1
    if not cfg.adc_enabled or step > stop_iteration:
        return cloud, stats
    if step >= cfg.adc_start and step % cfg.adc_interval == 0:
        cloud, stats = densify.adaptive_density_control(
            cloud, stats, rng, cfg.scene_extent,
            optimizer=state.adam,
            grad_threshold=cfg.adc_grad_threshold,
            percent_dense=cfg.adc_percent_dense,
            prune_opacity=cfg.adc_prune_opacity,
        )
    if cfg.opacity_reset_interval and step % cfg.opacity_reset_interval == 0:
        densify.clamp_opacity(cloud, cfg.reset_opacity)
    return cloud, stats


def _log(metrics, stage, iteration, parts):
    if metrics is not None:
        for term, value in parts.items():
            metrics.append([stage, iteration, term, float(value)])
    if iteration % 100 == 0:
        logger.info("%s iter=%d %s", stage, iteration,
                    " ".join(f"{k}={float(v):.6g}" for k, v in parts.items()))


# ---------------------------------------------------------------------------
# stage 1: low-resolution optimization with depth regularization
# ---------------------------------------------------------------------------

def stage1_train(lr_views, depth_provider, cfg, initialization=None, metrics=None):
    """Fit a cloud to the LR views; photometric + depth-correlation loss."""
    if len(lr_views) < 2:
        raise InvalidInputError("stage 1 needs at least 2 views")
    rng = _rng(cfg.seed, _S_STAGE1)
    cloud = initialization if initialization is not None else init_cloud(
        _rng(cfg.seed, _S_INIT), cfg
    )
    if cfg.stage1_iters == 0:
        return cloud.copy()
    cloud = cloud.with_flags()

    depth_maps = []
    for i, view in enumerate(lr_views):
        try:
            depth, valid = depth_provider.estimate(view.image, view.camera)
        except Exception as exc:
            raise PipelineError(f"depth provider failed on view {i}: {exc}") from exc
        if depth.shape != view.image.shape[:2]:
            raise PipelineError(
                f"depth provider returned {depth.shape} for view {i}, "
                f"expected {view.image.shape[:2]}"
            )
        depth_maps.append((depth, valid))

    state = _gauss_state(cfg, cfg.gate_stage1, cfg.stage1_iters)
    stats = densify.DensifyStats.zeros(cloud.n)
    background = _background(cfg)
    for it in range(cfg.stage1_iters):
        view_idx = it % len(lr_views)
        view = lr_views[view_idx]
        out, ctx = rasterizer.render_with_context(cloud, view.camera, background)
        v_photo, g_color = losses.loss_sr(out.color, view.image, cfg.beta)
        depth, valid = depth_maps[view_idx]
        v_depth, g_depth = losses.pearson_depth(out.depth, depth, valid)
        grads = rasterizer.render_backward(
            cloud, view.camera,
            d_color=g_color,
            d_depth=cfg.depth_weight * g_depth,
            ctx=ctx,
        )
        stats.update(grads)
        robust.robust_step(cloud, grads, state)
        cloud, stats = _maybe_densify(
            cloud, stats, rng, cfg, state, it, cfg.adc_stop_stage1
        )
        _log(metrics, "stage1", it, {
            "photo": v_photo,
            "depth": v_depth,
            "total": v_photo + cfg.depth_weight * v_depth,
            "gaussians": cloud.n,
        })
    return cloud


def _background(cfg):
    return np.full(3, float(cfg.background))


# ---------------------------------------------------------------------------
# pseudo views
# ---------------------------------------------------------------------------

def interpolate_camera(cam_a, cam_b, t):
    """Pose between two cameras: spherical rotation blend, linear translation.

    Intrinsics are copied from the first camera (rig cameras share them).
    """
    return core.Camera(
        fx=cam_a.fx, fy=cam_a.fy, cx=cam_a.cx, cy=cam_a.cy,
        width=cam_a.width, height=cam_a.height,
        rotation=core.slerp(cam_a.rotation, cam_b.rotation, t),
        translation=(1.0 - t) * cam_a.translation + t * cam_b.translation,
    )


def synth_pseudo_views(cameras, count=2):
    """``count`` interpolated cameras per adjacent pair, t evenly in (0, 1)."""
    if len(cameras) < 2:
        raise InvalidInputError("pseudo views need at least 2 source cameras")
    if count < 0:
        raise InvalidInputError("count must be non-negative")
    out = []
    for cam_a, cam_b in zip(cameras[:-1], cameras[1:]):
        for j in range(1, count + 1):
            out.append(interpolate_camera(cam_a, cam_b, j / (count + 1.0)))
    return out


# ---------------------------------------------------------------------------
# corruption harness (robustness experiments)
# ---------------------------------------------------------------------------

def corrupt_views(cfg, n_views):
    """Indices of supervision views to corrupt, fixed by the seed."""
    n_bad = int(round(cfg.corrupt_fraction * n_views))
    if n_bad == 0:
        return np.zeros(0, dtype=int)
    rng = _rng(cfg.seed, _S_CORRUPT)
    return np.sort(rng.choice(n_views, size=min(n_bad, n_views), replace=False))


def corrupt_image(image, rng, noise=0.1, fill=0.0):
    """Random occlusion rectangles plus Gaussian noise, clipped to [0, 1].

    Rectangles are filled with a flat value (default: background black),
    imitating regions where no content was ever reconstructed.  A fill drawn
    fresh from random colors would average out over repeated visits and leave
    nothing for a robustness mechanism to defend against.
    """
    img = np.array(image, dtype=np.float64)
    h, w = img.shape[:2]
    for _ in range(int(rng.integers(3, 7))):
        rh = int(rng.integers(max(h // 4, 1), max(h // 2, 2)))
        rw = int(rng.integers(max(w // 4, 1), max(w // 2, 2)))
        r0 = int(rng.integers(0, h - rh + 1))
        c0 = int(rng.integers(0, w - rw + 1))
        img[r0 : r0 + rh, c0 : c0 + rw] = fill
    img += noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# stage 2: high-resolution optimization with SR supervision
# ---------------------------------------------------------------------------

def _check_sr_output(image, lr_shape, factor, label):
    want = (lr_shape[0] * factor, lr_shape[1] * factor, 3)
    if image.shape != want:
        raise PipelineError(
            f"resolver returned {image.shape} for {label}, expected {want}"
        )


def _pseudo_schedule(iters, fraction):
    """Boolean per iteration: True = supervise from a pseudo view."""
    if fraction <= 0.0:
        return np.zeros(iters, dtype=bool)
    marks = np.floor((np.arange(iters) + 1) * fraction) - np.floor(
        np.arange(iters) * fraction
    )
    return marks > 0


def stage2_train(hr_cloud, lr_views, lr_cloud, resolver, cfg, metrics=None):
    """Refine the split cloud against super-resolved supervision.

    Real views supervise through resolver(LR image); pseudo views through
    resolver(LR render of the frozen stage-1 cloud).  Both pass the learned
    inconsistency head; the render passes a learned per-pixel blur before the
    SR loss.  Gaussians step through the gated optimizer, the 2D heads through
    plain Adam.  Returns the cloud with flag state stripped.
    """
    if len(lr_views) < 2:
        raise InvalidInputError("stage 2 needs at least 2 views")
    cloud = hr_cloud.with_flags()
    if cfg.stage2_iters == 0:
        return robust.strip_flags(cloud)

    factor = cfg.sr_factor
    background = _background(cfg)
    rng = _rng(cfg.seed, _S_STAGE2)
    corrupt_rng = _rng(cfg.seed, _S_CORRUPT, 2)
    bad = set(int(i) for i in corrupt_views(cfg, len(lr_views)))

    # supervision prefetch: real views; corruption is resampled per use below
    real_cams, real_lr, real_sup = [], [], []
    for i, view in enumerate(lr_views):
        sup = resolver.upscale(view.image, factor, view.camera)
        _check_sr_output(sup, view.image.shape[:2], factor, f"view {i}")
        real_cams.append(view.camera)
        real_lr.append(view.image)
        real_sup.append(sup)

    # supervision prefetch: pseudo views from the frozen LR cloud
    pseudo_cams, pseudo_lr, pseudo_sup = [], [], []
    if cfg.pseudo_fraction > 0.0 and cfg.pseudo_per_pair > 0:
        pseudo_cams = synth_pseudo_views(real_cams, cfg.pseudo_per_pair)
        for i, cam in enumerate(pseudo_cams):
            lr_img = np.clip(
                rasterizer.render(lr_cloud, cam, background).color, 0.0, 1.0
            )
            sup = resolver.upscale(lr_img, factor, cam)
            _check_sr_output(sup, lr_img.shape[:2], factor, f"pseudo view {i}")
            pseudo_lr.append(lr_img)
            pseudo_sup.append(sup)

    kernel = cfg.blur_kernel or neural2d.blur_kernel_size(factor)
    net_rng = _rng(cfg.seed, _S_NETS)
    im_params = neural2d.im_init(net_rng)
    bp_params = neural2d.bp_init(net_rng, kernel)
    im_opt = optim.Adam(lr={k: cfg.lr_net for k in im_params})
    bp_opt = optim.Adam(lr={k: cfg.lr_net for k in bp_params})
    state = _gauss_state(cfg, cfg.gate_stage2, cfg.stage2_iters)
    stats = densify.DensifyStats.zeros(cloud.n)

    use_pseudo = _pseudo_schedule(cfg.stage2_iters, cfg.pseudo_fraction)
    if len(pseudo_cams) == 0:
        use_pseudo[:] = False
    real_cursor = pseudo_cursor = 0
    for it in range(cfg.stage2_iters):
        if use_pseudo[it]:
            idx = pseudo_cursor % len(pseudo_cams)
            pseudo_cursor += 1
            cam_lr, lr_img, sup = pseudo_cams[idx], pseudo_lr[idx], pseudo_sup[idx]
        else:
            idx = real_cursor % len(real_cams)
            real_cursor += 1
            cam_lr, lr_img, sup = real_cams[idx], real_lr[idx], real_sup[idx]
            # fresh occlusions and noise each visit: fluctuating, not a
            # consistent wrong image the optimizer could simply fit
            if idx in bad:
                sup = corrupt_image(sup, corrupt_rng, cfg.corrupt_noise,
                                    fill=float(cfg.background))
        cam_hr = cam_lr.scaled(factor)

        sup_im, im_cache = neural2d.im_forward(sup, im_params)
        out, ctx = rasterizer.render_with_context(cloud, cam_hr, background)
        render_hr = out.color
        blur_field, bp_cache = neural2d.bp_forward(render_hr, bp_params)
        render_blur, blur_cache = neural2d.apply_blur(render_hr, blur_field)

        total, parts, lgrads = losses.loss_total_stage2(
            render_hr, render_blur, sup_im, lr_img, factor,
            beta=cfg.beta, tv_weight=cfg.tv_weight,
            subpixel_weight=cfg.subpixel_weight,
        )

        d_from_blur, d_field = neural2d.apply_blur_backward(
            blur_cache, lgrads["render_blur"]
        )
        # the blur field is predicted from a detached render: the image-path
        # gradient from bp_backward is dropped by design
        _, d_bp = neural2d.bp_backward(bp_cache, bp_params, d_field)
        _, d_im = neural2d.im_backward(im_cache, im_params, lgrads["supervision"])
        d_render = lgrads["render"] + d_from_blur

        grads = rasterizer.render_backward(cloud, cam_hr, d_color=d_render, ctx=ctx)
        stats.update(grads)
        robust.robust_step(cloud, grads, state)
        im_opt.step(im_params, d_im)
        bp_opt.step(bp_params, d_bp)
        cloud, stats = _maybe_densify(
            cloud, stats, rng, cfg, state, it, cfg.adc_stop_stage2
        )
        parts = dict(parts)
        parts["gaussians"] = cloud.n
        _log(metrics, "stage2", it, parts)
    return robust.strip_flags(cloud)


# ---------------------------------------------------------------------------
# plain HR baseline (comparison arm for the end-to-end experiment)
# ---------------------------------------------------------------------------

def train_plain_hr(lr_views, cfg, iters, metrics=None, adc_stop=None):
    """Single-stage HR training against bicubic-upsampled LR views.

    Equal-budget comparison arm: no depth term, no split handoff, no learned
    heads, no gating.  ``adc_stop`` bounds density control (default: the whole
    run); stopping before the end leaves a refinement tail, which measures
    notably stronger on longer budgets.
    """
    if len(lr_views) < 2:
        raise InvalidInputError("training needs at least 2 views")
    factor = cfg.sr_factor
    background = _background(cfg)
    resolver = BicubicSuperResolver()
    targets = [
        resolver.upscale(view.image, factor) for view in lr_views
    ]
    cams = [view.camera.scaled(factor) for view in lr_views]
    stop = iters if adc_stop is None else adc_stop

    rng = _rng(cfg.seed, _S_BASELINE)
    cloud = init_cloud(_rng(cfg.seed, _S_INIT), cfg).with_flags()
    state = _gauss_state(cfg, False, iters)
    stats = densify.DensifyStats.zeros(cloud.n)
    for it in range(iters):
        idx = it % len(cams)
        out, ctx = rasterizer.render_with_context(cloud, cams[idx], background)
        v_photo, g_color = losses.loss_sr(out.color, targets[idx], cfg.beta)
        grads = rasterizer.render_backward(cloud, cams[idx], d_color=g_color, ctx=ctx)
        stats.update(grads)
        robust.robust_step(cloud, grads, state)
        cloud, stats = _maybe_densify(cloud, stats, rng, cfg, state, it, stop)
        _log(metrics, "plain_hr", it, {"photo": v_photo, "gaussians": cloud.n})
    return robust.strip_flags(cloud)


# ---------------------------------------------------------------------------
# comparative experiments
# ---------------------------------------------------------------------------

def experiment_config(seed=0):
    """Small-scene config for the comparative experiments below."""
    return TrainConfig(
        seed=seed, n_gaussians=20, init_gaussians=40,
        n_views=8, n_test_views=3,
        lr_height=40, lr_width=48, sr_factor=2,
        stage1_iters=600, stage2_iters=400,
        adc_start=200, adc_interval=100,
        adc_stop_stage1=400, adc_stop_stage2=200,
        opacity_reset_interval=0,
    )


def _mean_test_psnr(cloud, data, factor):
    rows = evaluate(cloud, data.test_cameras, data.test_hr_images,
                    data.background, factor=factor)
    return float(np.mean([p for p, _ in rows]))


def _stage2_from_scratch(data, cfg):
    depth = make_depth_provider(cfg, data.gt_cloud, data.background)
    lr_cloud = stage1_train(data.lr_views, depth, cfg)
    hr0 = densify.shuffle_split(
        lr_cloud, alpha_shift=cfg.alpha_shift, lam=cfg.split_lambda,
        opacity_threshold=cfg.split_opacity_threshold,
        reset_opacity=cfg.reset_opacity,
    )
    return lr_cloud, hr0


def run_gate_ablation(seeds=(0, 1, 2, 3, 4), base_cfg=None):
    """Corrupted-supervision ablation: stage 2 with the gate on vs off.

    A quarter of the real views lose random regions to background-filled
    occlusions with noise on every visit.  Pseudo views are disabled so the
    corrupted fraction of supervision events matches the corrupted fraction
    of views, and gating compares per component.  Returns per-seed rows
    (seed, gated PSNR, plain PSNR) on held-out views.
    """
    import dataclasses

    rows = []
    for seed in seeds:
        cfg = dataclasses.replace(
            base_cfg if base_cfg is not None else experiment_config(),
            seed=seed,
            corrupt_fraction=0.25, corrupt_noise=0.2,
            pseudo_fraction=0.0, per_component_gate=True,
        )
        data = synth_dataset(cfg)
        lr_cloud, hr0 = _stage2_from_scratch(data, cfg)
        resolver = make_resolver(cfg, data.gt_cloud, data.background)
        scores = {}
        for gated in (True, False):
            c2 = dataclasses.replace(cfg, gate_stage2=gated)
            final = stage2_train(hr0, data.lr_views, lr_cloud, resolver, c2)
            scores[gated] = _mean_test_psnr(final, data, cfg.sr_factor)
        rows.append((seed, scores[True], scores[False]))
        logger.info("gate ablation seed=%d gated=%.3f plain=%.3f",
                    seed, scores[True], scores[False])
    return rows


def run_sr_comparison(seeds=(0, 1, 2), base_cfg=None):
    """Two-stage pipeline vs plain HR training on bicubic-upscaled inputs.

    Both arms spend the same iteration budget.  Returns per-seed rows
    (seed, pipeline PSNR, baseline PSNR) on held-out views.
    """
    import dataclasses

    rows = []
    for seed in seeds:
        cfg = dataclasses.replace(
            base_cfg if base_cfg is not None else experiment_config(), seed=seed
        )
        data = synth_dataset(cfg)
        lr_cloud, hr0 = _stage2_from_scratch(data, cfg)
        resolver = make_resolver(cfg, data.gt_cloud, data.background)
        final = stage2_train(hr0, data.lr_views, lr_cloud, resolver, cfg)
        p_pipe = _mean_test_psnr(final, data, cfg.sr_factor)
        baseline = train_plain_hr(
            data.lr_views, cfg, cfg.stage1_iters + cfg.stage2_iters
        )
        p_base = _mean_test_psnr(baseline, data, cfg.sr_factor)
        rows.append((seed, p_pipe, p_base))
        logger.info("sr comparison seed=%d pipeline=%.3f baseline=%.3f",
                    seed, p_pipe, p_base)
    return rows


# ---------------------------------------------------------------------------
# evaluation and the full run
# ---------------------------------------------------------------------------

def evaluate(cloud, cameras, gt_images, background=None, factor=1):
    """Per-view (PSNR, SSIM) of renders against ground truth."""
    rows = []
    for cam, gt in zip(cameras, gt_images):
        cam_r = cam.scaled(factor) if factor != 1 else cam
        render = np.clip(rasterizer.render(cloud, cam_r, background).color, 0.0, 1.0)
        rows.append((sceneio.psnr(render, gt), float(sceneio.ssim(render, gt))))
    return rows


def _stage(tag, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(f"[{tag}] {exc}") from exc


def run_full(cfg, outdir):
    """synth -> stage1 -> split -> stage2 -> exports; returns the manifest."""
    from pathlib import Path

    validate(cfg)
    out = Path(outdir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "renders").mkdir(exist_ok=True)
    (out / "config.snapshot").write_text(serialize(cfg), encoding="utf-8")

    metrics = []
    data = _stage("synth", synth_dataset, cfg)
    sceneio.save_cameras(out / "cameras.txt", [v.camera for v in data.lr_views])

    depth = make_depth_provider(cfg, data.gt_cloud, data.background)
    lr_cloud = _stage("stage1", stage1_train, data.lr_views, depth, cfg,
                      metrics=metrics)
    sceneio.save_checkpoint(out / "checkpoints" / "stage1.npz", lr_cloud)

    hr_cloud = _stage(
        "split", densify.shuffle_split, lr_cloud,
        alpha_shift=cfg.alpha_shift, lam=cfg.split_lambda,
        opacity_threshold=cfg.split_opacity_threshold,
        reset_opacity=cfg.reset_opacity,
    )
    sceneio.save_checkpoint(out / "checkpoints" / "split.npz", hr_cloud)

    resolver = make_resolver(cfg, data.gt_cloud, data.background)
    final = _stage("stage2", stage2_train, hr_cloud, data.lr_views, lr_cloud,
                   resolver, cfg, metrics=metrics)
    sceneio.save_checkpoint(out / "checkpoints" / "final.npz", final)
    sceneio.export_ply(final, out / "scene.ply")

    test_rows = evaluate(final, data.test_cameras, data.test_hr_images,
                         data.background, factor=cfg.sr_factor)
    for i, (p, s) in enumerate(test_rows):
        metrics.append(["eval", i, "psnr", float(p)])
        metrics.append(["eval", i, "ssim", float(s)])
        render = np.clip(
            rasterizer.render(
                final, data.test_cameras[i].scaled(cfg.sr_factor), data.background
            ).color,
            0.0, 1.0,
        )
        sceneio.write_image(out / "renders" / f"test_{i:02d}.png", render)
    sceneio.write_metrics(
        out / "metrics.csv", ["stage", "iteration", "term", "value"], metrics
    )
    return {
        "config": out / "config.snapshot",
        "metrics": out / "metrics.csv",
        "scene": out / "scene.ply",
        "checkpoints": sorted((out / "checkpoints").iterdir()),
        "renders": sorted((out / "renders").iterdir()),
        "test_psnr": [p for p, _ in test_rows],
        "test_ssim": [s for _, s in test_rows],
    }
