"""Shared builders and the central-difference oracle used across test modules."""

import numpy as np
from scipy.special import expit, logit

from splatsr import core


def random_cloud(rng, n, sh_degree=1, extent=0.5, scale_lo=0.05, scale_hi=0.25):
    k = (sh_degree + 1) ** 2
    return core.GaussianCloud(
        positions=rng.normal(0.0, extent, (n, 3)),
        log_scales=np.log(rng.uniform(scale_lo, scale_hi, (n, 3))),
        rotations=rng.normal(0.0, 1.0, (n, 4)),
        opacity_logits=rng.normal(0.0, 1.0, n),
        sh=rng.normal(0.0, 0.3, (n, k, 3)),
        sh_degree=sh_degree,
    )


def front_camera(width=48, height=40, fx=60.0, fy=60.0, distance=3.0):
    return core.look_at_camera(
        eye=[0.0, 0.0, -distance], target=[0.0, 0.0, 0.0], up=[0.0, -1.0, 0.0],
        fx=fx, fy=fy, width=width, height=height,
    )


def orbit_cameras(n=8, radius=3.0, width=48, height=40, fx=60.0, fy=60.0,
                  elevation=0.35):
    """Cameras on a circle around the origin, all looking at the center."""
    cams = []
    for k in range(n):
        az = 2.0 * np.pi * k / n
        eye = [radius * np.cos(az), elevation * radius, radius * np.sin(az)]
        cams.append(core.look_at_camera(
            eye=eye, target=[0.0, 0.0, 0.0], up=[0.0, -1.0, 0.0],
            fx=fx, fy=fy, width=width, height=height,
        ))
    return cams


def cloud_params(cloud):
    """Decoded parameter dict for finite-difference perturbation."""
    return {
        "positions": cloud.positions.copy(),
        "scales": cloud.scales.copy(),
        "rotations": cloud.rotations.copy(),
        "opacities": cloud.opacities.copy(),
        "sh": cloud.sh.copy(),
    }


def cloud_from_params(params, sh_degree):
    return core.GaussianCloud(
        positions=params["positions"].copy(),
        log_scales=np.log(params["scales"]),
        rotations=params["rotations"].copy(),
        opacity_logits=logit(params["opacities"]),
        sh=params["sh"].copy(),
        sh_degree=sh_degree,
    )


def central_difference(loss_fn, params, name, index, step=1e-4):
    """d loss / d params[name][index] by central differences."""
    plus = {k: v.copy() for k, v in params.items()}
    minus = {k: v.copy() for k, v in params.items()}
    plus[name][index] += step
    minus[name][index] -= step
    return (loss_fn(plus) - loss_fn(minus)) / (2.0 * step)


def gradient_check(loss_fn, params, analytic, rng, rel_tol=1e-3,
                   samples_per_group=None, step=1e-4, floor=1e-6):
    """Compare analytic gradients against central differences.

    Components where both sides fall below ``floor`` are skipped (relative
    error is meaningless there).  Returns the worst relative error seen.
    """
    worst = 0.0
    for name, grad in analytic.items():
        indices = list(np.ndindex(grad.shape))
        if samples_per_group is not None and len(indices) > samples_per_group:
            chosen = rng.choice(len(indices), size=samples_per_group, replace=False)
            indices = [indices[i] for i in chosen]
        for idx in indices:
            num = central_difference(loss_fn, params, name, idx, step)
            ana = grad[idx]
            if abs(num) < floor and abs(ana) < floor:
                continue
            rel = abs(num - ana) / max(abs(num), abs(ana))
            assert rel < rel_tol, (
                f"{name}{idx}: numeric {num:.8g} vs analytic {ana:.8g} (rel {rel:.3g})"
            )
            worst = max(worst, rel)
    return worst


def array_gradient_check(loss_fn, arrays, analytic, rng, rel_tol=1e-3,
                         samples_per_array=None, step=1e-4, floor=1e-6):
    """Same oracle for plain dicts of arrays (network weights, images)."""
    worst = 0.0
    for name, grad in analytic.items():
        base = arrays[name]
        indices = list(np.ndindex(base.shape))
        if samples_per_array is not None and len(indices) > samples_per_array:
            chosen = rng.choice(len(indices), size=samples_per_array, replace=False)
            indices = [indices[i] for i in chosen]
        for idx in indices:
            plus = {k: v.copy() for k, v in arrays.items()}
            minus = {k: v.copy() for k, v in arrays.items()}
            plus[name][idx] += step
            minus[name][idx] -= step
            num = (loss_fn(plus) - loss_fn(minus)) / (2.0 * step)
            ana = grad[idx]
            if abs(num) < floor and abs(ana) < floor:
                continue
            rel = abs(num - ana) / max(abs(num), abs(ana))
            assert rel < rel_tol, (
                f"{name}{idx}: numeric {num:.8g} vs analytic {ana:.8g} (rel {rel:.3g})"
            )
            worst = max(worst, rel)
    return worst
