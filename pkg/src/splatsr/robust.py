"""Gradient gating by per-attribute trend vectors, layered over Adam.

Each Gaussian carries a flag vector partitioned like its parameter vector
(position, scale, rotation, opacity, color).  Incoming gradients whose cosine
against the matching flag slice is positive pass through and average into the
flag; direction-conflicting gradients are attenuated by epsilon and nudge the
flag by an exponential moving average.  The gate runs on the raw (encoded)
gradient before Adam accumulates moments, so conflicting supervision neither
moves parameters far nor pollutes moment history.
"""

from dataclasses import dataclass

import numpy as np

from . import core, optim
from .errors import InvalidInputError

DEFAULT_EPSILON = 0.1
ZERO_NORM = 1e-12

# Default per-attribute learning rates (position rate is additionally scaled
# by scene extent and decayed; see default_state).
LR_POSITION = 1.6e-4
LR_POSITION_FINAL = 1.6e-6
LR_SH = 2.5e-3
LR_SH_REST_DIV = 20.0
LR_OPACITY = 0.05
LR_SCALE = 5e-3
LR_ROTATION = 1e-3


def gate_gradient(g_current, flag, epsilon=DEFAULT_EPSILON):
    """Gate one attribute-group gradient against its trend vector.

    Aligned (cosine > 0, or either vector numerically zero): gradient passes
    unchanged and the flag becomes the average (flag + g)/2.  Misaligned:
    gradient is scaled by epsilon and the flag moves to
    (1 - epsilon)*flag + epsilon*g.  Returns (g_out, flag_out).
    """
    g = np.asarray(g_current, dtype=np.float64)
    f = np.asarray(flag, dtype=np.float64)
    if g.shape != f.shape:
        raise InvalidInputError(
            f"gradient and flag lengths differ: {g.shape} vs {f.shape}"
        )
    gn = np.linalg.norm(g)
    fn = np.linalg.norm(f)
    aligned = gn < ZERO_NORM or fn < ZERO_NORM or float(np.dot(g, f)) > 0.0
    if aligned:
        return g.copy(), 0.5 * (f + g)
    return epsilon * g, (1.0 - epsilon) * f + epsilon * g


def _gate_rows(g, f, epsilon, per_component):
    """Vectorized gate over rows; returns (g_out, f_out)."""
    if per_component:
        aligned = (g * f > 0.0) | (np.abs(g) < ZERO_NORM) | (np.abs(f) < ZERO_NORM)
    else:
        dot = np.sum(g * f, axis=1)
        gn = np.linalg.norm(g, axis=1)
        fn = np.linalg.norm(f, axis=1)
        aligned = ((dot > 0.0) | (gn < ZERO_NORM) | (fn < ZERO_NORM))[:, None]
    g_out = np.where(aligned, g, epsilon * g)
    f_out = np.where(aligned, 0.5 * (f + g), (1.0 - epsilon) * f + epsilon * g)
    return g_out, f_out


@dataclass
class OptimizerState:
    """Adam moments plus the gate configuration for one training stage."""

    adam: optim.Adam
    epsilon_gate: float = DEFAULT_EPSILON
    gate_enabled: bool = True
    per_component: bool = False

    def __post_init__(self):
        if not 0.0 < self.epsilon_gate <= 1.0:
            raise InvalidInputError("epsilon_gate must lie in (0, 1]")


def default_state(
    extent,
    max_steps,
    epsilon_gate=DEFAULT_EPSILON,
    gate_enabled=True,
    per_component=False,
    sh_degree=1,
    lr_position=LR_POSITION,
    lr_position_final=LR_POSITION_FINAL,
    lr_sh=LR_SH,
    lr_opacity=LR_OPACITY,
    lr_scale=LR_SCALE,
    lr_rotation=LR_ROTATION,
):
    """Standard splatting rates: decayed position rate, reduced high bands."""
    k = (sh_degree + 1) ** 2
    sh_rate = np.full((1, k, 3), lr_sh / LR_SH_REST_DIV)
    sh_rate[0, 0, :] = lr_sh
    adam = optim.Adam(
        lr={
            "positions": optim.exponential_schedule(
                lr_position * extent, lr_position_final * extent, max_steps
            ),
            "log_scales": lr_scale,
            "rotations": lr_rotation,
            "opacity_logits": lr_opacity,
            "sh": sh_rate,
        }
    )
    return OptimizerState(
        adam=adam,
        epsilon_gate=epsilon_gate,
        gate_enabled=gate_enabled,
        per_component=per_component,
    )


def encoded_gradients(cloud, grads):
    """Chain decoded-space render gradients to the stored encodings."""
    scales = cloud.scales
    sig = cloud.opacities
    return {
        "positions": np.asarray(grads.positions, dtype=np.float64),
        "log_scales": np.asarray(grads.scales, dtype=np.float64) * scales,
        "rotations": np.asarray(grads.rotations, dtype=np.float64),
        "opacity_logits": np.asarray(grads.opacities, dtype=np.float64)
        * sig * (1.0 - sig),
        "sh": np.asarray(grads.sh, dtype=np.float64),
    }


def _flatten(enc, n, k_c):
    flat = np.empty((n, 11 + k_c))
    flat[:, 0:3] = enc["positions"]
    flat[:, 3:6] = enc["log_scales"]
    flat[:, 6:10] = enc["rotations"]
    flat[:, 10] = enc["opacity_logits"]
    flat[:, 11:] = enc["sh"].reshape(n, k_c)
    return flat


def _unflatten(flat, k):
    return {
        "positions": flat[:, 0:3],
        "log_scales": flat[:, 3:6],
        "rotations": flat[:, 6:10],
        "opacity_logits": flat[:, 10],
        "sh": flat[:, 11:].reshape(-1, k, 3),
    }


def robust_step(cloud, grads, state):
    """One gated optimization step, in place on the cloud.

    Gradients arrive in decoded space (as produced by the renderer), are
    chained to the encoded parameters, gated per attribute group against the
    cloud's flags, and fed to Adam.  Flags are created on first use and
    written back gated; with the gate disabled this is a plain Adam step and
    flags are left untouched.
    """
    enc = encoded_gradients(cloud, grads)
    if state.gate_enabled:
        if cloud.flags is None:
            cloud.flags = np.zeros((cloud.n, core.flag_dim(cloud.sh_degree)))
        flat = _flatten(enc, cloud.n, cloud.k_color)
        gated = np.empty_like(flat)
        new_flags = np.empty_like(cloud.flags)
        for sl in core.attribute_slices(cloud.sh_degree).values():
            g_out, f_out = _gate_rows(
                flat[:, sl], cloud.flags[:, sl], state.epsilon_gate,
                state.per_component,
            )
            gated[:, sl] = g_out
            new_flags[:, sl] = f_out
        cloud.flags = new_flags
        enc = _unflatten(gated, cloud.k_coeff)

    params = {
        "positions": cloud.positions,
        "log_scales": cloud.log_scales,
        "rotations": cloud.rotations,
        "opacity_logits": cloud.opacity_logits,
        "sh": cloud.sh,
    }
    state.adam.step(params, enc)
    return cloud


def strip_flags(cloud):
    """Drop flag state before export; rendering is unaffected."""
    return cloud.without_flags()
