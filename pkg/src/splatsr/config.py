"""Flat key=value training configuration with a documented key table.

Every tunable lives in KEYS: type, default, valid range, help line.  The same
table drives file parsing, validation, CLI flag generation, and the config
snapshot written into run artifacts, so documentation cannot drift from code.
"""

from dataclasses import dataclass, field, fields, make_dataclass

from .errors import InvalidInputError, ParseError


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _unit_open(x):
    return 0.0 < x < 1.0


def _unit_closed(x):
    return 0.0 <= x <= 1.0


# name -> (type, default, range predicate, range text, help)
KEYS = {
    "seed": (int, 0, _nonneg, ">= 0", "master random seed threaded through all stages"),
    "threads": (int, 1, _positive, ">= 1", "internal parallelism cap; 1 is bitwise reproducible"),
    "sr_factor": (int, 4, lambda x: x >= 1, ">= 1", "super-resolution factor between LR and HR"),
    "sh_degree": (int, 1, lambda x: 0 <= x <= 2, "0..2", "spherical-harmonic degree of all clouds"),
    "n_gaussians": (int, 50, _positive, ">= 1", "ground-truth Gaussian count of the synthetic scene"),
    "init_gaussians": (int, 60, _positive, ">= 1", "Gaussian count of the random training initialization"),
    "scene_extent": (float, 1.0, _positive, "> 0", "half-width of the synthetic scene's position range"),
    "scene_scale_min": (float, 0.05, _positive, "> 0", "smallest Gaussian scale of the synthetic scene (times extent)"),
    "scene_scale_max": (float, 0.18, _positive, "> 0", "largest Gaussian scale of the synthetic scene (times extent)"),
    "n_views": (int, 8, lambda x: x >= 2, ">= 2", "training cameras on the orbit rig"),
    "n_test_views": (int, 4, _nonneg, ">= 0", "held-out cameras for evaluation"),
    "lr_height": (int, 64, _positive, ">= 1", "low-resolution image height"),
    "lr_width": (int, 64, _positive, ">= 1", "low-resolution image width"),
    "background": (float, 0.0, _unit_closed, "0..1", "gray level composited behind the scene"),
    "stage1_iters": (int, 10000, _nonneg, ">= 0", "low-resolution optimization iterations"),
    "stage2_iters": (int, 10000, _nonneg, ">= 0", "high-resolution optimization iterations"),
    "alpha_shift": (float, 0.5, _positive, "> 0", "child offset as a fraction of the parent axis scale"),
    "split_lambda": (float, 1.9, _positive, "> 0", "scale shrink of the non-offset axes in the six-way split"),
    "split_opacity_threshold": (float, 0.5, _unit_open, "(0, 1)", "decoded opacity above which a Gaussian is split six ways"),
    "reset_opacity": (float, 0.01, _unit_open, "(0, 1)", "opacity assigned to every primitive after the six-way split"),
    "epsilon_gate": (float, 0.1, lambda x: 0 < x <= 1, "(0, 1]", "attenuation factor for direction-conflicting gradients"),
    "beta": (float, 0.2, _unit_closed, "0..1", "structural-dissimilarity weight in the photometric loss"),
    "blur_kernel": (int, 0, lambda x: x == 0 or (x >= 1 and x % 2 == 1), "0 or odd >= 1", "per-pixel blur kernel width; 0 derives it from sr_factor"),
    "depth_weight": (float, 0.05, _nonneg, ">= 0", "weight of the depth-correlation term in stage 1"),
    "tv_weight": (float, 1.0, _nonneg, ">= 0", "weight of the total-variation term in stage 2"),
    "subpixel_weight": (float, 1.0, _nonneg, ">= 0", "weight of the downsample-consistency term in stage 2"),
    "gate_stage1": (bool, False, None, "bool", "apply the flag-gradient gate during stage 1"),
    "gate_stage2": (bool, True, None, "bool", "apply the flag-gradient gate during stage 2"),
    "per_component_gate": (bool, False, None, "bool", "gate each flag component separately instead of per attribute group"),
    "lr_position": (float, 1.6e-4, _positive, "> 0", "initial position learning rate (scaled by scene extent)"),
    "lr_position_final": (float, 1.6e-6, _positive, "> 0", "final position learning rate (scaled by scene extent)"),
    "lr_sh": (float, 2.5e-3, _positive, "> 0", "learning rate of the base color band; higher bands use 1/20th"),
    "lr_opacity": (float, 0.05, _positive, "> 0", "opacity logit learning rate"),
    "lr_scale": (float, 5e-3, _positive, "> 0", "log-scale learning rate"),
    "lr_rotation": (float, 1e-3, _positive, "> 0", "quaternion learning rate"),
    "lr_net": (float, 1e-3, _positive, "> 0", "Adam learning rate of the 2D heads"),
    "adc_enabled": (bool, True, None, "bool", "run clone/split/prune density control"),
    "adc_grad_threshold": (float, 2e-4, _positive, "> 0", "mean positional-gradient norm that triggers densification"),
    "adc_percent_dense": (float, 0.01, _positive, "> 0", "scale cutoff (fraction of extent) separating clone from split"),
    "adc_prune_opacity": (float, 0.005, _unit_open, "(0, 1)", "decoded opacity below which primitives are pruned"),
    "adc_interval": (int, 100, _positive, ">= 1", "iterations between density-control rounds"),
    "adc_start": (int, 50, _nonneg, ">= 0", "first iteration eligible for density control"),
    "adc_stop_stage1": (int, 8000, _nonneg, ">= 0", "stage-1 iteration after which density control stops"),
    "adc_stop_stage2": (int, 5000, _nonneg, ">= 0", "stage-2 iteration after which density control stops"),
    "opacity_reset_interval": (int, 3000, _nonneg, ">= 0", "iterations between opacity clamps; 0 disables"),
    "pseudo_per_pair": (int, 2, _nonneg, ">= 0", "interpolated cameras between each adjacent view pair"),
    "pseudo_fraction": (float, 0.5, lambda x: 0 <= x < 1, "[0, 1)", "fraction of stage-2 iterations supervised from pseudo views"),
    "depth_provider": (str, "oracle", lambda s: s in ("oracle", "noisy"), "oracle|noisy", "depth source for stage 1"),
    "resolver": (str, "oracle", lambda s: s in ("oracle", "bicubic"), "oracle|bicubic", "super-resolution source for stage 2"),
    "corrupt_fraction": (float, 0.0, _unit_closed, "0..1", "fraction of supervision views receiving occlusions and noise"),
    "corrupt_noise": (float, 0.1, _nonneg, ">= 0", "noise standard deviation on corrupted views"),
}

_FIELDS = [(name, KEYS[name][0], field(default=KEYS[name][1])) for name in KEYS]
TrainConfig = make_dataclass("TrainConfig", _FIELDS)
TrainConfig.__doc__ = "Training configuration; one attribute per KEYS entry."


def validate(cfg):
    for name, (typ, _, pred, rng_text, _) in KEYS.items():
        value = getattr(cfg, name)
        if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
            raise InvalidInputError(
                f"config key '{name}' must be {typ.__name__}, got {value!r}"
            )
        if pred is not None and not pred(value):
            raise InvalidInputError(
                f"config key '{name}' = {value!r} outside valid range {rng_text}"
            )
    if cfg.scene_scale_min > cfg.scene_scale_max:
        raise InvalidInputError(
            "config key 'scene_scale_min' exceeds 'scene_scale_max' "
            f"({cfg.scene_scale_min!r} > {cfg.scene_scale_max!r})"
        )
    return cfg


def _parse_value(name, text, offset):
    typ = KEYS[name][0]
    text = text.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except ValueError:
        raise ParseError(
            f"config key '{name}': cannot parse {text!r} as {typ.__name__}",
            offset=offset,
        ) from None


def parse_config(text, base=None):
    """Parse key=value lines; '#' starts a comment. Unknown keys error."""
    cfg = TrainConfig() if base is None else base
    unknown = []
    offset = 0
    for line in text.splitlines(keepends=True):
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            if "=" not in stripped:
                raise ParseError(
                    f"expected 'key = value', got {stripped!r}", offset=offset
                )
            key, value = stripped.split("=", 1)
            key = key.strip()
            if key not in KEYS:
                unknown.append(key)
            else:
                setattr(cfg, key, _parse_value(key, value, offset))
        offset += len(line)
    if unknown:
        raise InvalidInputError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return validate(cfg)


def load_config(path, base=None):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def serialize(cfg):
    """Deterministic key=value text covering every key, in table order."""
    lines = [f"{name} = {getattr(cfg, name)}" for name in KEYS]
    return "\n".join(lines) + "\n"


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(cfg))


def describe_keys():
    """(name, type, default, range, help) rows for CLI documentation."""
    return [
        (name, typ.__name__, default, rng_text, help_text)
        for name, (typ, default, _, rng_text, help_text) in KEYS.items()
    ]
