"""Command-line interface: scene synthesis, staged training, rendering,
evaluation, and the comparative experiments.

Exit codes: 0 on success, 1 on a validation error (bad flags, bad config,
missing inputs), 2 on a runtime failure inside a stage.
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import core, densify, pipeline, rasterizer, sceneio
from .errors import InvalidInputError, ParseError, PipelineError

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Usage mistakes are validation errors (exit 1), not argparse's exit 2."""

    def error(self, message):
        raise InvalidInputError(message)


def _config_epilog():
    lines = ["config keys (settable in a config file or with --set):"]
    for name, kind, default, rng, help_text in config_mod.describe_keys():
        lines.append(f"  {name:<24} {kind:<6} default={default!r:<12} "
                     f"range: {rng:<8} {help_text}")
    return "\n".join(lines)


def build_parser():
    parser = _Parser(
        prog="splatsr",
        description="Sparse-view super-resolution Gaussian splatting trainer.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None,
                       help="config file path, or 'default' for the shipped "
                            "reference config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable; wins over "
                            "the config file)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="cap internal parallelism; 1 is bitwise "
                            "reproducible")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--verbose", action="store_true",
                       help="log per-iteration training terms")

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-lr", help="stage 1: fit the low-resolution cloud")
    common(p)
    p.set_defaults(func=cmd_train_lr)

    p = sub.add_parser("split", help="six-way split of the stage-1 checkpoint")
    common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-hr",
                       help="stage 2: refine the split cloud at high resolution")
    common(p)
    p.set_defaults(func=cmd_train_hr)

    p = sub.add_parser("run", help="full pipeline: synth, both stages, exports")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("render", help="rasterize a stored cloud at given cameras")
    p.add_argument("--cloud", required=True, help=".ply or .npz cloud file")
    p.add_argument("--cameras", required=True, help="cameras text file")
    p.add_argument("--out", required=True, help="output directory for PNGs")
    p.add_argument("--factor", type=int, default=1,
                   help="scale camera resolution by this factor")
    p.add_argument("--background", type=float, default=0.0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM of paired render and truth images")
    p.add_argument("--renders", required=True, help="directory of rendered PNGs")
    p.add_argument("--gt", required=True, help="directory of reference PNGs")
    p.add_argument("--csv", action="store_true", help="emit CSV instead of a table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a named comparative scenario")
    p.add_argument("name", choices=["split-equivalence", "robust-gate-ablation",
                                    "end-to-end"])
    p.add_argument("--seeds", default=None,
                   help="comma-separated seed list (defaults per scenario)")
    common(p)
    p.set_defaults(func=cmd_experiment)
    return parser


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _resolve_config(args, default_cfg=None):
    if args.config is None:
        cfg = default_cfg if default_cfg is not None else config_mod.TrainConfig()
    elif args.config == "default":
        from importlib.resources import files

        text = files("splatsr").joinpath("reference.config").read_text("utf-8")
        cfg = config_mod.parse_config(text)
    else:
        cfg = config_mod.load_config(args.config)
    if args.set:
        cfg = config_mod.parse_config("\n".join(args.set), base=cfg)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.threads is not None:
        cfg = dataclasses.replace(cfg, threads=args.threads)
    config_mod.validate(cfg)
    _apply_threads(cfg.threads)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    return cfg


def _apply_threads(n):
    try:
        import warnings

        import numba

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cloud(path):
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"cloud file not found: {path}")
    if path.suffix == ".ply":
        return sceneio.import_ply(path)
    cloud, _ = sceneio.load_checkpoint(path)
    return cloud


def _checkpoint(out, name):
    path = out / "checkpoints" / name
    if not path.exists():
        raise InvalidInputError(
            f"missing checkpoint {path}; run the previous stage first")
    cloud, _ = sceneio.load_checkpoint(path)
    return cloud


def _train_psnr(cloud, views, background):
    return float(np.mean([
        sceneio.psnr(
            np.clip(rasterizer.render(cloud, v.camera, background).color, 0, 1),
            v.image)
        for v in views]))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    cfg = _resolve_config(args)
    out = _outdir(args)
    data = pipeline.synth_dataset(cfg)
    (out / "config.snapshot").write_text(config_mod.serialize(cfg), "utf-8")
    sceneio.export_ply(data.gt_cloud, out / "gt.ply")
    sceneio.save_cameras(out / "cameras.txt", [v.camera for v in data.lr_views])
    sceneio.save_cameras(out / "test_cameras.txt", data.test_cameras)
    for sub in ("hr", "lr", "depth"):
        (out / sub).mkdir(exist_ok=True)
    depths = [
        rasterizer.render(data.gt_cloud, v.camera, data.background).depth
        for v in data.lr_views
    ]
    depth_scale = max(float(d.max()) for d in depths) or 1.0
    (out / "depth" / "scale.txt").write_text(repr(depth_scale) + "\n", "utf-8")
    for i, view in enumerate(data.lr_views):
        sceneio.write_image(out / "hr" / f"view_{i:02d}.png", data.hr_images[i])
        sceneio.write_image(out / "lr" / f"view_{i:02d}.png", view.image)
        sceneio.write_image(out / "depth" / f"view_{i:02d}.png",
                            depths[i] / depth_scale)
    print(f"dataset: {cfg.n_views} views at {cfg.lr_width}x{cfg.lr_height} "
          f"(HR x{cfg.sr_factor}), {data.gt_cloud.n} Gaussians -> {out}")


def cmd_train_lr(args):
    cfg = _resolve_config(args)
    out = _outdir(args)
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "config.snapshot").write_text(config_mod.serialize(cfg), "utf-8")
    data = pipeline.synth_dataset(cfg)
    provider = pipeline.make_depth_provider(cfg, data.gt_cloud, data.background)
    metrics = []
    cloud = pipeline.stage1_train(data.lr_views, provider, cfg, metrics=metrics)
    sceneio.save_checkpoint(out / "checkpoints" / "stage1.npz", cloud)
    sceneio.write_metrics(out / "metrics_stage1.csv",
                          ["stage", "iteration", "term", "value"], metrics)
    psnr = _train_psnr(cloud, data.lr_views, data.background)
    print(f"stage 1: {cloud.n} Gaussians, train PSNR {psnr:.3f} dB -> "
          f"{out / 'checkpoints' / 'stage1.npz'}")


def cmd_split(args):
    cfg = _resolve_config(args)
    out = _outdir(args)
    cloud = _checkpoint(out, "stage1.npz")
    split = densify.shuffle_split(
        cloud, alpha_shift=cfg.alpha_shift, lam=cfg.split_lambda,
        opacity_threshold=cfg.split_opacity_threshold,
        reset_opacity=cfg.reset_opacity)
    sceneio.save_checkpoint(out / "checkpoints" / "split.npz", split)
    print(f"split: {cloud.n} -> {split.n} Gaussians -> "
          f"{out / 'checkpoints' / 'split.npz'}")


def cmd_train_hr(args):
    cfg = _resolve_config(args)
    out = _outdir(args)
    hr_cloud = _checkpoint(out, "split.npz")
    lr_cloud = _checkpoint(out, "stage1.npz")
    data = pipeline.synth_dataset(cfg)
    resolver = pipeline.make_resolver(cfg, data.gt_cloud, data.background)
    metrics = []
    final = pipeline.stage2_train(hr_cloud, data.lr_views, lr_cloud, resolver,
                                  cfg, metrics=metrics)
    sceneio.save_checkpoint(out / "checkpoints" / "final.npz", final)
    sceneio.export_ply(final, out / "scene.ply")
    sceneio.write_metrics(out / "metrics_stage2.csv",
                          ["stage", "iteration", "term", "value"], metrics)
    rows = pipeline.evaluate(final, data.test_cameras, data.test_hr_images,
                             data.background, factor=cfg.sr_factor)
    mean_psnr = float(np.mean([p for p, _ in rows]))
    print(f"stage 2: {final.n} Gaussians, held-out PSNR {mean_psnr:.3f} dB -> "
          f"{out / 'scene.ply'}")


def cmd_run(args):
    cfg = _resolve_config(args)
    manifest = pipeline.run_full(cfg, args.out)
    mean_psnr = float(np.mean(manifest["test_psnr"]))
    print(f"run complete: held-out PSNR {mean_psnr:.3f} dB")
    for key in ("config", "metrics", "scene"):
        print(f"  {key}: {manifest[key]}")
    print(f"  checkpoints: {len(manifest['checkpoints'])}, "
          f"renders: {len(manifest['renders'])}")


def cmd_render(args):
    cloud = _load_cloud(args.cloud)
    cameras_path = Path(args.cameras)
    if not cameras_path.exists():
        raise InvalidInputError(f"cameras file not found: {cameras_path}")
    cameras = sceneio.load_cameras(cameras_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    background = np.full(3, args.background)
    for i, cam in enumerate(cameras):
        if args.factor != 1:
            cam = cam.scaled(args.factor)
        image = np.clip(rasterizer.render(cloud, cam, background).color, 0, 1)
        sceneio.write_image(out / f"render_{i:02d}.png", image)
    print(f"rendered {len(cameras)} views -> {out}")


def cmd_eval(args):
    renders_dir, gt_dir = Path(args.renders), Path(args.gt)
    for d in (renders_dir, gt_dir):
        if not d.is_dir():
            raise InvalidInputError(f"not a directory: {d}")
    renders = sorted(renders_dir.glob("*.png"))
    truths = sorted(gt_dir.glob("*.png"))
    if len(renders) == 0:
        raise InvalidInputError(f"no .png files in {renders_dir}")
    if len(renders) != len(truths):
        raise InvalidInputError(
            f"{len(renders)} renders vs {len(truths)} reference images")
    rows = []
    for render_path, gt_path in zip(renders, truths):
        a = sceneio.read_image(render_path)
        b = sceneio.read_image(gt_path)
        rows.append((render_path.name, sceneio.psnr(a, b),
                     float(sceneio.ssim(a, b))))
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    if args.csv:
        print("name,psnr,ssim")
        for name, p, s in rows:
            print(f"{name},{p:.6f},{s:.6f}")
        print(f"mean,{mean_psnr:.6f},{mean_ssim:.6f}")
    else:
        width = max(len(r[0]) for r in rows + [("mean", 0, 0)])
        print(f"{'name':<{width}}  {'psnr':>10}  {'ssim':>8}")
        for name, p, s in rows:
            print(f"{name:<{width}}  {p:>10.3f}  {s:>8.4f}")
        print(f"{'mean':<{width}}  {mean_psnr:>10.3f}  {mean_ssim:>8.4f}")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _split_equivalence_report(cfg):
    parent = core.Gaussian(
        position=np.zeros(3),
        scale=np.array([0.3, 0.3, 0.3]),
        rotation=np.array([1.0, 0.0, 0.0, 0.0]),
        opacity=0.9,
        sh=np.array([[1.0, 0.5, 0.25]]),
    )
    cameras = pipeline.orbit_rig(cfg.n_views, cfg.lr_width, cfg.lr_height, 1.0)
    scores = {
        lam: densify.render_equivalence_score(
            parent, densify.split_children(parent, cfg.alpha_shift, lam), cameras)
        for lam in (cfg.split_lambda, 10.0, 1e6)
    }
    lines = ["split-equivalence: six-way split vs parent, mean PSNR over "
             f"{len(cameras)} orbit views"]
    for lam, score in scores.items():
        lines.append(f"  lambda={lam:<8g} psnr={score:.3f} dB")
    ordered = list(scores.values())
    verdict = "PASS" if ordered[0] > ordered[1] > ordered[2] else "FAIL"
    lines.append(f"verdict: shape-preserving lambda renders closest to the "
                 f"parent [{verdict}]")
    return "\n".join(lines)


def _ablation_report(seeds, cfg):
    rows = pipeline.run_gate_ablation(seeds, base_cfg=cfg)
    lines = ["robust-gate-ablation: stage-2 with 25% corrupted supervision"]
    for seed, gated, plain in rows:
        lines.append(f"  seed={seed} gate-on={gated:.3f} dB "
                     f"gate-off={plain:.3f} dB delta={gated - plain:+.3f}")
    mean_delta = float(np.mean([g - p for _, g, p in rows]))
    verdict = "PASS" if mean_delta > 0 else "FAIL"
    lines.append(f"verdict: gate-on mean PSNR >= gate-off "
                 f"(mean delta {mean_delta:+.3f} dB) [{verdict}]")
    return "\n".join(lines)


def _end_to_end_report(seeds, cfg):
    rows = pipeline.run_sr_comparison(seeds, base_cfg=cfg)
    lines = ["end-to-end: two-stage pipeline vs equal-budget plain HR training"]
    for seed, pipe, base in rows:
        lines.append(f"  seed={seed} pipeline={pipe:.3f} dB "
                     f"baseline={base:.3f} dB delta={pipe - base:+.3f}")
    mean_delta = float(np.mean([p - b for _, p, b in rows]))
    verdict = "PASS" if mean_delta > 0 else "FAIL"
    lines.append(f"verdict: pipeline beats the baseline "
                 f"(mean delta {mean_delta:+.3f} dB) [{verdict}]")
    return "\n".join(lines)


def cmd_experiment(args):
    cfg = _resolve_config(args, default_cfg=pipeline.experiment_config())
    out = _outdir(args)
    if args.seeds is not None:
        try:
            seeds = tuple(int(s) for s in args.seeds.split(","))
        except ValueError:
            raise InvalidInputError(f"bad --seeds list: {args.seeds!r}")
    elif args.name == "end-to-end":
        seeds = (0, 1, 2)
    else:
        seeds = (0, 1, 2, 3, 4)

    if args.name == "split-equivalence":
        report = _split_equivalence_report(cfg)
    elif args.name == "robust-gate-ablation":
        report = _ablation_report(seeds, cfg)
    else:
        report = _end_to_end_report(seeds, cfg)
    path = out / f"{args.name}.txt"
    path.write_text(report + "\n", "utf-8")
    print(report)
    print(f"report -> {path}")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except (InvalidInputError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2
    except Exception as exc:  # surface anything else as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
