"""Command-line interface: exit codes, artifacts, help text, experiments."""

import numpy as np
import pytest

from splatsr import cli, sceneio
from splatsr.config import KEYS

TINY = [
    "--set", "n_views=4", "--set", "n_test_views=2",
    "--set", "lr_height=24", "--set", "lr_width=28",
    "--set", "sr_factor=2", "--set", "n_gaussians=12",
    "--set", "init_gaussians=16",
    "--set", "stage1_iters=60", "--set", "stage2_iters=16",
    "--set", "adc_enabled=false", "--set", "opacity_reset_interval=0",
]


def test_help_documents_every_config_key(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for name in KEYS:
        assert name in out
    for command in ("synth", "train-lr", "split", "train-hr", "run",
                    "render", "eval", "experiment"):
        assert command in out


def test_unknown_config_key_exits_1(capsys):
    assert cli.main(["synth", "--out", "ignored", "--set", "bogus=1"]) == 1
    assert "bogus" in capsys.readouterr().err


def test_out_of_range_value_exits_1(capsys):
    assert cli.main(["synth", "--out", "ignored", "--set", "beta=7"]) == 1
    err = capsys.readouterr().err
    assert "beta" in err and "0..1" in err


def test_unknown_command_exits_1(capsys):
    assert cli.main(["frobnicate"]) == 1
    assert capsys.readouterr().err


def test_synth_writes_dataset(tmp_path):
    out = tmp_path / "ds"
    assert cli.main(["synth", "--out", str(out)] + TINY) == 0
    for name in ("config.snapshot", "gt.ply", "cameras.txt",
                 "test_cameras.txt", "depth/scale.txt"):
        assert (out / name).exists()
    assert len(list((out / "lr").glob("*.png"))) == 4
    assert len(list((out / "hr").glob("*.png"))) == 4
    lr = sceneio.read_image(out / "lr" / "view_00.png")
    hr = sceneio.read_image(out / "hr" / "view_00.png")
    assert lr.shape == (24, 28, 3)
    assert hr.shape == (48, 56, 3)


def test_staged_chain_matches_run_layout(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["train-lr", "--out", str(out)] + TINY) == 0
    assert (out / "checkpoints" / "stage1.npz").exists()
    assert cli.main(["split", "--out", str(out)] + TINY) == 0
    assert (out / "checkpoints" / "split.npz").exists()
    assert cli.main(["train-hr", "--out", str(out)] + TINY) == 0
    assert (out / "checkpoints" / "final.npz").exists()
    assert (out / "scene.ply").exists()
    assert (out / "metrics_stage1.csv").exists()
    assert (out / "metrics_stage2.csv").exists()
    assert "held-out PSNR" in capsys.readouterr().out


def test_split_without_checkpoint_exits_1(tmp_path, capsys):
    assert cli.main(["split", "--out", str(tmp_path / "empty")] + TINY) == 1
    assert "stage1.npz" in capsys.readouterr().err


def test_run_with_reference_config_and_overrides(tmp_path):
    out = tmp_path / "full"
    assert cli.main(["run", "--config", "default", "--out", str(out)] + TINY) == 0
    for name in ("config.snapshot", "metrics.csv", "scene.ply",
                 "cameras.txt", "checkpoints/final.npz"):
        assert (out / name).exists()
    # overrides win over the shipped file
    snapshot = (out / "config.snapshot").read_text()
    assert "lr_height = 24" in snapshot
    assert len(list((out / "renders").glob("*.png"))) == 2


def test_render_and_eval_identity(tmp_path, capsys):
    ds = tmp_path / "ds"
    cli.main(["synth", "--out", str(ds)] + TINY)
    renders = tmp_path / "r"
    assert cli.main(["render", "--cloud", str(ds / "gt.ply"),
                     "--cameras", str(ds / "cameras.txt"),
                     "--out", str(renders)]) == 0
    capsys.readouterr()
    assert cli.main(["eval", "--renders", str(renders),
                     "--gt", str(renders)]) == 0
    out = capsys.readouterr().out
    assert out.count("99.000") >= 5  # four views and the mean row
    assert cli.main(["eval", "--renders", str(renders),
                     "--gt", str(renders), "--csv"]) == 0
    csv_out = capsys.readouterr().out
    assert csv_out.splitlines()[0] == "name,psnr,ssim"
    assert csv_out.splitlines()[-1].startswith("mean,99.000000,")


def test_render_at_factor_scales_output(tmp_path):
    ds = tmp_path / "ds"
    cli.main(["synth", "--out", str(ds)] + TINY)
    renders = tmp_path / "r2"
    assert cli.main(["render", "--cloud", str(ds / "gt.ply"),
                     "--cameras", str(ds / "test_cameras.txt"),
                     "--out", str(renders), "--factor", "2"]) == 0
    img = sceneio.read_image(renders / "render_00.png")
    assert img.shape == (48, 56, 3)


def test_eval_count_mismatch_exits_1(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    sceneio.write_image(a / "x.png", np.zeros((4, 4, 3)))
    sceneio.write_image(b / "x.png", np.zeros((4, 4, 3)))
    sceneio.write_image(b / "y.png", np.zeros((4, 4, 3)))
    assert cli.main(["eval", "--renders", str(a), "--gt", str(b)]) == 1
    assert "1 renders vs 2" in capsys.readouterr().err


def test_experiment_split_equivalence_report(tmp_path, capsys):
    out = tmp_path / "exp"
    assert cli.main(["experiment", "split-equivalence",
                     "--out", str(out)]) == 0
    report = (out / "split-equivalence.txt").read_text()
    assert "lambda=1.9" in report
    assert "[PASS]" in report
    assert "PASS" in capsys.readouterr().out


def test_experiment_ablation_smoke(tmp_path):
    out = tmp_path / "exp"
    assert cli.main(["experiment", "robust-gate-ablation", "--out", str(out),
                     "--seeds", "0"] + TINY) == 0
    report = (out / "robust-gate-ablation.txt").read_text()
    assert "seed=0" in report and "delta" in report


def test_experiment_bad_seed_list_exits_1(tmp_path, capsys):
    assert cli.main(["experiment", "end-to-end", "--out", str(tmp_path),
                     "--seeds", "a,b"]) == 1
    assert "--seeds" in capsys.readouterr().err


def test_seed_flag_threads_through(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    cli.main(["synth", "--out", str(out_a), "--seed", "9"] + TINY)
    cli.main(["synth", "--out", str(out_b), "--seed", "9"] + TINY)
    assert (out_a / "gt.ply").read_bytes() == (out_b / "gt.ply").read_bytes()
    out_c = tmp_path / "c"
    cli.main(["synth", "--out", str(out_c), "--seed", "10"] + TINY)
    assert (out_a / "gt.ply").read_bytes() != (out_c / "gt.ply").read_bytes()


def test_config_file_with_flag_override(tmp_path):
    path = tmp_path / "my.config"
    path.write_text("lr_height = 24\nlr_width = 28\nn_views = 4\n"
                    "n_gaussians = 12\nsr_factor = 2\n")
    out = tmp_path / "ds"
    assert cli.main(["synth", "--config", str(path), "--out", str(out),
                     "--set", "lr_height=32"]) == 0
    img = sceneio.read_image(out / "lr" / "view_00.png")
    assert img.shape == (32, 28, 3)


def test_threads_flag_accepted(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path / "ds"),
                     "--threads", "1"] + TINY) == 0
