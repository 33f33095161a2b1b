import struct

import numpy as np
import pytest

from splatsr import config, core, sceneio
from splatsr.errors import InvalidInputError, ParseError

import helpers


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("degree", [0, 1, 2])
def test_ply_round_trip(tmp_path, degree):
    rng = np.random.default_rng(31 + degree)
    cloud = helpers.random_cloud(rng, 17, sh_degree=degree)
    path = tmp_path / "cloud.ply"
    sceneio.export_ply(cloud, path)
    back = sceneio.import_ply(path)
    assert back.sh_degree == degree
    assert back.n == cloud.n
    for name in ("positions", "log_scales", "rotations", "opacity_logits", "sh"):
        delta = np.max(np.abs(getattr(cloud, name) - getattr(back, name)))
        assert delta < 1e-6, f"{name} drifted {delta}"


def test_ply_empty_cloud(tmp_path):
    path = tmp_path / "empty.ply"
    sceneio.export_ply(core.GaussianCloud.empty(sh_degree=1), path)
    back = sceneio.import_ply(path)
    assert back.n == 0
    assert back.sh_degree == 1


def test_ply_export_ignores_flags(tmp_path):
    rng = np.random.default_rng(7)
    cloud = helpers.random_cloud(rng, 6, sh_degree=1)
    flagged = cloud.with_flags(rng.standard_normal((6, core.flag_dim(1))))
    a, b = tmp_path / "a.ply", tmp_path / "b.ply"
    sceneio.export_ply(cloud, a)
    sceneio.export_ply(flagged, b)
    assert a.read_bytes() == b.read_bytes()
    assert b"flag" not in a.read_bytes()


def _fixture_values():
    # one degree-1 Gaussian with hand-chosen float32-exact field values
    position = [0.5, -0.25, 2.0]
    dc = [0.5, 0.25, -0.125]
    # channel-major on disk: 3 coefficients of channel 0, then 1, then 2
    rest_disk = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09]
    logit = -1.5
    log_scale = [-2.0, -2.5, -3.0]
    quat = [1.0, 0.0, 0.0, 0.0]
    return position, dc, rest_disk, logit, log_scale, quat


def test_ply_hand_written_fixture(tmp_path):
    position, dc, rest_disk, logit, log_scale, quat = _fixture_values()
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(9)]
    names += ["opacity", "scale_0", "scale_1", "scale_2"]
    names += ["rot_0", "rot_1", "rot_2", "rot_3"]
    header = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
    header += b"".join(f"property float {n}\n".encode() for n in names)
    header += b"end_header\n"
    payload = struct.pack(
        "<26f", *position, 0, 0, 0, *dc, *rest_disk, logit, *log_scale, *quat
    )
    path = tmp_path / "fixture.ply"
    path.write_bytes(header + payload)

    cloud = sceneio.import_ply(path)
    assert cloud.n == 1 and cloud.sh_degree == 1
    f32 = lambda x: np.asarray(x, dtype=np.float32).astype(np.float64)
    np.testing.assert_array_equal(cloud.positions[0], f32(position))
    np.testing.assert_array_equal(cloud.sh[0, 0], f32(dc))
    expected_rest = f32(rest_disk).reshape(3, 3).T  # (coeff, channel)
    np.testing.assert_array_equal(cloud.sh[0, 1:], expected_rest)
    assert cloud.opacity_logits[0] == f32(logit)
    np.testing.assert_array_equal(cloud.log_scales[0], f32(log_scale))
    np.testing.assert_array_equal(cloud.rotations[0], f32(quat))


def _valid_ply_bytes(n=3, degree=1, seed=5):
    import io
    import tempfile

    rng = np.random.default_rng(seed)
    cloud = helpers.random_cloud(rng, n, sh_degree=degree)
    with tempfile.NamedTemporaryFile(suffix=".ply") as fh:
        sceneio.export_ply(cloud, fh.name)
        fh.seek(0)
        return fh.read()


@pytest.mark.parametrize(
    "mutate, offset_check",
    [
        (lambda d: b"plx" + d[3:], 0),  # bad magic
        (lambda d: d.replace(b"binary_little_endian", b"binary_big_endian___"), None),
        (lambda d: d.replace(b"element vertex 3", b"element vertex 9"), None),  # short
        (lambda d: d[:-5], None),  # truncated payload
        (lambda d: d + b"\x00" * 4, None),  # trailing bytes
        (lambda d: d.replace(b"property float opacity", b"property float opac1ty"), None),
        (lambda d: d.replace(b"property float nx\n", b""), None),  # missing field
        (lambda d: d.replace(b"property float x", b"property uchar x"), None),
        (lambda d: d.replace(b"end_header\n", b"end_headex\n"), None),
    ],
)
def test_ply_malformed_inputs(tmp_path, mutate, offset_check):
    data = _valid_ply_bytes()
    path = tmp_path / "bad.ply"
    path.write_bytes(mutate(data))
    with pytest.raises(ParseError) as err:
        sceneio.import_ply(path)
    assert err.value.offset is not None
    if offset_check is not None:
        assert err.value.offset == offset_check


def test_ply_unknown_property_offset_points_at_line(tmp_path):
    data = _valid_ply_bytes()
    needle = b"property float opacity"
    data = data.replace(needle, b"property float opulent")
    path = tmp_path / "bad.ply"
    path.write_bytes(data)
    with pytest.raises(ParseError) as err:
        sceneio.import_ply(path)
    assert "opulent" in str(err.value)
    assert err.value.offset == data.find(b"property float opulent")


def test_ply_fuzz_never_panics(tmp_path):
    """Random corruptions either parse or raise ParseError, nothing else."""
    base = _valid_ply_bytes(n=4)
    rng = np.random.default_rng(99)
    path = tmp_path / "fuzz.ply"
    for trial in range(250):
        data = bytearray(base)
        for _ in range(rng.integers(1, 6)):
            data[rng.integers(0, len(data))] = rng.integers(0, 256)
        path.write_bytes(bytes(data))
        try:
            sceneio.import_ply(path)
        except ParseError:
            pass
    for trial in range(100):
        blob = rng.integers(0, 256, size=rng.integers(0, 400), dtype=np.uint8)
        path.write_bytes(blob.tobytes())
        try:
            sceneio.import_ply(path)
        except ParseError:
            pass


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_with_flags(tmp_path):
    rng = np.random.default_rng(11)
    cloud = helpers.random_cloud(rng, 5, sh_degree=1).with_flags(
        rng.standard_normal((5, core.flag_dim(1)))
    )
    path = tmp_path / "ckpt.npz"
    sceneio.save_checkpoint(path, cloud, extras={"step": np.array(42)})
    back, extras = sceneio.load_checkpoint(path)
    np.testing.assert_array_equal(back.flags, cloud.flags)
    np.testing.assert_array_equal(back.positions, cloud.positions)
    assert int(extras["step"]) == 42


def test_checkpoint_smaller_after_strip(tmp_path):
    rng = np.random.default_rng(12)
    cloud = helpers.random_cloud(rng, 40, sh_degree=1).with_flags()
    cloud.flags += 1.0
    with_path = tmp_path / "with.npz"
    without_path = tmp_path / "without.npz"
    sceneio.save_checkpoint(with_path, cloud)
    sceneio.save_checkpoint(without_path, cloud.without_flags())
    assert without_path.stat().st_size < with_path.stat().st_size
    back, _ = sceneio.load_checkpoint(without_path)
    assert back.flags is None


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_psnr_identities():
    rng = np.random.default_rng(3)
    a = rng.random((9, 7, 3))
    assert sceneio.psnr(a, a) == 99.0
    assert sceneio.psnr(a, np.clip(a, 0, 1)) == pytest.approx(99.0)
    shifted = sceneio.psnr(np.full((5, 5), 0.3), np.full((5, 5), 0.4))
    assert abs(shifted - 20.0) < 1e-9


def test_psnr_matches_direct_formula():
    rng = np.random.default_rng(4)
    a, b = rng.random((6, 8, 3)), rng.random((6, 8, 3))
    expected = 10 * np.log10(1.0 / np.mean((a - b) ** 2))
    assert sceneio.psnr(a, b) == pytest.approx(expected, rel=1e-12)


def test_psnr_shape_mismatch():
    with pytest.raises(InvalidInputError):
        sceneio.psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_reexported():
    a = np.linspace(0, 1, 64).reshape(8, 8)
    assert sceneio.ssim(a, a) == pytest.approx(1.0)


def test_metrics_csv_bitwise_deterministic(tmp_path):
    header = ["iteration", "stage", "psnr"]
    rows = [[0, "lr", 12.345678901234567], [1, "lr", float(np.pi)]]
    p1, p2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
    sceneio.write_metrics(p1, header, rows)
    sceneio.write_metrics(p2, header, [list(r) for r in rows])
    assert p1.read_bytes() == p2.read_bytes()
    text = p1.read_text()
    # repr round-trips float64 exactly
    assert repr(float(np.pi)) in text


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def test_image_round_trip_16bit(tmp_path):
    rng = np.random.default_rng(21)
    image = rng.random((13, 9, 3))
    path = tmp_path / "img16.png"
    sceneio.write_image(path, image, bits=16)
    back = sceneio.read_image(path)
    assert back.shape == image.shape
    assert np.max(np.abs(back - image)) <= 0.5 / 65535 + 1e-12


def test_image_round_trip_8bit(tmp_path):
    rng = np.random.default_rng(22)
    image = rng.random((6, 11, 3))
    path = tmp_path / "img8.png"
    sceneio.write_image(path, image, bits=8)
    back = sceneio.read_image(path)
    assert np.max(np.abs(back - image)) <= 0.5 / 255 + 1e-12


def test_image_grayscale_and_clipping(tmp_path):
    image = np.array([[1.7, -0.3], [0.25, 0.75]])
    path = tmp_path / "gray.png"
    sceneio.write_image(path, image, bits=16)
    back = sceneio.read_image(path)
    assert back.shape == (2, 2)
    expected = np.clip(image, 0, 1)
    assert np.max(np.abs(back - expected)) <= 0.5 / 65535 + 1e-12


def test_image_channel_order_is_rgb(tmp_path):
    image = np.zeros((2, 2, 3))
    image[:, :, 0] = 1.0  # pure red
    path = tmp_path / "red.png"
    sceneio.write_image(path, image, bits=8)
    back = sceneio.read_image(path)
    np.testing.assert_array_equal(back[0, 0], [1.0, 0.0, 0.0])


def test_image_srgb_round_trip(tmp_path):
    rng = np.random.default_rng(23)
    image = rng.random((8, 8, 3))
    path = tmp_path / "srgb.png"
    sceneio.write_image(path, image, bits=16, srgb=True)
    back = sceneio.read_image(path, srgb=True)
    assert np.max(np.abs(back - image)) < 1e-3
    linear = sceneio.read_image(path)
    assert np.mean(linear) > np.mean(image)  # gamma encoding brightens


def test_image_rejects_bad_shapes(tmp_path):
    with pytest.raises(InvalidInputError):
        sceneio.write_image(tmp_path / "x.png", np.zeros((4, 4, 2)))
    with pytest.raises(InvalidInputError):
        sceneio.write_image(tmp_path / "x.png", np.zeros((4, 4)), bits=12)
    with pytest.raises(ParseError):
        sceneio.read_image(tmp_path / "missing.png")


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------

def test_cameras_round_trip(tmp_path):
    cams = [
        helpers.front_camera(),
        core.Camera(
            fx=55.5,
            fy=44.25,
            cx=16.0,
            cy=12.0,
            width=32,
            height=24,
            rotation=np.array([0.5, 0.5, 0.5, 0.5]),
            translation=np.array([0.125, -0.25, 3.0]),
        ),
    ]
    path = tmp_path / "cams.txt"
    sceneio.save_cameras(path, cams)
    back = sceneio.load_cameras(path)
    assert len(back) == len(cams)
    for a, b in zip(cams, back):
        assert (a.fx, a.fy, a.cx, a.cy, a.width, a.height) == (
            b.fx, b.fy, b.cx, b.cy, b.width, b.height,
        )
        np.testing.assert_array_equal(a.rotation, b.rotation)
        np.testing.assert_array_equal(a.translation, b.translation)


def test_cameras_parse_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# cameras v1\ncamera 1 2 3\n")
    with pytest.raises(ParseError) as err:
        sceneio.load_cameras(path)
    assert err.value.offset == len("# cameras v1\n")

    path.write_text("camera a b c d 4 4 1 0 0 0 0 0 1\n")
    with pytest.raises(ParseError):
        sceneio.load_cameras(path)

    # fx <= 0 violates the camera's own invariant
    path.write_text("camera -5 5 2 2 4 4 1 0 0 0 0 0 1\n")
    with pytest.raises(ParseError):
        sceneio.load_cameras(path)


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_config_empty_text_gives_defaults():
    cfg = config.parse_config("")
    assert cfg == config.TrainConfig()
    assert cfg.sr_factor == 4
    assert cfg.split_lambda == 1.9
    assert cfg.epsilon_gate == 0.1


def test_config_round_trip(tmp_path):
    cfg = config.TrainConfig()
    cfg.sr_factor = 2
    cfg.gate_stage1 = True
    cfg.lr_position = 3e-4
    cfg.depth_provider = "noisy"
    path = tmp_path / "run.cfg"
    config.save_config(cfg, path)
    assert config.load_config(path) == cfg


def test_config_parsing_details():
    cfg = config.parse_config(
        "# comment line\n"
        "sr_factor = 2   # trailing comment\n"
        "gate_stage2=off\n"
        "\n"
        "beta = 0.5\n"
    )
    assert cfg.sr_factor == 2
    assert cfg.gate_stage2 is False
    assert cfg.beta == 0.5


def test_config_unknown_keys_listed():
    with pytest.raises(InvalidInputError) as err:
        config.parse_config("sr_factor = 2\nbogus_key = 1\nzz_other = 3\n")
    assert "bogus_key" in str(err.value)
    assert "zz_other" in str(err.value)


def test_config_range_error_names_key_and_range():
    with pytest.raises(InvalidInputError) as err:
        config.parse_config("beta = 1.5\n")
    message = str(err.value)
    assert "beta" in message and "0..1" in message


def test_config_type_error_has_offset():
    text = "seed = 1\nsr_factor = banana\n"
    with pytest.raises(ParseError) as err:
        config.parse_config(text)
    assert err.value.offset == text.index("sr_factor")


def test_config_bad_syntax():
    with pytest.raises(ParseError):
        config.parse_config("just some words\n")


def test_config_blur_kernel_must_be_odd_or_zero():
    with pytest.raises(InvalidInputError):
        config.parse_config("blur_kernel = 4\n")
    assert config.parse_config("blur_kernel = 5\n").blur_kernel == 5


def test_config_scene_scale_bounds_ordered():
    with pytest.raises(InvalidInputError) as err:
        config.parse_config("scene_scale_min = 0.2\nscene_scale_max = 0.1\n")
    assert "scene_scale_min" in str(err.value)
    cfg = config.parse_config("scene_scale_min = 0.02\nscene_scale_max = 0.08\n")
    assert cfg.scene_scale_max == 0.08
