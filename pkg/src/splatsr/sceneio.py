"""File formats and metrics: Gaussian PLY, PNG images, camera rigs, metrics.

The PLY layout matches the de-facto splatting interchange convention
(positions, zero normals, DC and higher color coefficients, raw opacity
logit, log scales, unnormalized quaternion), all float32 little-endian, so
exported scenes load in third-party viewers.  Parsers reject malformed input
with byte offsets instead of guessing.
"""

import csv
import io

import cv2
import numpy as np

from . import core
from .config import load_config, parse_config, save_config, serialize  # noqa: F401
from .errors import InvalidInputError, ParseError
from .losses import ssim  # noqa: F401

PLY_MAGIC = b"ply\n"
PLY_FORMAT = b"format binary_little_endian 1.0\n"

# Degrees recoverable from an f_rest count: 3*((deg+1)^2 - 1) -> deg.
_REST_TO_DEGREE = {0: 0, 9: 1, 24: 2}


def _property_names(sh_degree):
    k = (sh_degree + 1) ** 2
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * (k - 1))]
    names += ["opacity", "scale_0", "scale_1", "scale_2"]
    names += ["rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def export_ply(cloud, path):
    """Write the cloud as binary little-endian PLY; flags are never written."""
    names = _property_names(cloud.sh_degree)
    header = PLY_MAGIC + PLY_FORMAT
    header += f"element vertex {cloud.n}\n".encode("ascii")
    header += b"".join(f"property float {n}\n".encode("ascii") for n in names)
    header += b"end_header\n"

    table = np.zeros((cloud.n, len(names)), dtype=np.float32)
    table[:, 0:3] = cloud.positions
    # columns 3:6 stay zero (normals, unused by the renderer)
    table[:, 6:9] = cloud.sh[:, 0, :]
    n_rest = 3 * (cloud.k_coeff - 1)
    if n_rest:
        # channel-major: all coefficients of channel 0, then 1, then 2
        table[:, 9 : 9 + n_rest] = (
            cloud.sh[:, 1:, :].transpose(0, 2, 1).reshape(cloud.n, n_rest)
        )
    base = 9 + n_rest
    table[:, base] = cloud.opacity_logits
    table[:, base + 1 : base + 4] = cloud.log_scales
    table[:, base + 4 : base + 8] = cloud.rotations

    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(table.tobytes())


def _read_header(data):
    """Parse the ASCII header; returns (vertex_count, property_names, body_offset)."""
    if not data.startswith(PLY_MAGIC):
        raise ParseError("not a PLY file: missing 'ply' magic", offset=0)
    end = data.find(b"end_header\n")
    if end < 0:
        raise ParseError("missing 'end_header' line", offset=len(data))
    body_offset = end + len(b"end_header\n")

    count = None
    names = []
    offset = len(PLY_MAGIC)
    saw_format = False
    for raw in data[len(PLY_MAGIC) : end].split(b"\n"):
        line_offset = offset
        offset += len(raw) + 1
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError("non-ASCII bytes in header", offset=line_offset) from None
        if not line or line.startswith("comment"):
            continue
        parts = line.split()
        if parts[0] == "format":
            if raw + b"\n" != PLY_FORMAT:
                raise ParseError(
                    f"unsupported format {line!r}; expected binary_little_endian 1.0",
                    offset=line_offset,
                )
            saw_format = True
        elif parts[0] == "element":
            if count is not None or len(parts) != 3 or parts[1] != "vertex":
                raise ParseError(
                    f"expected a single 'element vertex N', got {line!r}",
                    offset=line_offset,
                )
            try:
                count = int(parts[2])
            except ValueError:
                raise ParseError(
                    f"bad vertex count {parts[2]!r}", offset=line_offset
                ) from None
            if count < 0:
                raise ParseError(f"negative vertex count {count}", offset=line_offset)
        elif parts[0] == "property":
            if len(parts) != 3 or parts[1] != "float":
                raise ParseError(
                    f"only 'property float <name>' supported, got {line!r}",
                    offset=line_offset,
                )
            if count is None:
                raise ParseError(
                    "property before any element declaration", offset=line_offset
                )
            names.append((parts[2], line_offset))
        else:
            raise ParseError(f"unknown header line {line!r}", offset=line_offset)
    if not saw_format:
        raise ParseError("missing format declaration", offset=len(PLY_MAGIC))
    if count is None:
        raise ParseError("missing 'element vertex' declaration", offset=len(PLY_MAGIC))
    return count, names, body_offset


def import_ply(path):
    """Read a cloud written by :func:`export_ply` (or any conforming file)."""
    with open(path, "rb") as fh:
        data = fh.read()
    count, named, body_offset = _read_header(data)

    got = [n for n, _ in named]
    n_rest = sum(1 for n in got if n.startswith("f_rest_"))
    degree = _REST_TO_DEGREE.get(n_rest)
    if degree is None:
        raise ParseError(
            f"{n_rest} f_rest properties do not correspond to a degree 0..2 layout",
            offset=named[0][1] if named else body_offset,
        )
    expected = _property_names(degree)
    for (name, line_offset), want in zip(named, expected):
        if name != want:
            raise ParseError(
                f"unknown or misplaced property {name!r}; expected {want!r}",
                offset=line_offset,
            )
    if len(got) != len(expected):
        missing = expected[len(got)]
        raise ParseError(f"missing property {missing!r}", offset=body_offset)

    need = count * len(expected) * 4
    body = data[body_offset:]
    if len(body) < need:
        raise ParseError(
            f"truncated payload: need {need} bytes for {count} vertices, "
            f"found {len(body)}",
            offset=body_offset + len(body),
        )
    if len(body) > need:
        raise ParseError(
            f"{len(body) - need} trailing bytes after vertex data",
            offset=body_offset + need,
        )
    table = (
        np.frombuffer(body, dtype="<f4", count=count * len(expected))
        .reshape(count, len(expected))
        .astype(np.float64)
    )

    k = (degree + 1) ** 2
    sh = np.zeros((count, k, 3))
    sh[:, 0, :] = table[:, 6:9]
    if k > 1:
        sh[:, 1:, :] = table[:, 9 : 9 + 3 * (k - 1)].reshape(count, 3, k - 1).transpose(
            0, 2, 1
        )
    base = 9 + 3 * (k - 1)
    return core.GaussianCloud(
        positions=table[:, 0:3].copy(),
        log_scales=table[:, base + 1 : base + 4].copy(),
        rotations=table[:, base + 4 : base + 8].copy(),
        opacity_logits=table[:, base].copy(),
        sh=sh,
        sh_degree=degree,
    )


# ---------------------------------------------------------------------------
# Checkpoints (training state; may carry flags, unlike PLY exports)
# ---------------------------------------------------------------------------

def save_checkpoint(path, cloud, extras=None):
    """npz snapshot of a cloud plus optional named arrays (optimizer state...)."""
    arrays = {
        "positions": cloud.positions,
        "log_scales": cloud.log_scales,
        "rotations": cloud.rotations,
        "opacity_logits": cloud.opacity_logits,
        "sh": cloud.sh,
        "sh_degree": np.array(cloud.sh_degree),
    }
    if cloud.flags is not None:
        arrays["flags"] = cloud.flags
    for key, value in (extras or {}).items():
        arrays["extra_" + key] = np.asarray(value)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns (cloud, extras); flags restored when present in the file."""
    with np.load(path) as data:
        cloud = core.GaussianCloud(
            positions=data["positions"],
            log_scales=data["log_scales"],
            rotations=data["rotations"],
            opacity_logits=data["opacity_logits"],
            sh=data["sh"],
            sh_degree=int(data["sh_degree"]),
            flags=data["flags"] if "flags" in data else None,
        )
        extras = {
            key[len("extra_") :]: data[key]
            for key in data.files
            if key.startswith("extra_")
        }
    return cloud, extras


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

PSNR_CAP = 99.0


def psnr(a, b):
    """10*log10(1/MSE) in dB, capped at 99 for near-identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * np.log10(1.0 / mse)


def write_metrics(path, header, rows):
    """CSV with repr-formatted floats; same rows -> bitwise-identical file."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(
            [repr(float(v)) if isinstance(v, float) else str(v) for v in row]
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# Images (PNG via OpenCV; float [0,1] in memory, linear unless srgb=True)
# ---------------------------------------------------------------------------

def _srgb_decode(x):
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def _srgb_encode(x):
    return np.where(x <= 0.0031308, x * 12.92, 1.055 * x ** (1 / 2.4) - 0.055)


def write_image(path, image, bits=16, srgb=False):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[2] != 3):
        raise InvalidInputError(f"expected (H, W) or (H, W, 3) image, got {image.shape}")
    if bits not in (8, 16):
        raise InvalidInputError(f"bits must be 8 or 16, got {bits}")
    image = np.clip(image, 0.0, 1.0)
    if srgb:
        image = _srgb_encode(image)
    peak = (1 << bits) - 1
    quantized = np.rint(image * peak).astype(np.uint8 if bits == 8 else np.uint16)
    if quantized.ndim == 3:
        quantized = quantized[:, :, ::-1]  # cv2 stores BGR
    if not cv2.imwrite(str(path), quantized):
        raise InvalidInputError(f"could not write image to {path!r}")


def read_image(path, srgb=False):
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ParseError(f"could not read image {path!r}")
    if raw.dtype == np.uint8:
        image = raw.astype(np.float64) / 255.0
    elif raw.dtype == np.uint16:
        image = raw.astype(np.float64) / 65535.0
    else:
        raise ParseError(f"unsupported image dtype {raw.dtype} in {path!r}")
    if image.ndim == 3:
        if image.shape[2] == 4:
            image = image[:, :, :3]
        image = image[:, :, ::-1].copy()  # BGR -> RGB
    if srgb:
        image = _srgb_decode(image)
    return image


# ---------------------------------------------------------------------------
# Camera rigs
# ---------------------------------------------------------------------------

CAMERAS_HEADER = "# cameras v1: fx fy cx cy width height qw qx qy qz tx ty tz"


def save_cameras(path, cameras):
    lines = [CAMERAS_HEADER]
    for cam in cameras:
        fields = [
            repr(float(cam.fx)),
            repr(float(cam.fy)),
            repr(float(cam.cx)),
            repr(float(cam.cy)),
            str(cam.width),
            str(cam.height),
        ]
        fields += [repr(float(v)) for v in cam.rotation]
        fields += [repr(float(v)) for v in cam.translation]
        lines.append("camera " + " ".join(fields))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_cameras(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    cameras = []
    offset = 0
    for line in text.splitlines(keepends=True):
        line_offset = offset
        offset += len(line)
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if parts[0] != "camera" or len(parts) != 14:
            raise ParseError(
                "expected 'camera fx fy cx cy width height qw qx qy qz tx ty tz'",
                offset=line_offset,
            )
        try:
            vals = [float(p) for p in parts[1:]]
            width, height = int(parts[5]), int(parts[6])
        except ValueError:
            raise ParseError(
                f"non-numeric camera field in {stripped!r}", offset=line_offset
            ) from None
        try:
            cameras.append(
                core.Camera(
                    fx=vals[0],
                    fy=vals[1],
                    cx=vals[2],
                    cy=vals[3],
                    width=width,
                    height=height,
                    rotation=np.array(vals[6:10]),
                    translation=np.array(vals[10:13]),
                )
            )
        except InvalidInputError as exc:
            raise ParseError(f"invalid camera: {exc}", offset=line_offset) from None
    return cameras
