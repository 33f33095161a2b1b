"""Gaussian primitives, cameras, and the shared geometric math.

A scene is a set of anisotropic 3D Gaussians, each carrying position, per-axis
scale, rotation quaternion, opacity, and spherical-harmonic (SH) color
coefficients.  Scales and opacities are stored in unconstrained form
(log-scale, pre-sigmoid logit) so plain gradient steps cannot leave the valid
domain; quaternions are stored unnormalized and normalized on use.

Conventions:
    quaternions     (w, x, y, z), world-to-camera for cameras
    SH colors       (K, 3) per Gaussian, K = (deg+1)^2 coefficients per channel
    images          float64 ndarrays of shape (H, W, C) with values in [0, 1]
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

# Real SH basis constants, standard splatting sign convention.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)

_EPS_NORM = 1e-12


# ---------------------------------------------------------------------------
# Parameter encode / decode
# ---------------------------------------------------------------------------

def encode_scale(s):
    """Positive scale -> log-scale storage."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise InvalidInputError("scales must be strictly positive")
    return np.log(s)


def decode_scale(log_s):
    return np.exp(np.asarray(log_s, dtype=np.float64))


def encode_opacity(sigma):
    """Opacity in (0,1) -> pre-sigmoid logit storage."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0) or np.any(sigma >= 1):
        raise InvalidInputError("opacity must lie strictly inside (0, 1)")
    return np.log(sigma) - np.log1p(-sigma)


def decode_opacity(logit):
    return 1.0 / (1.0 + np.exp(-np.asarray(logit, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Quaternions and covariances
# ---------------------------------------------------------------------------

def normalize_quaternion(q):
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < _EPS_NORM):
        raise InvalidInputError("zero-norm quaternion")
    return q / norm


def rotation_matrix(q):
    """Rotation matrix of a (w,x,y,z) quaternion; normalizes internally."""
    w, x, y, z = normalize_quaternion(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_matrices(qs):
    """Vectorized `rotation_matrix` for an (N, 4) array."""
    qs = np.asarray(qs, dtype=np.float64)
    norms = np.linalg.norm(qs, axis=1, keepdims=True)
    if np.any(norms < _EPS_NORM):
        raise InvalidInputError("zero-norm quaternion")
    w, x, y, z = (qs / norms).T
    R = np.empty((qs.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance(s, q):
    """3D covariance R diag(s)^2 R^T from positive scales and a quaternion."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise InvalidInputError("scales must be strictly positive")
    R = rotation_matrix(q)
    return (R * (s * s)) @ R.T


def quaternion_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def slerp(qa, qb, t):
    """Spherical-linear interpolation between two quaternions."""
    qa = normalize_quaternion(qa)
    qb = normalize_quaternion(qb)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:  # take the short arc
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-10:
        out = (1.0 - t) * qa + t * qb
        return out / np.linalg.norm(out)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) * qa + np.sin(t * theta) * qb) / s


# ---------------------------------------------------------------------------
# Spherical harmonics
# ---------------------------------------------------------------------------

def sh_basis(dirs, deg):
    """Per-coefficient basis values for unit directions.

    dirs: (..., 3) unit vectors.  Returns (..., (deg+1)^2).
    """
    if deg not in (0, 1, 2):
        raise InvalidInputError(f"sh degree must be 0, 1, or 2, got {deg}")
    dirs = np.asarray(dirs, dtype=np.float64)
    shape = dirs.shape[:-1]
    out = np.empty(shape + ((deg + 1) ** 2,))
    out[..., 0] = SH_C0
    if deg >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if deg >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    return out


def eval_sh(coeffs, direction, deg):
    """Evaluate an SH color at a unit view direction.

    coeffs: ((deg+1)^2, 3) or flat of length 3*(deg+1)^2 (coefficient-major).
    Returns the raw RGB (basis dot coefficients, plus the 0.5 offset); the
    renderer clamps at zero.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    k = (deg + 1) ** 2
    if coeffs.size != 3 * k:
        raise InvalidInputError(
            f"expected {3 * k} SH coefficients for degree {deg}, got {coeffs.size}"
        )
    coeffs = coeffs.reshape(k, 3)
    basis = sh_basis(np.asarray(direction, dtype=np.float64), deg)
    return basis @ coeffs + 0.5


def sh_dc_from_rgb(rgb):
    """Degree-0 coefficient that renders as the given RGB from any direction."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class Gaussian:
    """One primitive in decoded form; used for construction and inspection."""

    position: np.ndarray  # (3,)
    scale: np.ndarray  # (3,) strictly positive
    rotation: np.ndarray  # (4,) (w,x,y,z), nonzero
    opacity: float  # in (0, 1)
    sh: np.ndarray  # ((deg+1)^2, 3)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.sh = np.asarray(self.sh, dtype=np.float64)
        if self.sh.ndim == 1:
            self.sh = self.sh.reshape(-1, 3)
        if np.any(self.scale <= 0):
            raise InvalidInputError("Gaussian scale must be strictly positive")
        if not 0.0 < self.opacity < 1.0:
            raise InvalidInputError("Gaussian opacity must lie in (0, 1)")
        if np.linalg.norm(self.rotation) < _EPS_NORM:
            raise InvalidInputError("Gaussian rotation quaternion is zero")


def flag_dim(sh_degree):
    """Length of the per-Gaussian gradient-trend vector: 3+3+4+1+k_c."""
    return 11 + 3 * (sh_degree + 1) ** 2


# Slices of the flattened per-Gaussian parameter vector, by attribute group.
def attribute_slices(sh_degree):
    k_c = 3 * (sh_degree + 1) ** 2
    return {
        "mu": slice(0, 3),
        "s": slice(3, 6),
        "q": slice(6, 10),
        "sigma": slice(10, 11),
        "color": slice(11, 11 + k_c),
    }


@dataclass
class GaussianCloud:
    """Structure-of-arrays container for a set of Gaussians.

    ``flags`` holds the per-Gaussian gradient-trend vectors used by the gated
    optimizer; it is optimizer state only and is never written to scene
    exports.
    """

    positions: np.ndarray  # (N, 3)
    log_scales: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) unnormalized (w,x,y,z)
    opacity_logits: np.ndarray  # (N,)
    sh: np.ndarray  # (N, (deg+1)^2, 3)
    sh_degree: int = 1
    flags: np.ndarray | None = None  # (N, 11 + 3*(deg+1)^2) or None

    def __post_init__(self):
        n = self.positions.shape[0]
        k = (self.sh_degree + 1) ** 2
        if self.positions.shape != (n, 3):
            raise InvalidInputError(f"positions must have shape {(n, 3)}")
        if self.log_scales.shape != (n, 3):
            raise InvalidInputError(
                f"log_scales must have shape {(n, 3)}, got {self.log_scales.shape}"
            )
        if self.rotations.shape != (n, 4):
            raise InvalidInputError(
                f"rotations must have shape {(n, 4)}, got {self.rotations.shape}"
            )
        if self.opacity_logits.shape != (n,):
            raise InvalidInputError(
                f"opacity_logits must have shape {(n,)}, got {self.opacity_logits.shape}"
            )
        if self.sh.shape != (n, k, 3):
            raise InvalidInputError(
                f"sh must have shape {(n, k, 3)}, got {self.sh.shape}"
            )
        if self.flags is not None and self.flags.shape != (n, flag_dim(self.sh_degree)):
            raise InvalidInputError(
                f"flags must have shape {(n, flag_dim(self.sh_degree))}, "
                f"got {self.flags.shape}"
            )

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_gaussians(cls, gaussians, sh_degree=1):
        k = (sh_degree + 1) ** 2
        n = len(gaussians)
        positions = np.zeros((n, 3))
        log_scales = np.zeros((n, 3))
        rotations = np.zeros((n, 4))
        logits = np.zeros(n)
        sh = np.zeros((n, k, 3))
        for i, g in enumerate(gaussians):
            if g.sh.shape != (k, 3):
                raise InvalidInputError(
                    f"Gaussian {i}: expected sh shape {(k, 3)}, got {g.sh.shape}"
                )
            positions[i] = g.position
            log_scales[i] = encode_scale(g.scale)
            rotations[i] = g.rotation
            logits[i] = encode_opacity(g.opacity)
            sh[i] = g.sh
        return cls(positions, log_scales, rotations, logits, sh, sh_degree)

    @classmethod
    def empty(cls, sh_degree=1):
        k = (sh_degree + 1) ** 2
        return cls(
            np.zeros((0, 3)),
            np.zeros((0, 3)),
            np.zeros((0, 4)),
            np.zeros(0),
            np.zeros((0, k, 3)),
            sh_degree,
        )

    # -- decoded views ------------------------------------------------------

    @property
    def n(self):
        return self.positions.shape[0]

    def __len__(self):
        return self.n

    @property
    def k_coeff(self):
        return (self.sh_degree + 1) ** 2

    @property
    def k_color(self):
        return 3 * self.k_coeff

    @property
    def scales(self):
        return decode_scale(self.log_scales)

    @property
    def opacities(self):
        return decode_opacity(self.opacity_logits)

    def gaussian(self, i):
        return Gaussian(
            position=self.positions[i].copy(),
            scale=decode_scale(self.log_scales[i]),
            rotation=self.rotations[i].copy(),
            opacity=float(decode_opacity(self.opacity_logits[i])),
            sh=self.sh[i].copy(),
        )

    # -- structural ops -----------------------------------------------------

    def copy(self):
        return GaussianCloud(
            self.positions.copy(),
            self.log_scales.copy(),
            self.rotations.copy(),
            self.opacity_logits.copy(),
            self.sh.copy(),
            self.sh_degree,
            None if self.flags is None else self.flags.copy(),
        )

    def select(self, mask):
        """Subset cloud; keeps flag rows of the survivors."""
        return GaussianCloud(
            self.positions[mask],
            self.log_scales[mask],
            self.rotations[mask],
            self.opacity_logits[mask],
            self.sh[mask],
            self.sh_degree,
            None if self.flags is None else self.flags[mask],
        )

    def with_flags(self, flags=None):
        """Copy carrying flag vectors; zero-initialized unless given."""
        out = self.copy()
        if flags is not None:
            flags = np.asarray(flags, dtype=np.float64)
            if flags.shape != (out.n, flag_dim(out.sh_degree)):
                raise InvalidInputError(
                    f"flags must have shape {(out.n, flag_dim(out.sh_degree))}"
                )
            out.flags = flags.copy()
        elif out.flags is None:
            out.flags = np.zeros((out.n, flag_dim(out.sh_degree)))
        return out

    def without_flags(self):
        """Copy with flag state removed; rendering is unaffected."""
        out = self.copy()
        out.flags = None
        return out

    @staticmethod
    def concatenate(a, b):
        if a.sh_degree != b.sh_degree:
            raise InvalidInputError("cannot concatenate clouds of different sh degree")
        has_flags = a.flags is not None or b.flags is not None
        fa = a.flags if a.flags is not None else np.zeros((a.n, flag_dim(a.sh_degree)))
        fb = b.flags if b.flags is not None else np.zeros((b.n, flag_dim(b.sh_degree)))
        return GaussianCloud(
            np.concatenate([a.positions, b.positions]),
            np.concatenate([a.log_scales, b.log_scales]),
            np.concatenate([a.rotations, b.rotations]),
            np.concatenate([a.opacity_logits, b.opacity_logits]),
            np.concatenate([a.sh, b.sh]),
            a.sh_degree,
            np.concatenate([fa, fb]) if has_flags else None,
        )


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------

@dataclass
class Camera:
    """Pinhole camera: p_cam = R_cw @ p_world + t, pixel u = f*x/z + c.

    Pixel (row i, col j) covers [j, j+1) x [i, i+1) with its center at
    (j + 0.5, i + 0.5) in projected coordinates.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image dimensions must be at least 1")
        self.rotation = normalize_quaternion(self.rotation)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def rotation_matrix(self):
        return rotation_matrix(self.rotation)

    @property
    def center(self):
        """Camera position in world coordinates."""
        return -self.rotation_matrix().T @ self.translation

    def scaled(self, factor):
        """Camera viewing the same frustum at factor-x resolution."""
        return Camera(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
            rotation=self.rotation.copy(),
            translation=self.translation.copy(),
        )


def look_at_camera(eye, target, up, fx, fy, width, height, cx=None, cy=None):
    """Camera at ``eye`` looking toward ``target`` (-z convention is not used:
    the camera looks along +z in camera space)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    forward = target - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # up parallel to view direction; pick another up
        up = np.array([1.0, 0.0, 0.0])
        right = np.cross(forward, up)
        nr = np.linalg.norm(right)
    right = right / nr
    down = np.cross(forward, right)
    R_wc = np.stack([right, down, forward], axis=1)  # camera axes in world
    R_cw = R_wc.T
    t = -R_cw @ eye
    return Camera(
        fx=fx,
        fy=fy,
        cx=width / 2.0 if cx is None else cx,
        cy=height / 2.0 if cy is None else cy,
        width=width,
        height=height,
        rotation=quaternion_from_matrix(R_cw),
        translation=t,
    )


def quaternion_from_matrix(R):
    """(w,x,y,z) quaternion of a proper rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    return normalize_quaternion(np.array([w, x, y, z]))
