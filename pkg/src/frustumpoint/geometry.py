"""Camera/lidar geometric model: calibration data, rigid transforms, pinhole
projection, and polynomial lens distortion.

Conventions:
  - Lidar frame: x forward, y left, z up, origin at the sensor.
  - Camera frame: x right, y down, z along the optical axis (points with
    z <= 0 are behind the camera and cannot be projected).
  - Pixel frame: u right, v down, origin at the top-left image corner;
    coordinates are continuous (no half-pixel offset is applied here).
  - Normalized image plane: (x/z, y/z) in the camera frame, where the
    distortion polynomial operates.

Extrinsics map lidar-frame coordinates into the camera frame. All point
operations accept either a single 3-vector or an (n, 3) batch and compute in
float64 using fixed per-component expressions, so results are reproducible
bit-for-bit regardless of batch size.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import FrustumPointError

__all__ = [
    "Intrinsics",
    "DistortionCoeffs",
    "Extrinsics",
    "Camera",
    "CameraRig",
    "UndistortMap",
    "CalibrationError",
    "BehindCameraError",
    "UndistortDivergenceError",
    "transform_point",
    "project_pinhole",
    "distort",
    "undistort_point",
    "radial_inversion_margin",
    "undistort_source_for",
    "compute_undistort_map",
    "load_rig",
    "save_rig",
]

ROTATION_TOL = 1e-9
UNDISTORT_TOL = 1e-9
UNDISTORT_MAX_ITER = 50


class CalibrationError(FrustumPointError):
    """Calibration data violates an invariant or failed to parse."""


class BehindCameraError(FrustumPointError):
    """A point with z <= 0 cannot appear in this camera."""


class UndistortDivergenceError(FrustumPointError):
    """Fixed-point undistortion did not converge; the coefficients are
    outside the invertible regime for this input."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole internals: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise CalibrationError(f"image size must be positive, got {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise CalibrationError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width):
            raise CalibrationError(f"cx={self.cx} outside [0, {self.width})")
        if not (0 <= self.cy < self.height):
            raise CalibrationError(f"cy={self.cy} outside [0, {self.height})")


@dataclass(frozen=True)
class DistortionCoeffs:
    """Radial (k1, k2, k3) and tangential (p1, p2) distortion coefficients
    acting on normalized image coordinates. All zeros is an ideal pinhole."""

    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        for name in ("k1", "k2", "k3", "p1", "p2"):
            if not np.isfinite(getattr(self, name)):
                raise CalibrationError(f"distortion coefficient {name} is not finite")

    @property
    def is_identity(self) -> bool:
        return self.k1 == 0.0 and self.k2 == 0.0 and self.k3 == 0.0 and self.p1 == 0.0 and self.p2 == 0.0


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """Rigid lidar-to-camera transform: p_cam = rotation @ p_lidar + translation."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,), meters

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64)
        if r.shape != (3, 3):
            raise CalibrationError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise CalibrationError(f"translation must be a 3-vector, got {t.shape}")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise CalibrationError("extrinsics contain non-finite values")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > ROTATION_TOL:
            raise CalibrationError(f"rotation is not orthonormal (max deviation {err:.3e})")
        det = float(np.linalg.det(r))
        if abs(det - 1.0) > ROTATION_TOL:
            raise CalibrationError(f"rotation determinant {det} != +1")
        object.__setattr__(self, "rotation", _readonly(r))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True, eq=False)
class Camera:
    """One rig entry: id plus the camera's intrinsics, distortion, and pose."""

    camera_id: int
    intrinsics: Intrinsics
    distortion: DistortionCoeffs
    extrinsics: Extrinsics


class CameraRig:
    """Ordered collection of calibrated cameras, looked up by camera_id."""

    def __init__(self, cameras: list[Camera] | tuple[Camera, ...]):
        cameras = tuple(cameras)
        if not cameras:
            raise CalibrationError("rig must contain at least one camera")
        ids = [c.camera_id for c in cameras]
        if len(set(ids)) != len(ids):
            raise CalibrationError(f"duplicate camera ids in rig: {ids}")
        self._cameras = cameras
        self._by_id = {c.camera_id: c for c in cameras}

    @property
    def cameras(self) -> tuple[Camera, ...]:
        return self._cameras

    def __len__(self) -> int:
        return len(self._cameras)

    def __iter__(self) -> Iterator[Camera]:
        return iter(self._cameras)

    def camera(self, camera_id: int) -> Camera:
        try:
            return self._by_id[camera_id]
        except KeyError:
            raise CalibrationError(f"camera_id {camera_id} not present in rig") from None

    def __contains__(self, camera_id: int) -> bool:
        return camera_id in self._by_id

    def intrinsics_by_id(self) -> Mapping[int, Intrinsics]:
        return {c.camera_id: c.intrinsics for c in self._cameras}


def transform_point(ext: Extrinsics, p_lidar) -> np.ndarray:
    """Map lidar-frame point(s) into the camera frame.

    Accepts a 3-vector or an (n, 3) array; returns the same shape in float64.
    """
    p = np.asarray(p_lidar, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ValueError(f"expected 3-vectors, got shape {p.shape}")
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r = ext.rotation
    t = ext.translation
    # Fixed evaluation order keeps batch and scalar paths bit-identical.
    ox = r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + t[0]
    oy = r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + t[1]
    oz = r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + t[2]
    return np.stack([ox, oy, oz], axis=-1)


def project_pinhole(intr: Intrinsics, p_cam) -> np.ndarray:
    """Project camera-frame point(s) to continuous pixel coordinates (u, v).

    The result may fall outside the image bounds; callers check containment.
    Raises BehindCameraError if any point has z <= 0.
    """
    p = np.asarray(p_cam, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ValueError(f"expected 3-vectors, got shape {p.shape}")
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point with z <= 0 is behind the camera")
    u = intr.fx * p[..., 0] / z + intr.cx
    v = intr.fy * p[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1)


def _distort_xy(d: DistortionCoeffs, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r2 = x * x + y * y
    radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3))
    xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y
    return xd, yd


def distort(d: DistortionCoeffs, n) -> np.ndarray:
    """Apply the forward distortion model to normalized coordinate(s)."""
    p = np.asarray(n, dtype=np.float64)
    if p.shape[-1] != 2:
        raise ValueError(f"expected 2-vectors, got shape {p.shape}")
    xd, yd = _distort_xy(d, p[..., 0], p[..., 1])
    return np.stack([xd, yd], axis=-1)


def radial_inversion_margin(d: DistortionCoeffs, radius: float, samples: int = 256) -> float:
    """Minimum derivative of the radial profile r -> r*(1 + k1 r^2 + ...)
    over [0, radius].

    A positive margin means the radial map is injective there, i.e. the
    coefficients are inside the model's invertible region for that radius.
    """
    r2 = np.linspace(0.0, radius, samples) ** 2
    deriv = 1.0 + 3.0 * d.k1 * r2 + 5.0 * d.k2 * r2**2 + 7.0 * d.k3 * r2**3
    return float(deriv.min())


def undistort_point(
    d: DistortionCoeffs,
    n_distorted,
    tol: float = UNDISTORT_TOL,
    max_iter: int = UNDISTORT_MAX_ITER,
) -> np.ndarray:
    """Invert the distortion model by Newton iteration on the residual.

    Returns n with distort(d, n) within ``tol`` of ``n_distorted``, seeded
    at the distorted input. Raises UndistortDivergenceError when the
    residual is still above tol after ``max_iter`` updates, which signals
    coefficients outside the invertible regime for this input.
    """
    target = np.asarray(n_distorted, dtype=np.float64)
    if target.shape[-1] != 2:
        raise ValueError(f"expected 2-vectors, got shape {target.shape}")
    x = target[..., 0].copy()
    y = target[..., 1].copy()
    tx, ty = target[..., 0], target[..., 1]
    # Iterates can overflow far outside the invertible region; the residual
    # check below rejects them regardless.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(max_iter + 1):
            xd, yd = _distort_xy(d, x, y)
            rx = xd - tx
            ry = yd - ty
            if float(np.sqrt(rx * rx + ry * ry).max()) < tol:
                return np.stack([x, y], axis=-1)
            r2 = x * x + y * y
            # dR/d(r^2) for R = 1 + k1 r^2 + k2 r^4 + k3 r^6.
            dr = d.k1 + r2 * (2.0 * d.k2 + r2 * 3.0 * d.k3)
            radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3))
            jxx = radial + 2.0 * x * x * dr + 2.0 * d.p1 * y + 6.0 * d.p2 * x
            jyy = radial + 2.0 * y * y * dr + 6.0 * d.p1 * y + 2.0 * d.p2 * x
            jxy = 2.0 * x * y * dr + 2.0 * d.p1 * x + 2.0 * d.p2 * y
            det = jxx * jyy - jxy * jxy
            x = x - (jyy * rx - jxy * ry) / det
            y = y - (jxx * ry - jxy * rx) / det
    raise UndistortDivergenceError(
        f"undistortion residual above {tol} after {max_iter} iterations"
    )


def undistort_source_for(intr: Intrinsics, d: DistortionCoeffs, dest_uv) -> np.ndarray:
    """Source pixel coordinates in the raw image for destination pixel(s) of
    the undistorted image: normalize, distort, denormalize."""
    uv = np.asarray(dest_uv, dtype=np.float64)
    x = (uv[..., 0] - intr.cx) / intr.fx
    y = (uv[..., 1] - intr.cy) / intr.fy
    xd, yd = _distort_xy(d, x, y)
    return np.stack([intr.fx * xd + intr.cx, intr.fy * yd + intr.cy], axis=-1)


@dataclass(frozen=True, eq=False)
class UndistortMap:
    """Per-destination-pixel source coordinates for image rectification.

    ``source_x``/``source_y`` are (height, width) float64 arrays; ``valid``
    flags destinations whose source sample lies inside the raw image (the
    invalid ones render black)."""

    source_x: np.ndarray
    source_y: np.ndarray
    valid: np.ndarray


def compute_undistort_map(intr: Intrinsics, d: DistortionCoeffs) -> UndistortMap:
    """Build the rectification map for a full image.

    For each destination pixel of the undistorted image, gives the source
    pixel of the raw image to sample. Destinations whose source falls outside
    [0, width-1] x [0, height-1] are flagged invalid.
    """
    us = np.arange(intr.width, dtype=np.float64)
    vs = np.arange(intr.height, dtype=np.float64)
    uu, vv = np.meshgrid(us, vs)
    if d.is_identity:
        # Zero distortion is the identity; skip the normalize/denormalize
        # round trip so the grid stays exact.
        sx, sy = uu, vv
    else:
        src = undistort_source_for(intr, d, np.stack([uu, vv], axis=-1))
        sx, sy = src[..., 0], src[..., 1]
    valid = (sx >= 0.0) & (sx <= intr.width - 1.0) & (sy >= 0.0) & (sy <= intr.height - 1.0)
    return UndistortMap(_readonly(sx), _readonly(sy), _readonly(valid))


# ---------------------------------------------------------------------------
# Calibration file io
#
# UTF-8 text; `#` starts a comment. Per camera:
#   camera <id>
#   r11 r12 r13 r21 r22 r23 r31 r32 r33   (row-major rotation)
#   tx ty tz                              (translation, meters)
#   fx fy cx cy width height
#   k1 k2 p1 p2 k3
# Numbers are whitespace-separated; line breaks inside a block are free.
# ---------------------------------------------------------------------------

_FIELDS_PER_CAMERA = 9 + 3 + 6 + 5


def load_rig(path) -> CameraRig:
    """Parse a calibration file and validate every camera's invariants."""
    text = Path(path).read_text(encoding="utf-8")
    tokens: list[str] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0]
        tokens.extend(line.split())

    cameras: list[Camera] = []
    i = 0
    while i < len(tokens):
        if tokens[i] != "camera":
            raise CalibrationError(f"expected 'camera <id>' header, got {tokens[i]!r}")
        try:
            camera_id = int(tokens[i + 1])
        except (IndexError, ValueError):
            raise CalibrationError("camera header missing an integer id") from None
        i += 2
        block = tokens[i : i + _FIELDS_PER_CAMERA]
        if len(block) < _FIELDS_PER_CAMERA:
            raise CalibrationError(
                f"camera {camera_id}: expected {_FIELDS_PER_CAMERA} values, got {len(block)}"
            )
        try:
            vals = [float(tok) for tok in block]
        except ValueError as exc:
            raise CalibrationError(f"camera {camera_id}: non-numeric value ({exc})") from None
        i += _FIELDS_PER_CAMERA

        rotation = np.array(vals[0:9], dtype=np.float64).reshape(3, 3)
        translation = np.array(vals[9:12], dtype=np.float64)
        fx, fy, cx, cy, width, height = vals[12:18]
        k1, k2, p1, p2, k3 = vals[18:23]
        try:
            intr = Intrinsics(fx, fy, cx, cy, int(width), int(height))
            dist = DistortionCoeffs(k1=k1, k2=k2, k3=k3, p1=p1, p2=p2)
            ext = Extrinsics(rotation, translation)
        except CalibrationError as exc:
            raise CalibrationError(f"camera {camera_id}: {exc}") from None
        cameras.append(Camera(camera_id, intr, dist, ext))

    if not cameras:
        raise CalibrationError("calibration file contains no cameras")
    try:
        return CameraRig(cameras)
    except CalibrationError as exc:
        raise CalibrationError(str(exc)) from None


def save_rig(rig: CameraRig, path) -> None:
    """Write a rig in the calibration text format read by load_rig."""
    lines = ["# camera rig calibration"]
    for cam in rig:
        intr, d, ext = cam.intrinsics, cam.distortion, cam.extrinsics
        lines.append(f"camera {cam.camera_id}")
        lines.append(" ".join(repr(float(v)) for v in ext.rotation.ravel()))
        lines.append(" ".join(repr(float(v)) for v in ext.translation))
        lines.append(
            f"{float(intr.fx)!r} {float(intr.fy)!r} {float(intr.cx)!r} {float(intr.cy)!r} "
            f"{intr.width} {intr.height}"
        )
        lines.append(
            f"{float(d.k1)!r} {float(d.k2)!r} {float(d.p1)!r} {float(d.p2)!r} {float(d.k3)!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
