"""Spherical depth/label rasters: binning geometry, rendering, and PNG io.

The default raster is 32 rows x 1024 columns covering elevations +10.67 deg
down to -30.67 deg and a full 360 deg of azimuth (+x axis is azimuth 0,
counterclockwise positive). Depth is stored in millimeters, clamped to
25,000; 0 means "no return". Labels hold a class id, -1 for background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .detections import NUM_CLASSES
from .errors import FrustumPointError
from .labeling import LabeledCloud

__all__ = [
    "DepthImageSpec",
    "DepthLabelImage",
    "DEFAULT_SPEC",
    "RasterFormatError",
    "BACKGROUND_LABEL_PIXEL",
    "spherical_bin",
    "bin_points",
    "range_millimeters",
    "render",
    "write_raster",
    "read_raster",
]

DEPTH_CAP_MM = 25000
BACKGROUND_LABEL_PIXEL = 255


class RasterFormatError(FrustumPointError):
    """A raster file is malformed or has unexpected dimensions."""


@dataclass(frozen=True)
class DepthImageSpec:
    """Binning geometry of the spherical raster.

    Bin sizes derive from the angular span and the raster shape: the default
    vertical bin is (10.67 + 30.67)/32 = 1.292 deg and the horizontal bin is
    360/1024 = 0.3516 deg.
    """

    rows: int = 32
    cols: int = 1024
    elev_max_deg: float = 10.67
    elev_min_deg: float = -30.67
    range_max_mm: int = DEPTH_CAP_MM

    def __post_init__(self):
        if self.rows * self.cols != 32768:
            raise ValueError(f"rows*cols must be 32768, got {self.rows}x{self.cols}")
        if not self.elev_max_deg > self.elev_min_deg:
            raise ValueError("elev_max_deg must exceed elev_min_deg")
        if not self.range_max_mm > 0:
            raise ValueError("range_max_mm must be positive")

    @property
    def row_height_deg(self) -> float:
        return (self.elev_max_deg - self.elev_min_deg) / self.rows

    @property
    def col_width_deg(self) -> float:
        return 360.0 / self.cols


DEFAULT_SPEC = DepthImageSpec()


@dataclass(frozen=True, eq=False)
class DepthLabelImage:
    """Paired depth (uint16 mm) and label (int16 class id, -1 background)
    rasters of equal shape."""

    depth_mm: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        depth = np.array(self.depth_mm, dtype=np.uint16)
        labels = np.array(self.labels, dtype=np.int16)
        if depth.ndim != 2:
            raise ValueError(f"depth must be 2D, got shape {depth.shape}")
        if depth.shape != labels.shape:
            raise ValueError(f"depth shape {depth.shape} != label shape {labels.shape}")
        if depth.max(initial=0) > DEPTH_CAP_MM:
            raise ValueError(f"depth values must be <= {DEPTH_CAP_MM} mm")
        if labels.size:
            bad = (labels < -1) | (labels >= NUM_CLASSES)
            if bad.any():
                raise ValueError(f"labels must be -1 or in [0, {NUM_CLASSES})")
            if ((labels >= 0) & (depth == 0)).any():
                raise ValueError("a labeled bin must have a positive depth")
        depth.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "depth_mm", depth)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth_mm.shape

    @classmethod
    def empty(cls, spec: DepthImageSpec = DEFAULT_SPEC) -> "DepthLabelImage":
        return cls(
            np.zeros((spec.rows, spec.cols), np.uint16),
            np.full((spec.rows, spec.cols), -1, np.int16),
        )


def spherical_bin(p, spec: DepthImageSpec = DEFAULT_SPEC) -> tuple[int, int] | None:
    """Raster bin (row, col) of one point, or None when the elevation falls
    outside the vertical scanning range.

    Valid elevations are (elev_min, elev_max]; azimuth wraps the full turn.
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if x == 0.0 and y == 0.0 and z == 0.0:
        raise ValueError("the origin has no direction")
    azimuth = math.degrees(math.atan2(y, x)) % 360.0
    col = min(int(azimuth / 360.0 * spec.cols), spec.cols - 1)
    elevation = math.degrees(math.atan2(z, math.hypot(x, y)))
    if not (spec.elev_min_deg < elevation <= spec.elev_max_deg):
        return None
    row = int((spec.elev_max_deg - elevation) / spec.row_height_deg)
    return min(max(row, 0), spec.rows - 1), col


def bin_points(xyz: np.ndarray, spec: DepthImageSpec = DEFAULT_SPEC) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized binning: (rows, cols, in_fov) for an (n, 3) float array."""
    pts = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    azimuth = np.degrees(np.arctan2(y, x)) % 360.0
    cols = np.minimum((azimuth / 360.0 * spec.cols).astype(np.int64), spec.cols - 1)
    elevation = np.degrees(np.arctan2(z, np.hypot(x, y)))
    in_fov = (elevation > spec.elev_min_deg) & (elevation <= spec.elev_max_deg)
    rows = ((spec.elev_max_deg - elevation) / spec.row_height_deg).astype(np.int64)
    rows = np.clip(rows, 0, spec.rows - 1)
    return rows, cols, in_fov


def range_millimeters(xyz: np.ndarray, range_max_mm: int = DEPTH_CAP_MM) -> np.ndarray:
    """Rounded, clamped range in millimeters for (n, 3) points."""
    pts = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    rng = np.sqrt(x * x + y * y + z * z)
    mm = np.rint(rng * 1000.0).astype(np.int64)
    return np.minimum(mm, range_max_mm)


def render(lc: LabeledCloud, spec: DepthImageSpec = DEFAULT_SPEC) -> DepthLabelImage:
    """Rasterize a labeled cloud; within each bin the nearest point wins
    (ties broken by lower point index) and supplies both depth and label.
    """
    n = len(lc)
    depth_img = np.zeros((spec.rows, spec.cols), np.uint16)
    label_img = np.full((spec.rows, spec.cols), -1, np.int16)
    if n == 0:
        return DepthLabelImage(depth_img, label_img)

    rows, cols, in_fov = bin_points(lc.cloud.xyz, spec)
    depth = range_millimeters(lc.cloud.xyz, spec.range_max_mm)
    # Depth 0 is reserved for "no return"; a sub-0.5 mm range cannot occur
    # on a real sensor, so such points are skipped rather than stored.
    usable = in_fov & (depth > 0)
    idx = np.flatnonzero(usable)
    if len(idx) == 0:
        return DepthLabelImage(depth_img, label_img)

    flat = rows[idx] * spec.cols + cols[idx]
    order = np.lexsort((idx, depth[idx], flat))
    flat_sorted = flat[order]
    first = np.unique(flat_sorted, return_index=True)[1]
    winners = idx[order[first]]
    bins = flat_sorted[first]

    r, c = bins // spec.cols, bins % spec.cols
    depth_img[r, c] = depth[winners].astype(np.uint16)
    label_img[r, c] = lc.class_ids[winners]
    return DepthLabelImage(depth_img, label_img)


# ---------------------------------------------------------------------------
# PNG io: depth as 16-bit single-channel grayscale holding millimeters,
# labels as 8-bit single-channel grayscale with 255 = background.
# ---------------------------------------------------------------------------

STANDARD_SHAPE = (32, 1024)


def write_raster(img: DepthLabelImage, depth_path, label_path) -> None:
    if img.shape != STANDARD_SHAPE:
        raise RasterFormatError(f"raster shape {img.shape} != {STANDARD_SHAPE}")
    Image.fromarray(img.depth_mm).save(Path(depth_path), format="PNG")
    label_u8 = np.where(img.labels < 0, BACKGROUND_LABEL_PIXEL, img.labels).astype(np.uint8)
    Image.fromarray(label_u8).save(Path(label_path), format="PNG")


def _load_png(path, expect_16bit: bool) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.array(im)
    except (OSError, SyntaxError) as exc:
        raise RasterFormatError(f"{path}: not a readable image ({exc})") from None
    if arr.ndim != 2:
        raise RasterFormatError(f"{path}: expected single-channel image, got shape {arr.shape}")
    if expect_16bit and arr.dtype not in (np.uint16, np.int32):
        raise RasterFormatError(f"{path}: expected 16-bit depth, got {arr.dtype}")
    if not expect_16bit and arr.dtype != np.uint8:
        raise RasterFormatError(f"{path}: expected 8-bit labels, got {arr.dtype}")
    return arr


def read_raster(depth_path, label_path) -> DepthLabelImage:
    depth = _load_png(depth_path, expect_16bit=True).astype(np.int64)
    label_u8 = _load_png(label_path, expect_16bit=False)
    if depth.shape != STANDARD_SHAPE:
        raise RasterFormatError(f"{depth_path}: shape {depth.shape} != {STANDARD_SHAPE}")
    if label_u8.shape != STANDARD_SHAPE:
        raise RasterFormatError(f"{label_path}: shape {label_u8.shape} != {STANDARD_SHAPE}")
    if depth.max(initial=0) > DEPTH_CAP_MM:
        raise RasterFormatError(f"{depth_path}: depth exceeds {DEPTH_CAP_MM} mm")
    labels = label_u8.astype(np.int16)
    labels[label_u8 == BACKGROUND_LABEL_PIXEL] = -1
    if (labels >= NUM_CLASSES).any():
        raise RasterFormatError(f"{label_path}: label above class range and not background")
    try:
        return DepthLabelImage(depth.astype(np.uint16), labels)
    except ValueError as exc:
        raise RasterFormatError(f"{depth_path}/{label_path}: {exc}") from None
