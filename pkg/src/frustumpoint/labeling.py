"""Point clouds, per-point labels, their binary file formats, and the core
projection-containment labeling step.

A point gets a label by projecting into the first camera (in rig order)
whose image contains it; among that camera's boxes containing the projected
pixel, the smallest-area box wins, with ties broken by lower detection
index. Points whose first containing camera has no matching box stay
unlabeled.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .detections import Detection, NUM_CLASSES
from .errors import FrustumPointError
from .geometry import CameraRig, transform_point

__all__ = [
    "PointCloud",
    "LabeledCloud",
    "CloudFormatError",
    "label_points",
    "extract_frustum",
    "read_cloud",
    "write_cloud",
    "read_labels",
    "write_labels",
]

CLOUD_MAGIC = b"FPC1"
LABEL_MAGIC = b"FPL1"
_LABEL_DTYPE = np.dtype([("class_id", "<i2"), ("detection_index", "<i4")])


class CloudFormatError(FrustumPointError):
    """A cloud or label file is malformed."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Lidar returns in the sensor frame: (n, 3) float32 xyz in meters plus
    per-point intensity in [0, 1]."""

    xyz: np.ndarray
    intensity: np.ndarray
    frame_id: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float32).reshape(-1, 3)
        intensity = np.array(self.intensity, dtype=np.float32).reshape(-1)
        if len(intensity) != len(xyz):
            raise ValueError(
                f"intensity length {len(intensity)} != point count {len(xyz)}"
            )
        if not np.isfinite(xyz).all():
            raise ValueError("point coordinates must be finite")
        xyz.setflags(write=False)
        intensity.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "intensity", intensity)

    def __len__(self) -> int:
        return len(self.xyz)

    @classmethod
    def empty(cls, frame_id: int = 0, timestamp: float = 0.0) -> "PointCloud":
        return cls(np.empty((0, 3), np.float32), np.empty(0, np.float32), frame_id, timestamp)


@dataclass(frozen=True, eq=False)
class LabeledCloud:
    """A cloud with optional per-point labels.

    ``class_ids`` holds -1 for unlabeled points; ``detection_indices`` holds
    -1 where no detection produced the label (ground-truth labelings carry a
    class without a detection). ``num_detections`` is recorded by
    label_points so frustum extraction can reject out-of-range indices.
    """

    cloud: PointCloud
    class_ids: np.ndarray
    detection_indices: np.ndarray
    num_detections: int | None = field(default=None)

    def __post_init__(self):
        cls = np.array(self.class_ids, dtype=np.int16).reshape(-1)
        det = np.array(self.detection_indices, dtype=np.int32).reshape(-1)
        n = len(self.cloud)
        if len(cls) != n or len(det) != n:
            raise ValueError(f"label arrays must have length {n}")
        if len(cls) and (cls.min() < -1 or cls.max() >= NUM_CLASSES):
            raise ValueError(f"class ids must be -1 or in [0, {NUM_CLASSES})")
        if len(det) and det.min() < -1:
            raise ValueError("detection indices must be >= -1")
        cls.setflags(write=False)
        det.setflags(write=False)
        object.__setattr__(self, "class_ids", cls)
        object.__setattr__(self, "detection_indices", det)

    def __len__(self) -> int:
        return len(self.cloud)

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.class_ids >= 0

    @classmethod
    def unlabeled(cls, cloud: PointCloud) -> "LabeledCloud":
        n = len(cloud)
        return cls(cloud, np.full(n, -1, np.int16), np.full(n, -1, np.int32))


def label_points(cloud: PointCloud, rig: CameraRig, dets: Sequence[Detection]) -> LabeledCloud:
    """Assign a class label to every point whose projection falls inside a
    detection box of the frame.

    ``dets`` is one frame's detection group (all cameras, input order);
    returned detection indices refer to positions in that sequence.
    """
    for det in dets:
        if det.camera_id not in rig:
            raise ValueError(f"detection references camera_id {det.camera_id} not in rig")

    n = len(cloud)
    class_ids = np.full(n, -1, np.int16)
    det_indices = np.full(n, -1, np.int32)
    if n == 0:
        return LabeledCloud(cloud, class_ids, det_indices, num_detections=len(dets))

    xyz = cloud.xyz.astype(np.float64)
    undecided = np.ones(n, dtype=bool)
    for cam in rig:
        if not undecided.any():
            break
        idx = np.flatnonzero(undecided)
        p_cam = transform_point(cam.extrinsics, xyz[idx])
        z = p_cam[:, 2]
        front = z > 0.0
        if not front.any():
            continue
        idx = idx[front]
        p_cam = p_cam[front]
        intr = cam.intrinsics
        u = intr.fx * p_cam[:, 0] / p_cam[:, 2] + intr.cx
        v = intr.fy * p_cam[:, 1] / p_cam[:, 2] + intr.cy
        inside = (u >= 0.0) & (u < intr.width) & (v >= 0.0) & (v < intr.height)
        if not inside.any():
            continue
        idx = idx[inside]
        u = u[inside]
        v = v[inside]
        # This camera's image contains these points: they are decided here
        # whether or not any box matches.
        undecided[idx] = False

        best_area = np.full(len(idx), np.inf)
        best_det = np.full(len(idx), -1, np.int32)
        best_class = np.full(len(idx), -1, np.int16)
        for det_index, det in enumerate(dets):
            if det.camera_id != cam.camera_id:
                continue
            b = det.box
            contained = (u >= b.x_min) & (u < b.x_max) & (v >= b.y_min) & (v < b.y_max)
            better = contained & (b.area < best_area)
            if better.any():
                best_area[better] = b.area
                best_det[better] = det_index
                best_class[better] = det.class_id
        matched = best_det >= 0
        class_ids[idx[matched]] = best_class[matched]
        det_indices[idx[matched]] = best_det[matched]

    return LabeledCloud(cloud, class_ids, det_indices, num_detections=len(dets))


def extract_frustum(lc: LabeledCloud, detection_index: int) -> np.ndarray:
    """Indices of the points labeled by one detection, in point order."""
    if detection_index < 0:
        raise IndexError(f"detection_index {detection_index} is negative")
    if lc.num_detections is not None and detection_index >= lc.num_detections:
        raise IndexError(
            f"detection_index {detection_index} out of range for {lc.num_detections} detections"
        )
    return np.flatnonzero(lc.detection_indices == detection_index)


# ---------------------------------------------------------------------------
# Binary formats. Cloud: magic FPC1, u32 LE count, count x 4 float32 LE
# (x, y, z, intensity). Labels: magic FPL1, u32 LE count, count x
# (i16 class_id, i32 detection_index) LE; -1 marks unlabeled/none.
# ---------------------------------------------------------------------------


def write_cloud(cloud: PointCloud, path) -> None:
    data = np.empty((len(cloud), 4), dtype="<f4")
    data[:, :3] = cloud.xyz
    data[:, 3] = cloud.intensity
    with open(path, "wb") as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack("<I", len(cloud)))
        f.write(data.tobytes())


def read_cloud(path, frame_id: int = 0, timestamp: float = 0.0) -> PointCloud:
    raw = Path(path).read_bytes()
    if raw[:4] != CLOUD_MAGIC:
        raise CloudFormatError(f"{path}: bad magic {raw[:4]!r}, expected {CLOUD_MAGIC!r}")
    if len(raw) < 8:
        raise CloudFormatError(f"{path}: truncated header")
    (count,) = struct.unpack("<I", raw[4:8])
    expected = 8 + count * 16
    if len(raw) != expected:
        raise CloudFormatError(f"{path}: expected {expected} bytes for {count} points, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=8).reshape(count, 4)
    return PointCloud(data[:, :3], data[:, 3], frame_id=frame_id, timestamp=timestamp)


def write_labels(lc: LabeledCloud, path) -> None:
    rec = np.empty(len(lc), dtype=_LABEL_DTYPE)
    rec["class_id"] = lc.class_ids
    rec["detection_index"] = lc.detection_indices
    with open(path, "wb") as f:
        f.write(LABEL_MAGIC)
        f.write(struct.pack("<I", len(lc)))
        f.write(rec.tobytes())


def read_labels(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a labels file; returns (class_ids int16, detection_indices int32)."""
    raw = Path(path).read_bytes()
    if raw[:4] != LABEL_MAGIC:
        raise CloudFormatError(f"{path}: bad magic {raw[:4]!r}, expected {LABEL_MAGIC!r}")
    if len(raw) < 8:
        raise CloudFormatError(f"{path}: truncated header")
    (count,) = struct.unpack("<I", raw[4:8])
    expected = 8 + count * _LABEL_DTYPE.itemsize
    if len(raw) != expected:
        raise CloudFormatError(f"{path}: expected {expected} bytes for {count} labels, got {len(raw)}")
    rec = np.frombuffer(raw, dtype=_LABEL_DTYPE, offset=8)
    return rec["class_id"].copy(), rec["detection_index"].copy()
