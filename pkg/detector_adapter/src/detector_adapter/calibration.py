"""Reader for the pipeline's calibration text format.

Parsed independently here so the adapter couples to the primary pipeline
only through its documented file formats. Per camera the file holds a
``camera <id>`` header, 9 row-major rotation entries, 3 translation entries,
``fx fy cx cy width height``, then ``k1 k2 p1 p2 k3``; whitespace separated,
``#`` comments. The adapter only needs intrinsics and distortion.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["CameraCalibration", "CalibrationFileError", "read_calibration"]

_FIELDS_PER_CAMERA = 23


class CalibrationFileError(ValueError):
    pass


@dataclass(frozen=True)
class CameraCalibration:
    camera_id: int
    matrix: np.ndarray  # 3x3 pinhole matrix
    # OpenCV coefficient order (k1, k2, p1, p2, k3).
    distortion: np.ndarray
    width: int
    height: int

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height


def read_calibration(path) -> dict[int, CameraCalibration]:
    """Parse the calibration file into a camera_id -> calibration map."""
    tokens: list[str] = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        tokens.extend(raw.split("#", 1)[0].split())

    cameras: dict[int, CameraCalibration] = {}
    i = 0
    while i < len(tokens):
        if tokens[i] != "camera":
            raise CalibrationFileError(f"expected 'camera <id>', got {tokens[i]!r}")
        try:
            camera_id = int(tokens[i + 1])
        except (IndexError, ValueError):
            raise CalibrationFileError("camera header missing an integer id") from None
        block = tokens[i + 2 : i + 2 + _FIELDS_PER_CAMERA]
        if len(block) < _FIELDS_PER_CAMERA:
            raise CalibrationFileError(
                f"camera {camera_id}: expected {_FIELDS_PER_CAMERA} values, got {len(block)}"
            )
        try:
            vals = [float(tok) for tok in block]
        except ValueError as exc:
            raise CalibrationFileError(f"camera {camera_id}: {exc}") from None
        i += 2 + _FIELDS_PER_CAMERA

        fx, fy, cx, cy, width, height = vals[12:18]
        k1, k2, p1, p2, k3 = vals[18:23]
        if camera_id in cameras:
            raise CalibrationFileError(f"duplicate camera id {camera_id}")
        matrix = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        cameras[camera_id] = CameraCalibration(
            camera_id=camera_id,
            matrix=matrix,
            distortion=np.array([k1, k2, p1, p2, k3]),
            width=int(width),
            height=int(height),
        )
    if not cameras:
        raise CalibrationFileError("calibration file contains no cameras")
    return cameras
