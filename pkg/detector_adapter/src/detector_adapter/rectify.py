"""Image rectification with the pipeline's remap semantics: every destination
pixel of the undistorted image samples the raw image at its forward-distorted
position; samples falling outside the raw image render black."""

from __future__ import annotations

import cv2
import numpy as np

from .calibration import CameraCalibration

__all__ = ["build_undistort_maps", "rectify_image"]


def build_undistort_maps(calib: CameraCalibration) -> tuple[np.ndarray, np.ndarray]:
    """Per-destination-pixel source coordinates (float32 map_x, map_y)."""
    return cv2.initUndistortRectifyMap(
        calib.matrix,
        calib.distortion,
        None,
        calib.matrix,  # keep the same pinhole for the rectified image
        calib.size,
        cv2.CV_32FC1,
    )


def rectify_image(image: np.ndarray, calib: CameraCalibration) -> np.ndarray:
    """Undistort one image; out-of-source regions become black."""
    if image.shape[0] != calib.height or image.shape[1] != calib.width:
        raise ValueError(
            f"image is {image.shape[1]}x{image.shape[0]}, calibration says "
            f"{calib.width}x{calib.height}"
        )
    map_x, map_y = build_undistort_maps(calib)
    return cv2.remap(
        image,
        map_x,
        map_y,
        interpolation=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0,
    )
