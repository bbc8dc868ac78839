"""Shared fixtures and independent oracles.

The oracles here intentionally re-derive results with plain Python floats
and per-point loops (same IEEE evaluation order as the library's fixed
per-component expressions), so equality checks can be exact.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from frustumpoint.detections import Detection
from frustumpoint.geometry import Camera, CameraRig, DistortionCoeffs, Extrinsics, Intrinsics


def rotation_about_z(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR with positive diagonal."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def make_camera(camera_id: int, yaw_deg: float, fx: float = 400.0, width: int = 800, height: int = 600) -> Camera:
    rot_axis = rotation_about_z(yaw_deg)
    forward = rot_axis @ np.array([1.0, 0.0, 0.0])
    right = np.array([forward[1], -forward[0], 0.0])
    down = np.array([0.0, 0.0, -1.0])
    rotation = np.stack([right, down, forward])
    translation = np.zeros(3)
    return Camera(
        camera_id,
        Intrinsics(fx, fx, width / 2.0, height / 2.0, width, height),
        DistortionCoeffs(),
        Extrinsics(rotation, translation),
    )


@pytest.fixture
def five_camera_rig() -> CameraRig:
    return CameraRig([make_camera(i, 72.0 * i) for i in range(5)])


def oracle_label(
    xyz32: np.ndarray, rig: CameraRig, dets: list[Detection]
) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force (point x camera x box) labeling oracle.

    Scalar Python-float math mirroring the library's expression order:
    first camera (rig order) whose image contains the projected point is
    used; smallest-area containing box wins, ties to the lower detection
    index.
    """
    n = len(xyz32)
    class_ids = np.full(n, -1, np.int16)
    det_indices = np.full(n, -1, np.int32)
    cams = []
    for cam in rig:
        r = cam.extrinsics.rotation
        t = cam.extrinsics.translation
        intr = cam.intrinsics
        cam_dets = [
            (j, d) for j, d in enumerate(dets) if d.camera_id == cam.camera_id
        ]
        cams.append(
            (
                [float(v) for v in r.ravel()],
                [float(v) for v in t],
                float(intr.fx), float(intr.fy), float(intr.cx), float(intr.cy),
                float(intr.width), float(intr.height),
                cam_dets,
            )
        )

    for i in range(n):
        x = float(xyz32[i, 0])
        y = float(xyz32[i, 1])
        z = float(xyz32[i, 2])
        for (r, t, fx, fy, cx, cy, w, h, cam_dets) in cams:
            px = r[0] * x + r[1] * y + r[2] * z + t[0]
            py = r[3] * x + r[4] * y + r[5] * z + t[1]
            pz = r[6] * x + r[7] * y + r[8] * z + t[2]
            if pz <= 0.0:
                continue
            u = fx * px / pz + cx
            v = fy * py / pz + cy
            if not (0.0 <= u < w and 0.0 <= v < h):
                continue
            best_area = math.inf
            best_j = -1
            best_class = -1
            for j, det in cam_dets:
                b = det.box
                if b.x_min <= u < b.x_max and b.y_min <= v < b.y_max:
                    area = b.area
                    if area < best_area:
                        best_area = area
                        best_j = j
                        best_class = det.class_id
            if best_j >= 0:
                class_ids[i] = best_class
                det_indices[i] = best_j
            break  # first containing camera decides, matched or not
    return class_ids, det_indices
