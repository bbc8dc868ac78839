"""Batch operations: rectify an image directory and run detection over it,
emitting the pipeline's detections CSV.

Images are named ``<frame_id>_<camera_id>.<ext>``. Output rows are sorted by
(frame, camera, class, box) so results do not depend on traversal or any
per-image parallelism a backend might use.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import cv2

from .backends import load_backend
from .calibration import read_calibration

log = logging.getLogger("detector_adapter")

__all__ = ["AdapterConfig", "detect_directory", "undistort_images"]

_NAME_RE = re.compile(r"^(\d+)_(\d+)\.(png|jpg|jpeg|bmp)$", re.IGNORECASE)
CSV_HEADER = "frame_id,camera_id,class_id,score,x_min,y_min,x_max,y_max"


@dataclass(frozen=True)
class AdapterConfig:
    model: str = "blob"
    confidence_threshold: float = 0.5
    image_root: Path = Path(".")
    rig_path: Path | None = None
    output_csv: Path = Path("detections.csv")
    input_size: int | None = None  # detector input resolution; None = native

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError(f"threshold {self.confidence_threshold} outside [0, 1]")


def _iter_images(root: Path):
    for path in sorted(root.iterdir()):
        match = _NAME_RE.match(path.name)
        if match:
            yield int(match.group(1)), int(match.group(2)), path


def detect_directory(cfg: AdapterConfig) -> Path:
    """Run the detector over every image and write the detections CSV.

    Unreadable images are skipped with a warning; rows below the confidence
    threshold are dropped.
    """
    backend = load_backend(cfg.model, cfg.input_size)
    root = Path(cfg.image_root)
    rows: list[tuple[int, int, int, float, float, float, float, float]] = []
    for frame_id, camera_id, path in _iter_images(root):
        image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if image is None:
            log.warning("skipping unreadable image %s", path)
            continue
        for class_id, score, x0, y0, x1, y1 in backend(image):
            if score <= cfg.confidence_threshold:
                continue
            if not (x0 < x1 and y0 < y1):
                continue
            rows.append((frame_id, camera_id, class_id, min(score, 1.0), x0, y0, x1, y1))

    rows.sort()
    lines = [CSV_HEADER]
    lines.extend(
        f"{f},{c},{k},{s!r},{x0!r},{y0!r},{x1!r},{y1!r}"
        for f, c, k, s, x0, y0, x1, y1 in rows
    )
    out = Path(cfg.output_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("wrote %d detections to %s", len(rows), out)
    return out


def undistort_images(cfg: AdapterConfig, output_root) -> int:
    """Rectify every image against its camera's calibration.

    Returns the number of images written. Raises when an image references a
    camera missing from the rig or disagrees with its calibrated size.
    """
    if cfg.rig_path is None:
        raise ValueError("undistortion requires a rig path")
    cameras = read_calibration(cfg.rig_path)
    out_root = Path(output_root)
    out_root.mkdir(parents=True, exist_ok=True)

    from .rectify import rectify_image

    written = 0
    for frame_id, camera_id, path in _iter_images(Path(cfg.image_root)):
        if camera_id not in cameras:
            raise ValueError(f"{path.name}: camera {camera_id} not in calibration")
        image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if image is None:
            log.warning("skipping unreadable image %s", path)
            continue
        rectified = rectify_image(image, cameras[camera_id])
        cv2.imwrite(str(out_root / path.name), rectified)
        written += 1
    return written
