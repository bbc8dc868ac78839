"""Detector backends.

A backend is a callable taking one BGR/grayscale uint8 image and returning
``(class_id, score, x_min, y_min, x_max, y_max)`` tuples in 80-class COCO
indexing. The pipeline contract is only the CSV, so any detector can slot in:

- ``blob``: threshold + connected components; classifies by mean intensity.
  Deterministic and dependency-free, meant for synthetic scenes and tests.
- ``torchvision:<model>``: a pretrained torchvision detection model (e.g.
  ``torchvision:fasterrcnn_resnet50_fpn``); requires torch weights locally.
"""

from __future__ import annotations

from typing import Callable, Iterable

import cv2
import numpy as np

from .coco import COCO91_TO_80

__all__ = ["Backend", "ModelLoadError", "load_backend", "blob_backend"]

Backend = Callable[[np.ndarray], Iterable[tuple[int, float, float, float, float, float]]]

BLOB_THRESHOLD = 64
BLOB_MIN_AREA = 32


class ModelLoadError(RuntimeError):
    pass


def blob_backend(image: np.ndarray):
    """Detect bright connected components on a dark background.

    class_id = round(mean intensity) mod 80; score scales with brightness in
    [0.5, 1.0].
    """
    gray = cv2.cvtColor(image, cv2.COLOR_BGR2GRAY) if image.ndim == 3 else image
    _, binary = cv2.threshold(gray, BLOB_THRESHOLD, 255, cv2.THRESH_BINARY)
    count, labels, stats, _ = cv2.connectedComponentsWithStats(binary, connectivity=8)
    out = []
    for cid in range(1, count):  # 0 is background
        x, y, w, h, area = stats[cid]
        if area < BLOB_MIN_AREA or w < 2 or h < 2:
            continue
        mean = float(gray[labels == cid].mean())
        class_id = int(round(mean)) % 80
        score = min(1.0, 0.5 + mean / 510.0)
        out.append((class_id, score, float(x), float(y), float(x + w), float(y + h)))
    return out


def _torchvision_backend(model_name: str, input_size: int | None) -> Backend:
    try:
        import torch
        import torchvision
    except ImportError as exc:
        raise ModelLoadError(f"torch/torchvision not available: {exc}") from None
    try:
        factory = getattr(torchvision.models.detection, model_name)
        model = factory(weights="DEFAULT")
    except Exception as exc:
        raise ModelLoadError(f"could not load {model_name!r}: {exc}") from None
    model.eval()

    def run(image: np.ndarray):
        bgr = image if image.ndim == 3 else cv2.cvtColor(image, cv2.COLOR_GRAY2BGR)
        rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
        scale = 1.0
        if input_size is not None:
            scale = input_size / max(rgb.shape[:2])
            rgb = cv2.resize(rgb, None, fx=scale, fy=scale, interpolation=cv2.INTER_LINEAR)
        tensor = torch.from_numpy(rgb).permute(2, 0, 1).float() / 255.0
        with torch.no_grad():
            pred = model([tensor])[0]
        out = []
        for box, label, score in zip(
            pred["boxes"].numpy(), pred["labels"].numpy(), pred["scores"].numpy()
        ):
            class_id = COCO91_TO_80.get(int(label))
            if class_id is None:
                continue
            x0, y0, x1, y1 = (float(v) / scale for v in box)
            out.append((class_id, float(score), x0, y0, x1, y1))
        return out

    return run


def load_backend(model: str, input_size: int | None = None) -> Backend:
    """Resolve a model identifier to a backend callable."""
    if model == "blob":
        return blob_backend
    if model.startswith("torchvision:"):
        return _torchvision_backend(model.split(":", 1)[1], input_size)
    raise ModelLoadError(f"unknown model identifier {model!r}")
