"""detector_adapter: batch 2D detection and image rectification feeding the
frustumpoint pipeline through its detections CSV format."""

from .adapter import AdapterConfig, detect_directory, undistort_images
from .backends import ModelLoadError, load_backend
from .calibration import CameraCalibration, read_calibration
from .coco import COCO91_TO_80, COCO_CLASS_NAMES
from .rectify import build_undistort_maps, rectify_image

__version__ = "0.1.0"
