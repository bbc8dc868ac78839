"""CLI: `detect` emits the detections CSV, `rectify` undistorts a directory."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .adapter import AdapterConfig, detect_directory, undistort_images
from .backends import ModelLoadError
from .calibration import CalibrationFileError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detector-adapter",
        description="Run a 2D detector over camera images and emit the "
        "detections CSV consumed by the frustumpoint pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect objects and write the CSV")
    p.add_argument("--model", default="blob", help="'blob' or 'torchvision:<model>'")
    p.add_argument("--images", required=True, help="directory of <frame>_<camera>.<ext> images")
    p.add_argument("--rig", help="calibration file (kept with the dataset)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--input-size", type=int, help="detector input resolution (default native)")
    p.add_argument("--output", required=True, help="detections CSV path")

    p = sub.add_parser("rectify", help="undistort a directory of images")
    p.add_argument("--images", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--output", required=True, help="directory for rectified images")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FP_LOG", "INFO").upper())
    args = build_parser().parse_args(argv)
    try:
        if args.command == "detect":
            cfg = AdapterConfig(
                model=args.model,
                confidence_threshold=args.threshold,
                image_root=Path(args.images),
                rig_path=Path(args.rig) if args.rig else None,
                output_csv=Path(args.output),
                input_size=args.input_size,
            )
            detect_directory(cfg)
        else:
            cfg = AdapterConfig(image_root=Path(args.images), rig_path=Path(args.rig))
            count = undistort_images(cfg, args.output)
            logging.getLogger("detector_adapter").info("rectified %d images", count)
        return 0
    except (ModelLoadError, CalibrationFileError, ValueError, OSError) as exc:
        logging.getLogger("detector_adapter").error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
