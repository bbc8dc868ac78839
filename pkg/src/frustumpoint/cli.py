"""Command-line entry point.

Subcommands: run (full pipeline), label, refine, render, eval, bench, synth.
Every stage is also invocable standalone on its file artifacts. Exit codes:
0 success, 1 partial per-frame failure, 2 config/dataset error. Set FP_LOG
to control log verbosity (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .clustering import KMeansConfig, SELECTION_MODES, refine_frustum
from .detections import filter_oversized, parse_detections
from .depthimage import read_raster, render, write_raster
from .errors import FrustumPointError
from .evaluation import benchmark
from .geometry import load_rig
from .labeling import (
    LabeledCloud,
    extract_frustum,
    label_points,
    read_cloud,
    read_labels,
    write_labels,
)
from .pipeline import (
    STATS_HEADER,
    TIMING_HEADER,
    load_pipeline_config,
    process_frame,
    build_frame_index,
    run_eval,
    run_pipeline,
)
from .synth import parse_scene_config, reference_rig, write_dataset

log = logging.getLogger("frustumpoint")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def _add_kmeans_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=3, help="cluster count")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--selection", choices=SELECTION_MODES, default="nearest")


def _kmeans_from_args(args) -> KMeansConfig:
    return KMeansConfig(
        k=args.k,
        max_iter=args.max_iter,
        tol=args.tol,
        seed=args.seed,
        restarts=args.restarts,
        selection=args.selection,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frustumpoint",
        description="Label lidar clouds from 2D detections, refine with k-means, "
        "render spherical depth/label rasters, and evaluate pixelwise.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline over a dataset")
    p.add_argument("--config", required=True, help="pipeline config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("label", help="label one cloud from a detections CSV")
    p.add_argument("--rig", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--frame-id", type=int, default=0)
    p.add_argument("--oversized-ratio", type=float, default=0.25)
    p.add_argument("--output", required=True, help="labels file (FPL1)")

    p = sub.add_parser("refine", help="k-means refine an existing labels file")
    p.add_argument("--cloud", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--frame-id", type=int, default=0)
    p.add_argument("--output", required=True, help="refined labels file (FPL1)")
    p.add_argument("--stats", help="refinement stats CSV")
    _add_kmeans_flags(p)

    p = sub.add_parser("render", help="rasterize a labeled cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--depth-out", required=True)
    p.add_argument("--label-out", required=True)

    p = sub.add_parser("eval", help="score predicted rasters against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--output", help="directory for report.txt and per_class.csv")

    p = sub.add_parser("bench", help="time label/refine/render over a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--timing-out", help="timing CSV path (default <output>/bench_timing.csv)")

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    p.add_argument("--scene", required=True, help="scene config file")
    p.add_argument("--output", required=True, help="dataset directory to create")

    return parser


def _cmd_run(args) -> int:
    cfg = load_pipeline_config(args.config, args.overrides)
    result = run_pipeline(cfg)
    return EXIT_PARTIAL if result.exit_code else EXIT_OK


def _cmd_label(args) -> int:
    rig = load_rig(args.rig)
    dets = parse_detections(Path(args.detections).read_text(encoding="utf-8"))
    dets = filter_oversized(dets, rig.intrinsics_by_id(), args.oversized_ratio)
    cloud = read_cloud(args.cloud, frame_id=args.frame_id)
    lc = label_points(cloud, rig, dets.frame_group(args.frame_id))
    write_labels(lc, args.output)
    log.info("labeled %d of %d points", int(lc.labeled_mask.sum()), len(lc))
    return EXIT_OK


def _cmd_refine(args) -> int:
    cloud = read_cloud(args.cloud, frame_id=args.frame_id)
    class_ids, det_indices = read_labels(args.labels)
    dets = parse_detections(Path(args.detections).read_text(encoding="utf-8"))
    frame_dets = dets.frame_group(args.frame_id)
    lc = LabeledCloud(cloud, class_ids, det_indices, num_detections=len(frame_dets))
    cfg = _kmeans_from_args(args)

    xyz = cloud.xyz.astype(np.float64)
    new_class = lc.class_ids.copy()
    new_det = lc.detection_indices.copy()
    stats_lines = [STATS_HEADER]
    for det_index, det in enumerate(frame_dets):
        idxs = extract_frustum(lc, det_index)
        if len(idxs) == 0:
            stats_lines.append(f"{args.frame_id},{det_index},{det.class_id},0,0,0.0")
            continue
        rng = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(args.frame_id, det_index))
        )
        kept_rel, stats = refine_frustum(xyz[idxs], cfg, rng=rng)
        dropped = np.setdiff1d(idxs, idxs[kept_rel], assume_unique=True)
        new_class[dropped] = -1
        new_det[dropped] = -1
        stats_lines.append(
            f"{args.frame_id},{det_index},{det.class_id},"
            f"{stats.points_before},{stats.points_after},{stats.drop_rate!r}"
        )
    refined = LabeledCloud(cloud, new_class, new_det, num_detections=len(frame_dets))
    write_labels(refined, args.output)
    if args.stats:
        Path(args.stats).write_text("\n".join(stats_lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_render(args) -> int:
    cloud = read_cloud(args.cloud)
    class_ids, det_indices = read_labels(args.labels)
    lc = LabeledCloud(cloud, class_ids, det_indices)
    write_raster(render(lc), args.depth_out, args.label_out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    report = run_eval(args.pred, args.gt, args.output)
    for line in report.lines():
        print(line)
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = load_pipeline_config(args.config, args.overrides)
    rig = load_rig(cfg.rig_path)
    dets = parse_detections(cfg.detections_path.read_text(encoding="utf-8"))
    dets = filter_oversized(dets, rig.intrinsics_by_id(), cfg.oversized_ratio)
    index = build_frame_index(cfg.dataset_root, dets, cfg.max_skew_seconds)

    def work(entry):
        process_frame(entry, rig, dets, cfg.kmeans, cfg.clustering_enabled)

    _, timing = benchmark(list(index), work, worker_count=cfg.worker_count)
    print(f"frames = {len(timing.per_frame)}")
    print(f"workers = {timing.worker_count}")
    print(f"mean_seconds = {timing.mean:.6f}")
    print(f"p50_seconds = {timing.p50:.6f}")
    print(f"p95_seconds = {timing.p95:.6f}")
    timing_out = Path(args.timing_out) if args.timing_out else cfg.output_root / "bench_timing.csv"
    timing_out.parent.mkdir(parents=True, exist_ok=True)
    lines = [TIMING_HEADER]
    lines.extend(f"{e.frame_id},{s!r}" for e, s in zip(index, timing.per_frame))
    timing_out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_synth(args) -> int:
    cfg, n_frames, rig_path = parse_scene_config(args.scene)
    rig = load_rig(rig_path) if rig_path else reference_rig()
    out = write_dataset(cfg, args.output, n_frames, rig=rig)
    log.info("wrote %d-frame synthetic dataset to %s", n_frames, out)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "label": _cmd_label,
    "refine": _cmd_refine,
    "render": _cmd_render,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("FP_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FrustumPointError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
