"""Dataset ingestion, frame association, and orchestration of the full
label -> refine -> render -> eval flow.

Dataset layout: ``manifest.csv`` (frame_id,timestamp,cloud_file) next to a
``clouds/`` directory of FPC1 files and one detections CSV. Detection frame
ids are matched to cloud frames directly; when the optional
``detections_manifest.csv`` (frame_id,timestamp) is present, association is
nearest-timestamp within a configurable skew instead.
"""

from __future__ import annotations

import logging
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import (
    DropRateSummary,
    KMeansConfig,
    RefinementStats,
    aggregate_drop_rate,
    refine_frustum,
)
from .config import ConfigError, get_single, parse_bool, read_keyvalue_file
from .detections import DetectionSet, filter_oversized, parse_detections
from .depthimage import DEFAULT_SPEC, DepthImageSpec, read_raster, render, write_raster
from .errors import DatasetError, ParseError
from .evaluation import EvalReport, TimingReport, accumulate, benchmark, compare
from .geometry import CameraRig, load_rig
from .labeling import LabeledCloud, extract_frustum, label_points, read_cloud

log = logging.getLogger("frustumpoint")

__all__ = [
    "PipelineConfig",
    "FrameEntry",
    "FrameIndex",
    "FrameOutput",
    "PipelineResult",
    "load_pipeline_config",
    "read_manifest",
    "build_frame_index",
    "process_frame",
    "run_pipeline",
    "run_eval",
]

STATS_HEADER = "frame_id,detection_index,class_id,points_before,points_after,drop_rate"
TIMING_HEADER = "frame_id,seconds"


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved run configuration; paths are absolute by load time."""

    rig_path: Path
    dataset_root: Path
    detections_path: Path
    output_root: Path
    kmeans: KMeansConfig = field(default_factory=KMeansConfig)
    oversized_ratio: float = 0.25
    worker_count: int = 5
    max_skew_seconds: float = 0.05
    clustering_enabled: bool = True

    def __post_init__(self):
        if self.worker_count < 1:
            raise ConfigError(f"worker_count must be >= 1, got {self.worker_count}")
        if not 0.0 < self.oversized_ratio <= 1.0:
            raise ConfigError(f"oversized_ratio must be in (0, 1], got {self.oversized_ratio}")
        if self.max_skew_seconds < 0:
            raise ConfigError(f"max_skew_seconds must be >= 0, got {self.max_skew_seconds}")


_KMEANS_KEYS = {"kmeans.k", "kmeans.max_iter", "kmeans.tol", "kmeans.seed", "kmeans.restarts", "kmeans.selection"}
_CONFIG_KEYS = {
    "rig",
    "dataset",
    "detections",
    "output",
    "oversized_ratio",
    "worker_count",
    "max_skew_seconds",
    "clustering_enabled",
} | _KMEANS_KEYS


def load_pipeline_config(path, overrides: Sequence[str] = ()) -> PipelineConfig:
    """Load a pipeline config file, applying ``key=value`` overrides.

    Relative paths resolve against the config file's directory.
    """
    path = Path(path)
    kv = read_keyvalue_file(path)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        kv[key.strip()] = [value.strip()]

    unknown = set(kv) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    base = path.parent

    def resolve(key: str, default: str | None = None) -> Path:
        value = get_single(kv, key, default)
        if value is None:
            raise ConfigError(f"missing required config key {key!r}")
        p = Path(value)
        return p if p.is_absolute() else (base / p).resolve()

    dataset_root = resolve("dataset")
    try:
        kmeans = KMeansConfig(
            k=int(get_single(kv, "kmeans.k", "3")),
            max_iter=int(get_single(kv, "kmeans.max_iter", "100")),
            tol=float(get_single(kv, "kmeans.tol", "1e-4")),
            seed=int(get_single(kv, "kmeans.seed", "0")),
            restarts=int(get_single(kv, "kmeans.restarts", "5")),
            selection=get_single(kv, "kmeans.selection", "nearest"),
        )
        return PipelineConfig(
            rig_path=resolve("rig"),
            dataset_root=dataset_root,
            detections_path=(
                resolve("detections") if "detections" in kv else dataset_root / "detections.csv"
            ),
            output_root=resolve("output"),
            kmeans=kmeans,
            oversized_ratio=float(get_single(kv, "oversized_ratio", "0.25")),
            worker_count=int(get_single(kv, "worker_count", "5")),
            max_skew_seconds=float(get_single(kv, "max_skew_seconds", "0.05")),
            clustering_enabled=parse_bool(get_single(kv, "clustering_enabled", "true"), "clustering_enabled"),
        )
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from None


@dataclass(frozen=True)
class FrameEntry:
    """One indexed frame: its cloud file plus the associated detection group
    (None when no group lies within the association skew)."""

    frame_id: int
    timestamp: float
    cloud_path: Path
    detection_frame_id: int | None


@dataclass(frozen=True)
class FrameIndex:
    entries: tuple[FrameEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def read_manifest(dataset_root) -> list[tuple[int, float, Path]]:
    """Parse manifest.csv -> [(frame_id, timestamp, cloud_path)] in file order."""
    root = Path(dataset_root)
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise DatasetError(f"manifest not found: {manifest}")
    rows: list[tuple[int, float, Path]] = []
    seen: set[int] = set()
    for lineno, raw in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if lineno == 1 and line.startswith("frame_id"):
            continue
        fields = line.split(",")
        if len(fields) != 3:
            raise ParseError(f"manifest expects 3 fields, got {len(fields)}", line=lineno)
        try:
            frame_id = int(fields[0])
            timestamp = float(fields[1])
        except ValueError:
            raise ParseError(f"bad manifest row {line!r}", line=lineno) from None
        if frame_id in seen:
            raise ParseError(f"duplicate frame_id {frame_id} in manifest", line=lineno)
        seen.add(frame_id)
        rows.append((frame_id, timestamp, root / fields[2]))
    return rows


def _read_detection_timestamps(dataset_root) -> dict[int, float] | None:
    path = Path(dataset_root) / "detections_manifest.csv"
    if not path.is_file():
        return None
    out: dict[int, float] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if lineno == 1 and line.startswith("frame_id"):
            continue
        fields = line.split(",")
        if len(fields) != 2:
            raise ParseError(f"detections manifest expects 2 fields, got {len(fields)}", line=lineno)
        try:
            out[int(fields[0])] = float(fields[1])
        except ValueError:
            raise ParseError(f"bad detections manifest row {line!r}", line=lineno) from None
    return out


def build_frame_index(dataset_root, detections: DetectionSet, max_skew: float) -> FrameIndex:
    """Associate each manifest frame with at most one detection group.

    Without a detections manifest, group frame ids match cloud frame ids
    directly. With one, groups pair to clouds greedily by smallest timestamp
    distance within ``max_skew``; equidistant candidates resolve to the
    earlier group timestamp, and each group serves at most one cloud.
    """
    rows = read_manifest(dataset_root)
    det_ts = _read_detection_timestamps(dataset_root)
    group_ids = detections.frame_ids()

    if det_ts is None:
        have = set(group_ids)
        entries = [
            FrameEntry(fid, ts, cloud, fid if fid in have else None) for fid, ts, cloud in rows
        ]
        return FrameIndex(tuple(entries))

    missing = [gid for gid in group_ids if gid not in det_ts]
    if missing:
        raise DatasetError(f"detection frames missing from detections_manifest.csv: {missing}")

    # Candidate (cloud, group) pairs within skew, via a sorted timestamp scan.
    groups = sorted(group_ids, key=lambda g: (det_ts[g], g))
    group_times = [det_ts[g] for g in groups]
    candidates: list[tuple[float, float, int, int]] = []
    for fid, ts, _cloud in rows:
        lo = bisect_left(group_times, ts - max_skew)
        i = lo
        while i < len(groups) and group_times[i] <= ts + max_skew:
            candidates.append((abs(ts - group_times[i]), group_times[i], fid, groups[i]))
            i += 1
    candidates.sort()

    assigned: dict[int, int] = {}
    used_groups: set[int] = set()
    for _dist, _gts, fid, gid in candidates:
        if fid in assigned or gid in used_groups:
            continue
        assigned[fid] = gid
        used_groups.add(gid)

    entries = [FrameEntry(fid, ts, cloud, assigned.get(fid)) for fid, ts, cloud in rows]
    return FrameIndex(tuple(entries))


@dataclass(frozen=True, eq=False)
class FrameOutput:
    """Per-frame result: the refined labeling, its raster, and stats rows."""

    frame_id: int
    labeled: LabeledCloud
    stats_rows: tuple[tuple[int, int, int, int, int, float], ...]
    frame_stats: RefinementStats | None


def process_frame(
    entry: FrameEntry,
    rig: CameraRig,
    detections: DetectionSet,
    kmeans_cfg: KMeansConfig,
    clustering_enabled: bool,
    spec: DepthImageSpec = DEFAULT_SPEC,
):
    """label -> (refine) -> render for one frame; returns (FrameOutput, raster)."""
    cloud = read_cloud(entry.cloud_path, frame_id=entry.frame_id, timestamp=entry.timestamp)
    frame_dets = (
        detections.frame_group(entry.detection_frame_id)
        if entry.detection_frame_id is not None
        else ()
    )
    lc = label_points(cloud, rig, frame_dets)

    stats_rows: list[tuple[int, int, int, int, int, float]] = []
    frame_stats: RefinementStats | None = None
    if clustering_enabled and frame_dets:
        xyz = cloud.xyz.astype(np.float64)
        class_ids = lc.class_ids.copy()
        det_indices = lc.detection_indices.copy()
        total_before = 0
        total_after = 0
        for det_index, det in enumerate(frame_dets):
            idxs = extract_frustum(lc, det_index)
            if len(idxs) == 0:
                stats_rows.append((entry.frame_id, det_index, det.class_id, 0, 0, 0.0))
                continue
            rng = np.random.default_rng(
                np.random.SeedSequence(kmeans_cfg.seed, spawn_key=(entry.frame_id, det_index))
            )
            kept_rel, stats = refine_frustum(xyz[idxs], kmeans_cfg, rng=rng)
            dropped = np.setdiff1d(idxs, idxs[kept_rel], assume_unique=True)
            class_ids[dropped] = -1
            det_indices[dropped] = -1
            total_before += stats.points_before
            total_after += stats.points_after
            stats_rows.append(
                (
                    entry.frame_id,
                    det_index,
                    det.class_id,
                    stats.points_before,
                    stats.points_after,
                    stats.drop_rate,
                )
            )
        lc = LabeledCloud(cloud, class_ids, det_indices, num_detections=len(frame_dets))
        frame_stats = RefinementStats.from_counts(total_before, total_after)

    raster = render(lc, spec)
    return FrameOutput(entry.frame_id, lc, tuple(stats_rows), frame_stats), raster


@dataclass(frozen=True, eq=False)
class PipelineResult:
    exit_code: int
    frames_processed: int
    frames_failed: int
    failures: tuple[tuple[int, str], ...]
    timing: TimingReport
    drop_summary: DropRateSummary
    output_root: Path


def run_pipeline(cfg: PipelineConfig, spec: DepthImageSpec = DEFAULT_SPEC) -> PipelineResult:
    """Run the full pipeline over a dataset.

    Setup problems raise ConfigError/DatasetError; per-frame failures are
    logged and counted without aborting, yielding exit code 1.
    """
    rig = load_rig(cfg.rig_path)
    if not cfg.detections_path.is_file():
        raise DatasetError(f"detections file not found: {cfg.detections_path}")
    detections = parse_detections(cfg.detections_path.read_text(encoding="utf-8"))
    detections = filter_oversized(detections, rig.intrinsics_by_id(), cfg.oversized_ratio)
    index = build_frame_index(cfg.dataset_root, detections, cfg.max_skew_seconds)

    out = Path(cfg.output_root)
    raster_dir = out / "rasters"
    raster_dir.mkdir(parents=True, exist_ok=True)

    def work(entry: FrameEntry):
        try:
            output, raster = process_frame(
                entry, rig, detections, cfg.kmeans, cfg.clustering_enabled, spec
            )
            write_raster(
                raster,
                raster_dir / f"frame_{entry.frame_id:06d}_depth.png",
                raster_dir / f"frame_{entry.frame_id:06d}_label.png",
            )
            return output
        except Exception as exc:  # per-frame isolation
            log.error("frame %d failed: %s", entry.frame_id, exc)
            return (entry.frame_id, str(exc))

    results, timing = benchmark(list(index), work, worker_count=cfg.worker_count)

    failures: list[tuple[int, str]] = []
    stats_lines = [STATS_HEADER]
    frame_stats: list[RefinementStats] = []
    for res in results:
        if isinstance(res, tuple):
            failures.append(res)
            continue
        for row in res.stats_rows:
            fid, det_index, class_id, before, after, rate = row
            stats_lines.append(f"{fid},{det_index},{class_id},{before},{after},{rate!r}")
        if res.frame_stats is not None:
            frame_stats.append(res.frame_stats)

    (out / "refinement_stats.csv").write_text("\n".join(stats_lines) + "\n", encoding="utf-8")

    summary = aggregate_drop_rate(frame_stats)
    summary_lines = [
        f"frames_refined = {len(frame_stats)}",
        f"mean_drop_rate = {summary.mean!r}",
        f"min_drop_rate = {summary.min!r}",
        f"max_drop_rate = {summary.max!r}",
    ]
    (out / "drop_rate_summary.txt").write_text("\n".join(summary_lines) + "\n", encoding="utf-8")

    timing_lines = [TIMING_HEADER]
    timing_lines.extend(
        f"{entry.frame_id},{seconds!r}" for entry, seconds in zip(index, timing.per_frame)
    )
    (out / "timing.csv").write_text("\n".join(timing_lines) + "\n", encoding="utf-8")

    processed = len(results) - len(failures)
    log.info(
        "pipeline done: %d frames ok, %d failed, mean %.4fs/frame (%d workers)",
        processed,
        len(failures),
        timing.mean,
        cfg.worker_count,
    )
    return PipelineResult(
        exit_code=1 if failures else 0,
        frames_processed=processed,
        frames_failed=len(failures),
        failures=tuple(failures),
        timing=timing,
        drop_summary=summary,
        output_root=out,
    )


# ---------------------------------------------------------------------------
# Evaluation runner
# ---------------------------------------------------------------------------

_LABEL_SUFFIX = "_label.png"
_DEPTH_SUFFIX = "_depth.png"


def _raster_stems(root: Path) -> set[str]:
    return {p.name[: -len(_LABEL_SUFFIX)] for p in root.glob(f"*{_LABEL_SUFFIX}")}


def run_eval(pred_root, gt_root, output_dir=None) -> EvalReport:
    """Compare label rasters between two roots pairwise and micro-average.

    Files pair by name (<stem>_depth.png / <stem>_label.png). Unmatched
    stems on either side raise a DatasetError naming them.
    """
    pred_root = Path(pred_root)
    gt_root = Path(gt_root)
    if not pred_root.is_dir():
        raise DatasetError(f"prediction root not found: {pred_root}")
    if not gt_root.is_dir():
        raise DatasetError(f"ground truth root not found: {gt_root}")
    pred_stems = _raster_stems(pred_root)
    gt_stems = _raster_stems(gt_root)
    unmatched = sorted(pred_stems ^ gt_stems)
    if unmatched:
        raise DatasetError(f"unpaired rasters between roots: {unmatched}")

    counts = []
    for stem in sorted(pred_stems):
        pred = read_raster(pred_root / f"{stem}{_DEPTH_SUFFIX}", pred_root / f"{stem}{_LABEL_SUFFIX}")
        gt = read_raster(gt_root / f"{stem}{_DEPTH_SUFFIX}", gt_root / f"{stem}{_LABEL_SUFFIX}")
        counts.append(compare(pred, gt))
    report = accumulate(counts)

    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
        rows = ["class_id,class_name,tp,fp,fn,precision,recall"]
        from .detections import class_name

        for cc in report.per_class:
            if cc.tp or cc.fp or cc.fn:
                rows.append(
                    f"{cc.class_id},{class_name(cc.class_id)},{cc.tp},{cc.fp},{cc.fn},"
                    f"{cc.precision!r},{cc.recall!r}"
                )
        (out / "per_class.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return report
