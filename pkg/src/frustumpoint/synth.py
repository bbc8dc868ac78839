"""Synthetic scenes with exact ground truth: simulated 32-ring scans over
boxes and cylinders, perfect pixel-aligned detections, and analytically
binned depth/label rasters. Every pipeline stage gets an oracle from here.

One ray is cast per raster bin (ring x azimuth step, at bin centers), so a
frame never exceeds rows*cols points and each return owns its raster bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, get_single, parse_keyvalue, read_keyvalue_file
from .detections import BBox, Detection, DetectionSet, NUM_CLASSES, serialize_detections
from .depthimage import (
    DEFAULT_SPEC,
    DepthImageSpec,
    DepthLabelImage,
    range_millimeters,
    write_raster,
)
from .geometry import Camera, CameraRig, DistortionCoeffs, Extrinsics, Intrinsics, save_rig, transform_point
from .labeling import LabeledCloud, PointCloud, write_cloud

__all__ = [
    "SceneObject",
    "SceneConfig",
    "GroundTruthBundle",
    "generate_scene",
    "labeled_ground_truth",
    "reference_rig",
    "parse_scene_config",
    "write_dataset",
]

_HIT_EPS = 1e-6
SCATTER_RANGE_M = (2.0, 24.0)
OBJECT_INTENSITY = 0.9
GROUND_INTENSITY = 0.4


@dataclass(frozen=True)
class SceneObject:
    """An axis-aligned box or a vertical cylinder.

    ``size`` gives full extents (x, y, z); cylinders use size[0] as the
    diameter and size[2] as the height.
    """

    class_id: int
    shape: str  # "box" | "cylinder"
    center: tuple[float, float, float]
    size: tuple[float, float, float]

    def __post_init__(self):
        if self.shape not in ("box", "cylinder"):
            raise ValueError(f"shape must be 'box' or 'cylinder', got {self.shape!r}")
        if not 0 <= self.class_id < NUM_CLASSES:
            raise ValueError(f"class_id {self.class_id} outside [0, {NUM_CLASSES})")
        if min(self.size) <= 0:
            raise ValueError(f"object has zero volume: size {self.size}")


@dataclass(frozen=True)
class SceneConfig:
    objects: tuple[SceneObject, ...]
    ground_z: float | None = None
    scatter: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.scatter < 0:
            raise ValueError(f"scatter count must be >= 0, got {self.scatter}")
        object.__setattr__(self, "objects", tuple(self.objects))


@dataclass(frozen=True, eq=False)
class GroundTruthBundle:
    """One synthetic frame: the cloud, its perfect detections, per-point
    ground-truth classes (-1 background), and the matching raster."""

    cloud: PointCloud
    detections: DetectionSet
    gt_class_ids: np.ndarray  # (n,) int16
    gt_raster: DepthLabelImage


def reference_rig() -> CameraRig:
    """Synthetic 5-camera omnidirectional rig around the lidar.

    Cameras look outward at 72 deg spacing, mounted 0.1 m off-axis and
    0.15 m below the sensor, with mild and slightly different barrel
    distortion per camera.
    """
    cameras = []
    for k in range(5):
        theta = math.radians(72.0 * k)
        c, s = math.cos(theta), math.sin(theta)
        rotation = np.array(
            [
                [s, -c, 0.0],  # camera x: right
                [0.0, 0.0, -1.0],  # camera y: down
                [c, s, 0.0],  # camera z: forward
            ]
        )
        center = np.array([0.1 * c, 0.1 * s, -0.15])
        translation = -rotation @ center
        intr = Intrinsics(fx=520.0, fy=520.0, cx=512.0, cy=384.0, width=1024, height=768)
        dist = DistortionCoeffs(
            k1=-0.12 - 0.01 * k,
            k2=0.035,
            k3=0.0,
            p1=0.0004,
            p2=-0.0003,
        )
        cameras.append(Camera(k, intr, dist, Extrinsics(rotation, translation)))
    return CameraRig(cameras)


def _ray_directions(spec: DepthImageSpec) -> np.ndarray:
    """(rows*cols, 3) unit directions at raster bin centers, row-major."""
    rows = np.arange(spec.rows)
    cols = np.arange(spec.cols)
    elev = np.radians(spec.elev_max_deg - (rows + 0.5) * spec.row_height_deg)
    azim = np.radians((cols + 0.5) * spec.col_width_deg)
    ce, se = np.cos(elev), np.sin(elev)
    ca, sa = np.cos(azim), np.sin(azim)
    dx = ce[:, None] * ca[None, :]
    dy = ce[:, None] * sa[None, :]
    dz = np.broadcast_to(se[:, None], dx.shape)
    return np.stack([dx, dy, dz], axis=-1).reshape(-1, 3)


def _intersect_box(dirs: np.ndarray, obj: SceneObject) -> np.ndarray:
    lo = np.array(obj.center) - np.array(obj.size) / 2.0
    hi = np.array(obj.center) + np.array(obj.size) / 2.0
    tmin = np.full(len(dirs), -np.inf)
    tmax = np.full(len(dirs), np.inf)
    for axis in range(3):
        d = dirs[:, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = lo[axis] / d
            t2 = hi[axis] / d
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        zero = d == 0.0
        if zero.any():
            inside = lo[axis] <= 0.0 <= hi[axis]
            near = np.where(zero, -np.inf if inside else np.inf, near)
            far = np.where(zero, np.inf if inside else -np.inf, far)
        tmin = np.maximum(tmin, near)
        tmax = np.minimum(tmax, far)
    hit = (tmax >= tmin) & (tmin > _HIT_EPS)
    return np.where(hit, tmin, np.inf)


def _intersect_cylinder(dirs: np.ndarray, obj: SceneObject) -> np.ndarray:
    cx, cy, cz = obj.center
    radius = obj.size[0] / 2.0
    half_h = obj.size[2] / 2.0
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]

    best = np.full(len(dirs), np.inf)
    # Side surface: |t*dxy - cxy| = radius, z within the height span.
    a = dx * dx + dy * dy
    b = -2.0 * (dx * cx + dy * cy)
    c = cx * cx + cy * cy - radius * radius
    disc = b * b - 4.0 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        sqrt_disc = np.sqrt(np.maximum(disc, 0.0))
        for sign in (-1.0, 1.0):
            t = (-b + sign * sqrt_disc) / (2.0 * a)
            valid = (disc >= 0.0) & (a > 0.0) & (t > _HIT_EPS) & (np.abs(t * dz - cz) <= half_h)
            best = np.where(valid & (t < best), t, best)
        # End caps.
        for z_cap in (cz - half_h, cz + half_h):
            t = z_cap / dz
            px = t * dx - cx
            py = t * dy - cy
            valid = (dz != 0.0) & (t > _HIT_EPS) & (px * px + py * py <= radius * radius)
            best = np.where(valid & (t < best), t, best)
    return best


def _perfect_detections(
    rig: CameraRig,
    xyz: np.ndarray,
    gt_object: np.ndarray,
    objects: tuple[SceneObject, ...],
    frame_id: int,
) -> DetectionSet:
    """Tight pixel-aligned boxes around each object's visible projections."""
    dets: list[Detection] = []
    pts64 = xyz.astype(np.float64)
    for cam in rig:
        p_cam = transform_point(cam.extrinsics, pts64) if len(pts64) else np.empty((0, 3))
        intr = cam.intrinsics
        for obj_index, obj in enumerate(objects):
            member = gt_object == obj_index
            if not member.any():
                continue
            p = p_cam[member]
            front = p[:, 2] > 0.0
            if not front.any():
                continue
            p = p[front]
            u = intr.fx * p[:, 0] / p[:, 2] + intr.cx
            v = intr.fy * p[:, 1] / p[:, 2] + intr.cy
            visible = (u >= 0.0) & (u < intr.width) & (v >= 0.0) & (v < intr.height)
            if not visible.any():
                continue
            u, v = u[visible], v[visible]
            box = BBox(
                math.floor(u.min()),
                math.floor(v.min()),
                math.floor(u.max()) + 1.0,
                math.floor(v.max()) + 1.0,
            )
            dets.append(Detection(frame_id, cam.camera_id, obj.class_id, 1.0, box))
    return DetectionSet(dets)


def generate_scene(
    cfg: SceneConfig,
    rig: CameraRig,
    frame_id: int = 0,
    timestamp: float = 0.0,
    spec: DepthImageSpec = DEFAULT_SPEC,
) -> GroundTruthBundle:
    """Cast one scan and assemble the ground-truth bundle.

    The first intersection along each ray wins; ground and scatter returns
    are background (-1). Scatter is realized as random ranges on randomly
    chosen empty rays, so the cloud never exceeds rows*cols points.
    """
    rng = np.random.default_rng(cfg.seed)
    dirs = _ray_directions(spec)
    n_rays = len(dirs)

    t_best = np.full(n_rays, np.inf)
    hit_object = np.full(n_rays, -1, np.int32)
    for obj_index, obj in enumerate(cfg.objects):
        t = _intersect_box(dirs, obj) if obj.shape == "box" else _intersect_cylinder(dirs, obj)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        hit_object = np.where(closer, obj_index, hit_object)

    is_ground = np.zeros(n_rays, dtype=bool)
    if cfg.ground_z is not None:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = cfg.ground_z / dz
        t = np.where((dz != 0.0) & (t > _HIT_EPS), t, np.inf)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        hit_object = np.where(closer, -1, hit_object)
        is_ground = closer

    intensity = np.where(hit_object >= 0, OBJECT_INTENSITY, GROUND_INTENSITY)
    if cfg.scatter > 0:
        empty = np.flatnonzero(~np.isfinite(t_best))
        count = min(cfg.scatter, len(empty))
        if count:
            chosen = rng.choice(empty, size=count, replace=False)
            t_best[chosen] = rng.uniform(*SCATTER_RANGE_M, size=count)
            intensity[chosen] = rng.uniform(0.0, 1.0, size=count)

    returned = np.flatnonzero(np.isfinite(t_best))
    xyz = (t_best[returned, None] * dirs[returned]).astype(np.float32)
    cloud = PointCloud(xyz, intensity[returned].astype(np.float32), frame_id, timestamp)
    gt_object = hit_object[returned]
    gt_class = np.full(len(returned), -1, np.int16)
    for obj_index, obj in enumerate(cfg.objects):
        gt_class[gt_object == obj_index] = obj.class_id

    detections = _perfect_detections(rig, cloud.xyz, gt_object, cfg.objects, frame_id)

    # The raster is built from the construction itself: ray index encodes the
    # bin, depth is quantized from the stored float32 point.
    depth_img = np.zeros((spec.rows, spec.cols), np.uint16)
    label_img = np.full((spec.rows, spec.cols), -1, np.int16)
    depth = range_millimeters(cloud.xyz, spec.range_max_mm)
    usable = depth > 0
    rows = returned[usable] // spec.cols
    cols = returned[usable] % spec.cols
    depth_img[rows, cols] = depth[usable].astype(np.uint16)
    label_img[rows, cols] = gt_class[usable]

    return GroundTruthBundle(
        cloud=cloud,
        detections=detections,
        gt_class_ids=gt_class,
        gt_raster=DepthLabelImage(depth_img, label_img),
    )


def labeled_ground_truth(bundle: GroundTruthBundle) -> LabeledCloud:
    """The bundle's cloud carrying its ground-truth classes (no detections)."""
    n = len(bundle.cloud)
    return LabeledCloud(bundle.cloud, bundle.gt_class_ids, np.full(n, -1, np.int32))


# ---------------------------------------------------------------------------
# Scene config files and dataset emission
# ---------------------------------------------------------------------------


def parse_scene_config(path) -> tuple[SceneConfig, int, str | None]:
    """Read a scene config; returns (config, frame count, rig path or None).

    Keys: repeated ``object = class_id,shape,cx,cy,cz,sx,sy,sz`` plus
    optional ``ground_z``, ``scatter``, ``seed``, ``frames``, ``rig``.
    """
    kv = read_keyvalue_file(path)
    objects = []
    for value in kv.get("object", []):
        fields = [f.strip() for f in value.split(",")]
        if len(fields) != 8:
            raise ConfigError(f"object needs 8 fields, got {len(fields)}: {value!r}")
        try:
            objects.append(
                SceneObject(
                    class_id=int(fields[0]),
                    shape=fields[1],
                    center=(float(fields[2]), float(fields[3]), float(fields[4])),
                    size=(float(fields[5]), float(fields[6]), float(fields[7])),
                )
            )
        except ValueError as exc:
            raise ConfigError(f"bad object {value!r}: {exc}") from None
    ground = get_single(kv, "ground_z")
    scatter = get_single(kv, "scatter", "0")
    seed = get_single(kv, "seed", "0")
    frames = get_single(kv, "frames", "1")
    rig_path = get_single(kv, "rig")
    try:
        cfg = SceneConfig(
            objects=tuple(objects),
            ground_z=float(ground) if ground is not None else None,
            scatter=int(scatter),
            seed=int(seed),
        )
        n_frames = int(frames)
    except ValueError as exc:
        raise ConfigError(f"bad scene config value: {exc}") from None
    if n_frames < 0:
        raise ConfigError(f"frames must be >= 0, got {n_frames}")
    return cfg, n_frames, rig_path


def write_dataset(
    cfg: SceneConfig,
    out_dir,
    n_frames: int,
    rig: CameraRig | None = None,
    frame_dt: float = 0.1,
    spec: DepthImageSpec = DEFAULT_SPEC,
) -> Path:
    """Emit a full synthetic dataset: rig file, manifest, FPC1 clouds, the
    detections CSV, and ground-truth rasters under gt/.

    Objects stay put across frames; the scatter stream differs per frame.
    """
    out = Path(out_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    if rig is None:
        rig = reference_rig()
    save_rig(rig, out / "rig.txt")

    manifest = ["frame_id,timestamp,cloud_file"]
    all_dets = []
    for frame in range(n_frames):
        frame_seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(frame,)).generate_state(1)[0])
        bundle = generate_scene(
            replace(cfg, seed=frame_seed), rig, frame_id=frame, timestamp=frame * frame_dt, spec=spec
        )
        cloud_name = f"frame_{frame:06d}.fpc"
        write_cloud(bundle.cloud, out / "clouds" / cloud_name)
        manifest.append(f"{frame},{frame * frame_dt!r},clouds/{cloud_name}")
        all_dets.extend(bundle.detections)
        write_raster(
            bundle.gt_raster,
            out / "gt" / f"frame_{frame:06d}_depth.png",
            out / "gt" / f"frame_{frame:06d}_label.png",
        )
    (out / "manifest.csv").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    (out / "detections.csv").write_text(serialize_detections(all_dets), encoding="utf-8")
    return out
