"""frustumpoint: lidar point-cloud labeling from 2D camera detections.

Projects lidar points into calibrated cameras, keeps points inside detection
boxes, strips background with seeded k-means, renders 32x1024 spherical
depth/label rasters, and scores them pixelwise against ground truth.
"""

from .clustering import (
    ClusterResult,
    DropRateSummary,
    KMeansConfig,
    RefinementStats,
    aggregate_drop_rate,
    kmeans,
    refine_frustum,
)
from .detections import (
    BBox,
    COCO_CLASS_NAMES,
    Detection,
    DetectionSet,
    class_name,
    filter_oversized,
    parse_detections,
    serialize_detections,
)
from .depthimage import (
    DEFAULT_SPEC,
    DepthImageSpec,
    DepthLabelImage,
    read_raster,
    render,
    spherical_bin,
    write_raster,
)
from .errors import ConfigError, DatasetError, FrustumPointError, ParseError
from .evaluation import ConfusionCounts, EvalReport, TimingReport, accumulate, benchmark, compare
from .geometry import (
    Camera,
    CameraRig,
    DistortionCoeffs,
    Extrinsics,
    Intrinsics,
    compute_undistort_map,
    distort,
    load_rig,
    project_pinhole,
    save_rig,
    transform_point,
    undistort_point,
)
from .labeling import (
    LabeledCloud,
    PointCloud,
    extract_frustum,
    label_points,
    read_cloud,
    read_labels,
    write_cloud,
    write_labels,
)
from .pipeline import (
    FrameIndex,
    PipelineConfig,
    build_frame_index,
    load_pipeline_config,
    run_eval,
    run_pipeline,
)
from .synth import GroundTruthBundle, SceneConfig, SceneObject, generate_scene, reference_rig

__version__ = "0.1.0"
