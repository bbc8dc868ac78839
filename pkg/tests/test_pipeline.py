import numpy as np
import pytest

from frustumpoint.cli import main
from frustumpoint.config import ConfigError
from frustumpoint.detections import BBox, Detection, DetectionSet, parse_detections, serialize_detections
from frustumpoint.errors import DatasetError
from frustumpoint.geometry import save_rig, transform_point
from frustumpoint.labeling import PointCloud, write_cloud
from frustumpoint.pipeline import (
    build_frame_index,
    load_pipeline_config,
    read_manifest,
    run_eval,
    run_pipeline,
)
from frustumpoint.synth import SceneConfig, SceneObject, reference_rig, write_dataset


def write_pipeline_config(path, dataset, output, **extra):
    lines = [
        f"rig = {dataset}/rig.txt",
        f"dataset = {dataset}",
        f"output = {output}",
        "worker_count = 2",
        "kmeans.k = 2",
        "kmeans.seed = 0",
    ]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="module")
def rig():
    return reference_rig()


def make_synamic_dataset(tmp_path, rig, frames=3):
    cfg = SceneConfig(
        objects=(SceneObject(2, "box", (8.0, 0.0, 0.0), (2.0, 2.0, 2.0)),),
        ground_z=-1.5,
        scatter=100,
        seed=4,
    )
    return write_dataset(cfg, tmp_path / "dataset", frames, rig=rig)


class TestConfig:
    def test_load_with_defaults_and_overrides(self, tmp_path, rig):
        ds = make_synamic_dataset(tmp_path, rig, frames=1)
        cfg_path = write_pipeline_config(tmp_path / "run.cfg", ds, tmp_path / "out")
        cfg = load_pipeline_config(cfg_path, ["worker_count=5", "kmeans.k=4"])
        assert cfg.worker_count == 5
        assert cfg.kmeans.k == 4
        assert cfg.oversized_ratio == 0.25
        assert cfg.clustering_enabled is True
        assert cfg.detections_path == ds / "detections.csv"

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("rig = r\ndataset = d\noutput = o\nbogus = 1\n")
        with pytest.raises(ConfigError, match="bogus"):
            load_pipeline_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_pipeline_config(tmp_path / "absent.cfg")

    def test_bad_override_format(self, tmp_path, rig):
        ds = make_synamic_dataset(tmp_path, rig, frames=1)
        cfg_path = write_pipeline_config(tmp_path / "run.cfg", ds, tmp_path / "out")
        with pytest.raises(ConfigError, match="key=value"):
            load_pipeline_config(cfg_path, ["worker_count"])

    def test_invalid_values(self, tmp_path, rig):
        ds = make_synamic_dataset(tmp_path, rig, frames=1)
        cfg_path = write_pipeline_config(tmp_path / "run.cfg", ds, tmp_path / "out")
        with pytest.raises(ConfigError):
            load_pipeline_config(cfg_path, ["worker_count=0"])
        with pytest.raises(ConfigError):
            load_pipeline_config(cfg_path, ["oversized_ratio=1.5"])


class TestManifest:
    def test_read(self, tmp_path):
        (tmp_path / "manifest.csv").write_text(
            "frame_id,timestamp,cloud_file\n0,1.0,clouds/a.fpc\n2,2.5,clouds/b.fpc\n"
        )
        rows = read_manifest(tmp_path)
        assert [(r[0], r[1]) for r in rows] == [(0, 1.0), (2, 2.5)]
        assert rows[0][2] == tmp_path / "clouds/a.fpc"

    def test_missing(self, tmp_path):
        with pytest.raises(DatasetError, match="manifest"):
            read_manifest(tmp_path)

    def test_duplicate_frame(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("0,1.0,a\n0,2.0,b\n")
        with pytest.raises(Exception, match="duplicate"):
            read_manifest(tmp_path)


def det(frame_id, camera_id=0):
    return Detection(frame_id, camera_id, 2, 0.9, BBox(0.0, 0.0, 10.0, 10.0))


class TestFrameIndex:
    def test_identity_association(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("0,1.0,a.fpc\n1,2.0,b.fpc\n")
        dets = DetectionSet([det(0), det(5)])
        index = build_frame_index(tmp_path, dets, 0.05)
        assert index.entries[0].detection_frame_id == 0
        assert index.entries[1].detection_frame_id is None

    def test_nearest_within_skew(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("0,1.00,a.fpc\n")
        (tmp_path / "detections_manifest.csv").write_text("frame_id,timestamp\n10,1.02\n")
        index = build_frame_index(tmp_path, DetectionSet([det(10)]), 0.05)
        assert index.entries[0].detection_frame_id == 10

    def test_beyond_skew_empty(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("0,1.00,a.fpc\n")
        (tmp_path / "detections_manifest.csv").write_text("10,1.10\n")
        index = build_frame_index(tmp_path, DetectionSet([det(10)]), 0.05)
        assert index.entries[0].detection_frame_id is None

    def test_equidistant_earlier_wins(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("0,1.00,a.fpc\n")
        (tmp_path / "detections_manifest.csv").write_text("10,0.98\n11,1.02\n")
        index = build_frame_index(tmp_path, DetectionSet([det(10), det(11)]), 0.05)
        assert index.entries[0].detection_frame_id == 10

    def test_one_to_one(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("0,1.00,a.fpc\n1,1.04,b.fpc\n")
        (tmp_path / "detections_manifest.csv").write_text("10,1.02\n")
        index = build_frame_index(tmp_path, DetectionSet([det(10)]), 0.05)
        assert index.entries[0].detection_frame_id == 10
        assert index.entries[1].detection_frame_id is None

    def test_missing_timestamp_for_group(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("0,1.00,a.fpc\n")
        (tmp_path / "detections_manifest.csv").write_text("10,1.02\n")
        with pytest.raises(DatasetError, match="99"):
            build_frame_index(tmp_path, DetectionSet([det(99)]), 0.05)


def make_background_injected_dataset(tmp_path, rig):
    """One frame: a tight object cluster at 8 m plus far background spread
    around it (distinct raster bins), with one detection box covering both
    clusters' projections."""
    rng = np.random.default_rng(9)
    obj = np.array([8.0, 0.0, 0.0]) + rng.uniform(-0.4, 0.4, (300, 3))
    az = rng.uniform(np.radians(-5), np.radians(5), 150)
    el = rng.uniform(np.radians(-5), np.radians(5), 150)
    directions = np.stack(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1
    )
    bg = directions * rng.uniform(20.0, 24.0, (150, 1))
    xyz = np.vstack([obj, bg]).astype(np.float32)
    cloud = PointCloud(xyz, np.full(len(xyz), 0.5, np.float32), frame_id=0)

    cam = rig.cameras[0]
    p = transform_point(cam.extrinsics, xyz.astype(np.float64))
    u = cam.intrinsics.fx * p[:, 0] / p[:, 2] + cam.intrinsics.cx
    v = cam.intrinsics.fy * p[:, 1] / p[:, 2] + cam.intrinsics.cy
    box = BBox(np.floor(u.min()), np.floor(v.min()), np.floor(u.max()) + 1, np.floor(v.max()) + 1)
    detection = Detection(0, cam.camera_id, 2, 1.0, box)

    ds = tmp_path / "dataset"
    (ds / "clouds").mkdir(parents=True)
    write_cloud(cloud, ds / "clouds" / "frame_000000.fpc")
    (ds / "manifest.csv").write_text("frame_id,timestamp,cloud_file\n0,0.0,clouds/frame_000000.fpc\n")
    (ds / "detections.csv").write_text(serialize_detections([detection]))
    save_rig(rig, ds / "rig.txt")
    return ds


class TestRunPipeline:
    def test_zero_frames_success(self, tmp_path, rig):
        ds = tmp_path / "dataset"
        ds.mkdir()
        (ds / "manifest.csv").write_text("frame_id,timestamp,cloud_file\n")
        (ds / "detections.csv").write_text("")
        save_rig(rig, ds / "rig.txt")
        cfg = load_pipeline_config(
            write_pipeline_config(tmp_path / "run.cfg", ds, tmp_path / "out")
        )
        result = run_pipeline(cfg)
        assert result.exit_code == 0
        assert result.frames_processed == 0
        assert (tmp_path / "out" / "refinement_stats.csv").exists()
        assert (tmp_path / "out" / "timing.csv").exists()

    def test_smoke_on_synthetic_dataset(self, tmp_path, rig):
        ds = make_synamic_dataset(tmp_path, rig, frames=2)
        cfg = load_pipeline_config(
            write_pipeline_config(tmp_path / "run.cfg", ds, tmp_path / "out")
        )
        result = run_pipeline(cfg)
        assert result.exit_code == 0
        assert result.frames_processed == 2
        for frame in range(2):
            assert (tmp_path / "out" / "rasters" / f"frame_{frame:06d}_depth.png").exists()
            assert (tmp_path / "out" / "rasters" / f"frame_{frame:06d}_label.png").exists()

    def test_clustering_drops_background_pixels(self, tmp_path, rig):
        from frustumpoint.depthimage import read_raster

        ds = make_background_injected_dataset(tmp_path, rig)
        cfg_off = load_pipeline_config(
            write_pipeline_config(tmp_path / "off.cfg", ds, tmp_path / "out_off"),
            ["clustering_enabled=false"],
        )
        cfg_on = load_pipeline_config(
            write_pipeline_config(tmp_path / "on.cfg", ds, tmp_path / "out_on"),
            ["clustering_enabled=true", "kmeans.selection=nearest"],
        )
        assert run_pipeline(cfg_off).exit_code == 0
        on_result = run_pipeline(cfg_on)
        assert on_result.exit_code == 0

        off_img = read_raster(
            tmp_path / "out_off/rasters/frame_000000_depth.png",
            tmp_path / "out_off/rasters/frame_000000_label.png",
        )
        on_img = read_raster(
            tmp_path / "out_on/rasters/frame_000000_depth.png",
            tmp_path / "out_on/rasters/frame_000000_label.png",
        )
        off_labeled = int((off_img.labels >= 0).sum())
        on_labeled = int((on_img.labels >= 0).sum())
        assert on_labeled < off_labeled
        # Far background bins (>= 15 m) lose their labels once clustering runs.
        far_bins = (off_img.labels >= 0) & (off_img.depth_mm >= 15000)
        assert far_bins.any()
        assert (on_img.labels[far_bins] == -1).all()
        assert on_result.drop_summary.mean == pytest.approx(150 / 450, abs=0.02)

    def test_refinement_only_unlabels(self, tmp_path, rig):
        from frustumpoint.clustering import KMeansConfig
        from frustumpoint.detections import parse_detections
        from frustumpoint.pipeline import FrameEntry, process_frame

        ds = make_background_injected_dataset(tmp_path, rig)
        dets = parse_detections((ds / "detections.csv").read_text())
        entry = FrameEntry(0, 0.0, ds / "clouds" / "frame_000000.fpc", 0)
        plain, _ = process_frame(entry, rig, dets, KMeansConfig(k=2), clustering_enabled=False)
        refined, _ = process_frame(entry, rig, dets, KMeansConfig(k=2), clustering_enabled=True)
        was = plain.labeled.labeled_mask
        now = refined.labeled.labeled_mask
        assert (~now | was).all()  # no unlabeled point became labeled
        assert now.sum() < was.sum()
        kept = now & was
        np.testing.assert_array_equal(
            refined.labeled.class_ids[kept], plain.labeled.class_ids[kept]
        )

    def test_clustering_disabled_matches_direct_label_render(self, tmp_path, rig):
        from frustumpoint.depthimage import render
        from frustumpoint.detections import filter_oversized, parse_detections
        from frustumpoint.labeling import label_points, read_cloud

        ds = make_synamic_dataset(tmp_path, rig, frames=1)
        cfg = load_pipeline_config(
            write_pipeline_config(tmp_path / "c.cfg", ds, tmp_path / "out"),
            ["clustering_enabled=false"],
        )
        assert run_pipeline(cfg).exit_code == 0

        dets = filter_oversized(
            parse_detections((ds / "detections.csv").read_text()),
            rig.intrinsics_by_id(),
            0.25,
        )
        cloud = read_cloud(ds / "clouds" / "frame_000000.fpc", frame_id=0, timestamp=0.0)
        direct = render(label_points(cloud, rig, dets.frame_group(0)))
        from frustumpoint.depthimage import read_raster

        written = read_raster(
            tmp_path / "out/rasters/frame_000000_depth.png",
            tmp_path / "out/rasters/frame_000000_label.png",
        )
        np.testing.assert_array_equal(written.depth_mm, direct.depth_mm)
        np.testing.assert_array_equal(written.labels, direct.labels)

    def test_clustering_disabled_equals_plain_label_render(self, tmp_path, rig):
        ds = make_synamic_dataset(tmp_path, rig, frames=1)
        cfg = load_pipeline_config(
            write_pipeline_config(tmp_path / "off.cfg", ds, tmp_path / "out"),
            ["clustering_enabled=false"],
        )
        result = run_pipeline(cfg)
        assert result.exit_code == 0
        stats = (tmp_path / "out" / "refinement_stats.csv").read_text().splitlines()
        assert len(stats) == 1  # header only: no refinement ran
        assert result.drop_summary.mean == 0.0

    def test_frame_without_detections_renders_background_only(self, tmp_path, rig):
        from frustumpoint.depthimage import read_raster

        ds = make_synamic_dataset(tmp_path, rig, frames=1)
        # Point the detections at a frame id the manifest does not contain.
        text = (ds / "detections.csv").read_text().splitlines()
        rewritten = [text[0]] + ["99" + line[line.index(",") :] for line in text[1:]]
        (ds / "detections.csv").write_text("\n".join(rewritten) + "\n")
        cfg = load_pipeline_config(
            write_pipeline_config(tmp_path / "run.cfg", ds, tmp_path / "out")
        )
        assert run_pipeline(cfg).exit_code == 0
        img = read_raster(
            tmp_path / "out/rasters/frame_000000_depth.png",
            tmp_path / "out/rasters/frame_000000_label.png",
        )
        assert (img.labels == -1).all()
        assert (img.depth_mm > 0).any()  # geometry still rendered

    def test_per_frame_failure_isolated(self, tmp_path, rig):
        ds = make_synamic_dataset(tmp_path, rig, frames=3)
        (ds / "clouds" / "frame_000001.fpc").write_bytes(b"garbage")
        cfg = load_pipeline_config(
            write_pipeline_config(tmp_path / "run.cfg", ds, tmp_path / "out")
        )
        result = run_pipeline(cfg)
        assert result.exit_code == 1
        assert result.frames_failed == 1
        assert result.frames_processed == 2
        assert result.failures[0][0] == 1
        assert (tmp_path / "out" / "rasters" / "frame_000000_label.png").exists()
        assert (tmp_path / "out" / "rasters" / "frame_000002_label.png").exists()
        assert not (tmp_path / "out" / "rasters" / "frame_000001_label.png").exists()

    def test_worker_count_determinism(self, tmp_path, rig):
        ds = make_synamic_dataset(tmp_path, rig, frames=4)
        out1, out5 = tmp_path / "o1", tmp_path / "o5"
        for out, workers in ((out1, 1), (out5, 5)):
            cfg = load_pipeline_config(
                write_pipeline_config(tmp_path / f"c{workers}.cfg", ds, out),
                [f"worker_count={workers}"],
            )
            assert run_pipeline(cfg).exit_code == 0
        assert (out1 / "refinement_stats.csv").read_bytes() == (out5 / "refinement_stats.csv").read_bytes()
        assert (out1 / "drop_rate_summary.txt").read_bytes() == (out5 / "drop_rate_summary.txt").read_bytes()
        for png in sorted(p.name for p in (out1 / "rasters").iterdir()):
            assert (out1 / "rasters" / png).read_bytes() == (out5 / "rasters" / png).read_bytes()


class TestRunEval:
    def test_self_eval_is_perfect(self, tmp_path, rig):
        ds = make_synamic_dataset(tmp_path, rig, frames=2)
        report = run_eval(ds / "gt", ds / "gt", tmp_path / "eval")
        assert report.accuracy == 1.0
        assert report.precision == 1.0
        assert report.recall == 1.0
        assert report.frames_evaluated == 2
        assert (tmp_path / "eval" / "report.txt").exists()
        assert (tmp_path / "eval" / "per_class.csv").exists()

    def test_missing_pair_named(self, tmp_path, rig):
        ds = make_synamic_dataset(tmp_path, rig, frames=2)
        other = tmp_path / "pred"
        other.mkdir()
        for name in ("frame_000000_depth.png", "frame_000000_label.png"):
            (other / name).write_bytes((ds / "gt" / name).read_bytes())
        with pytest.raises(DatasetError, match="frame_000001"):
            run_eval(other, ds / "gt")

    def test_pipeline_output_scores_against_gt(self, tmp_path, rig):
        ds = make_synamic_dataset(tmp_path, rig, frames=1)
        cfg = load_pipeline_config(
            write_pipeline_config(tmp_path / "run.cfg", ds, tmp_path / "out"),
            ["clustering_enabled=false"],
        )
        assert run_pipeline(cfg).exit_code == 0
        report = run_eval(tmp_path / "out" / "rasters", ds / "gt")
        # Perfect boxes contain every object projection, so without
        # clustering recall is exact; stray scatter/ground points falling
        # inside boxes can only cost precision/accuracy.
        assert report.recall == 1.0
        assert report.accuracy > 0.99


class TestCLI:
    def test_synth_run_eval_flow(self, tmp_path):
        scene = tmp_path / "scene.cfg"
        scene.write_text(
            "seed = 1\nframes = 2\nscatter = 50\nground_z = -1.5\n"
            "object = 2,box,8,0,0,2,2,2\n"
        )
        ds = tmp_path / "ds"
        assert main(["synth", "--scene", str(scene), "--output", str(ds)]) == 0
        assert (ds / "manifest.csv").exists()

        cfg = write_pipeline_config(tmp_path / "run.cfg", ds, tmp_path / "out")
        assert main(["run", "--config", str(cfg)]) == 0
        assert main(["eval", "--pred", str(ds / "gt"), "--gt", str(ds / "gt"),
                     "--output", str(tmp_path / "ev")]) == 0

    def test_stage_subcommands(self, tmp_path):
        scene = tmp_path / "scene.cfg"
        scene.write_text("seed = 2\nframes = 1\nobject = 2,box,8,0,0,2,2,2\n")
        ds = tmp_path / "ds"
        assert main(["synth", "--scene", str(scene), "--output", str(ds)]) == 0

        labels = tmp_path / "f0.fpl"
        assert main([
            "label", "--rig", str(ds / "rig.txt"), "--cloud", str(ds / "clouds/frame_000000.fpc"),
            "--detections", str(ds / "detections.csv"), "--frame-id", "0",
            "--output", str(labels),
        ]) == 0
        refined = tmp_path / "f0r.fpl"
        assert main([
            "refine", "--cloud", str(ds / "clouds/frame_000000.fpc"), "--labels", str(labels),
            "--detections", str(ds / "detections.csv"), "--frame-id", "0",
            "--output", str(refined), "--stats", str(tmp_path / "stats.csv"), "--k", "2",
        ]) == 0
        assert main([
            "render", "--cloud", str(ds / "clouds/frame_000000.fpc"), "--labels", str(refined),
            "--depth-out", str(tmp_path / "d.png"), "--label-out", str(tmp_path / "l.png"),
        ]) == 0
        assert (tmp_path / "d.png").exists()
        assert (tmp_path / "stats.csv").read_text().startswith("frame_id,")

    def test_bench_subcommand(self, tmp_path):
        scene = tmp_path / "scene.cfg"
        scene.write_text("seed = 3\nframes = 2\nobject = 2,box,8,0,0,2,2,2\n")
        ds = tmp_path / "ds"
        assert main(["synth", "--scene", str(scene), "--output", str(ds)]) == 0
        cfg = write_pipeline_config(tmp_path / "run.cfg", ds, tmp_path / "out")
        assert main(["bench", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "bench_timing.csv").exists()

    def test_config_error_exit_code(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2

    def test_partial_failure_exit_code(self, tmp_path):
        scene = tmp_path / "scene.cfg"
        scene.write_text("seed = 4\nframes = 2\nobject = 2,box,8,0,0,2,2,2\n")
        ds = tmp_path / "ds"
        assert main(["synth", "--scene", str(scene), "--output", str(ds)]) == 0
        (ds / "clouds" / "frame_000001.fpc").write_bytes(b"junk")
        cfg = write_pipeline_config(tmp_path / "run.cfg", ds, tmp_path / "out")
        assert main(["run", "--config", str(cfg)]) == 1
