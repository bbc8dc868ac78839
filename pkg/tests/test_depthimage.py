import math

import numpy as np
import pytest

from frustumpoint.depthimage import (
    BACKGROUND_LABEL_PIXEL,
    DEFAULT_SPEC,
    DepthImageSpec,
    DepthLabelImage,
    RasterFormatError,
    bin_points,
    range_millimeters,
    read_raster,
    render,
    spherical_bin,
    write_raster,
)
from frustumpoint.labeling import LabeledCloud, PointCloud


def make_labeled(xyz, class_ids):
    xyz = np.asarray(xyz, np.float32).reshape(-1, 3)
    n = len(xyz)
    cloud = PointCloud(xyz, np.zeros(n, np.float32))
    cls = np.asarray(class_ids, np.int16).reshape(-1)
    det = np.where(cls >= 0, 0, -1).astype(np.int32)
    return LabeledCloud(cloud, cls, det)


class TestSpec:
    def test_defaults(self):
        spec = DEFAULT_SPEC
        assert spec.rows * spec.cols == 32768
        assert spec.row_height_deg == pytest.approx((10.67 + 30.67) / 32)
        assert spec.col_width_deg == pytest.approx(360.0 / 1024)

    def test_invariants(self):
        with pytest.raises(ValueError):
            DepthImageSpec(rows=16, cols=1024)
        with pytest.raises(ValueError):
            DepthImageSpec(elev_max_deg=-31.0)
        with pytest.raises(ValueError):
            DepthImageSpec(range_max_mm=0)


class TestSphericalBin:
    def test_forward_point(self):
        # azimuth 0 -> col 0; elevation 0 -> row floor(10.67 / 1.291875) = 8.
        assert spherical_bin([1.0, 0.0, 0.0]) == (8, 0)

    def test_backward_point_half_turn(self):
        row, col = spherical_bin([-1.0, 0.0, 0.0])
        assert col == 512
        assert row == 8

    def test_45_degrees_out_of_fov(self):
        assert spherical_bin([1.0, 0.0, 1.0]) is None

    def test_just_above_fov(self):
        z = math.tan(math.radians(10.68))
        assert spherical_bin([1.0, 0.0, z]) is None

    def test_top_edge_inclusive(self):
        z = math.tan(math.radians(10.67))
        assert spherical_bin([1.0, 0.0, z]) == (0, 0)

    def test_bottom_edge_exclusive(self):
        z = math.tan(math.radians(-30.67))
        assert spherical_bin([1.0, 0.0, z]) is None
        z = math.tan(math.radians(-30.66))
        assert spherical_bin([1.0, 0.0, z]) == (31, 0)

    def test_origin_rejected(self):
        with pytest.raises(ValueError):
            spherical_bin([0.0, 0.0, 0.0])

    def test_all_in_fov_points_bin_in_range(self):
        rng = np.random.default_rng(0)
        xyz = rng.normal(size=(5000, 3)) * [10, 10, 3]
        rows, cols, in_fov = bin_points(xyz)
        assert rows[in_fov].min() >= 0 and rows[in_fov].max() < 32
        assert cols.min() >= 0 and cols.max() < 1024

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(1)
        xyz = rng.normal(size=(500, 3)) * [8, 8, 4]
        rows, cols, in_fov = bin_points(xyz)
        for i in range(len(xyz)):
            got = spherical_bin(xyz[i])
            if got is None:
                assert not in_fov[i]
            else:
                assert in_fov[i]
                assert got == (rows[i], cols[i])


class TestRender:
    def test_empty_cloud(self):
        img = render(LabeledCloud.unlabeled(PointCloud.empty()))
        assert (img.depth_mm == 0).all()
        assert (img.labels == -1).all()

    def test_single_labeled_point(self):
        img = render(make_labeled([[8.0, 0.0, 0.0]], [2]))
        assert img.depth_mm[8, 0] == 8000
        assert img.labels[8, 0] == 2
        assert (img.depth_mm != 0).sum() == 1
        assert (img.labels != -1).sum() == 1

    def test_far_point_clamped(self):
        img = render(make_labeled([[40.0, 0.0, 0.0]], [1]))
        assert img.depth_mm[8, 0] == 25000

    def test_nearest_wins_brute_force(self):
        rng = np.random.default_rng(2)
        xyz = rng.normal(size=(3000, 3)) * [10, 10, 3]
        cls = rng.integers(0, 80, 3000).astype(np.int16)
        lc = make_labeled(xyz, cls)
        img = render(lc)

        rows, cols, in_fov = bin_points(lc.cloud.xyz)
        depth = range_millimeters(lc.cloud.xyz)
        for r, c in zip(*np.nonzero(img.depth_mm)):
            members = np.flatnonzero(in_fov & (rows == r) & (cols == c) & (depth > 0))
            assert len(members) > 0
            assert img.depth_mm[r, c] == depth[members].min()

    def test_tie_broken_by_lower_index(self):
        pts = [[6.0, 0.0, 0.0], [6.0, 0.0, 0.0]]
        img = render(make_labeled(pts, [3, 9]))
        assert img.labels[8, 0] == 3
        img2 = render(make_labeled(pts, [9, 3]))
        assert img2.labels[8, 0] == 9

    def test_permutation_invariant_on_distinct_depths(self):
        rng = np.random.default_rng(3)
        xyz = rng.normal(size=(2000, 3)) * [10, 10, 3]
        cls = rng.integers(-1, 80, 2000).astype(np.int16)
        perm = rng.permutation(2000)
        a = render(make_labeled(xyz, cls))
        b = render(make_labeled(xyz[perm], cls[perm]))
        np.testing.assert_array_equal(a.depth_mm, b.depth_mm)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_quantization_bound(self):
        rng = np.random.default_rng(4)
        xyz = rng.uniform(-14, 14, size=(2000, 3))
        mm = range_millimeters(xyz)
        true_mm = np.linalg.norm(xyz.astype(np.float64), axis=1) * 1000.0
        unclamped = mm < 25000
        assert (np.abs(mm[unclamped] - true_mm[unclamped]) <= 0.5).all()

    def test_labeled_bin_has_depth(self):
        rng = np.random.default_rng(5)
        xyz = rng.normal(size=(1000, 3)) * [10, 10, 3]
        cls = rng.integers(0, 80, 1000).astype(np.int16)
        img = render(make_labeled(xyz, cls))
        assert (img.depth_mm[img.labels >= 0] > 0).all()


class TestImageType:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            DepthLabelImage(np.zeros((4, 4), np.uint16), np.full((4, 5), -1, np.int16))

    def test_label_without_depth_rejected(self):
        depth = np.zeros((2, 2), np.uint16)
        labels = np.full((2, 2), -1, np.int16)
        labels[0, 0] = 3
        with pytest.raises(ValueError, match="positive depth"):
            DepthLabelImage(depth, labels)

    def test_depth_cap_enforced(self):
        with pytest.raises(ValueError, match="25000"):
            DepthLabelImage(np.full((2, 2), 30000, np.uint16), np.full((2, 2), -1, np.int16))

    def test_free_shape_in_memory(self):
        img = DepthLabelImage(np.array([[5, 5, 0, 0]], np.uint16), np.array([[2, 2, -1, -1]], np.int16))
        assert img.shape == (1, 4)


class TestRasterIO:
    def _random_image(self, rng):
        depth = rng.integers(0, 25001, (32, 1024)).astype(np.uint16)
        labels = rng.integers(-1, 80, (32, 1024)).astype(np.int16)
        labels[depth == 0] = -1
        return DepthLabelImage(depth, labels)

    def test_round_trip(self, tmp_path):
        img = self._random_image(np.random.default_rng(6))
        write_raster(img, tmp_path / "d.png", tmp_path / "l.png")
        back = read_raster(tmp_path / "d.png", tmp_path / "l.png")
        np.testing.assert_array_equal(back.depth_mm, img.depth_mm)
        np.testing.assert_array_equal(back.labels, img.labels)

    def test_background_sentinel(self, tmp_path):
        from PIL import Image

        img = self._random_image(np.random.default_rng(7))
        write_raster(img, tmp_path / "d.png", tmp_path / "l.png")
        raw = np.array(Image.open(tmp_path / "l.png"))
        assert raw.dtype == np.uint8
        np.testing.assert_array_equal(raw == BACKGROUND_LABEL_PIXEL, img.labels == -1)

    def test_dimension_mismatch(self, tmp_path):
        from PIL import Image

        Image.fromarray(np.zeros((16, 1024), np.uint16)).save(tmp_path / "d.png")
        Image.fromarray(np.full((16, 1024), 255, np.uint8)).save(tmp_path / "l.png")
        with pytest.raises(RasterFormatError, match="shape"):
            read_raster(tmp_path / "d.png", tmp_path / "l.png")

    def test_malformed_file(self, tmp_path):
        (tmp_path / "d.png").write_bytes(b"this is not a png")
        (tmp_path / "l.png").write_bytes(b"nor is this")
        with pytest.raises(RasterFormatError, match="readable"):
            read_raster(tmp_path / "d.png", tmp_path / "l.png")

    def test_wrong_bit_depth_rejected(self, tmp_path):
        from PIL import Image

        Image.fromarray(np.zeros((32, 1024), np.uint8)).save(tmp_path / "d.png")
        Image.fromarray(np.full((32, 1024), 255, np.uint8)).save(tmp_path / "l.png")
        with pytest.raises(RasterFormatError, match="16-bit"):
            read_raster(tmp_path / "d.png", tmp_path / "l.png")

    def test_write_rejects_nonstandard_shape(self, tmp_path):
        img = DepthLabelImage(np.zeros((4, 4), np.uint16), np.full((4, 4), -1, np.int16))
        with pytest.raises(RasterFormatError):
            write_raster(img, tmp_path / "d.png", tmp_path / "l.png")
