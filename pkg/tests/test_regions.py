"""Region geometry: partitions, adjacency, boundaries, distance fields, downsampling."""

import numpy as np
import pytest

import contrastposter as cp
from contrastposter.regions import RegionError, save_mask_png
from conftest import brute_force_boundary_pairs, brute_force_distance, vertical_split


class TestLoadRegionMask:
    def test_two_region_vertical_split(self):
        rs = cp.load_region_mask(vertical_split(4, 4, 2))
        assert rs.region_ids == (0, 1)
        assert rs.adjacency == {0: (1,), 1: (0,)}
        assert len(rs.boundary_pairs(0, 1)) == 4

    def test_uniform_single_region(self):
        rs = cp.load_region_mask(np.zeros((5, 3), dtype=np.int32))
        assert rs.region_ids == (0,)
        assert rs.boundaries == {}
        assert rs.adjacency == {0: ()}

    def test_three_vertical_thirds_matches_brute_force(self):
        labels = np.zeros((6, 6), dtype=np.int32)
        labels[:, 2:4] = 1
        labels[:, 4:] = 2
        rs = cp.load_region_mask(labels)
        assert set(rs.boundaries) == {(0, 1), (1, 2)}
        assert rs.adjacency[1] == (0, 2)
        oracle = brute_force_boundary_pairs(labels)
        assert set(oracle) == set(rs.boundaries)
        for key, rows in oracle.items():
            got = {tuple(r) for r in rs.boundaries[key].tolist()}
            assert got == rows

    def test_random_masks_match_brute_force(self):
        rng = np.random.default_rng(7)
        for trial in range(10):
            labels = rng.integers(0, 4, size=(9, 7)).astype(np.int32)
            rs = cp.load_region_mask(labels)
            oracle = brute_force_boundary_pairs(labels)
            assert set(oracle) == set(rs.boundaries)
            for key, rows in oracle.items():
                assert {tuple(r) for r in rs.boundaries[key].tolist()} == rows

    def test_eight_connectivity_adds_diagonal_pairs(self):
        labels = np.array([[0, 0], [0, 1]], dtype=np.int32)
        rs4 = cp.load_region_mask(labels, connectivity=4)
        rs8 = cp.load_region_mask(labels, connectivity=8)
        assert len(rs4.boundary_pairs(0, 1)) == 2
        assert len(rs8.boundary_pairs(0, 1)) == 3  # the diagonal (0,0)-(1,1) joins in
        oracle = brute_force_boundary_pairs(labels, connectivity=8)
        assert {tuple(r) for r in rs8.boundary_pairs(0, 1).tolist()} == oracle[(0, 1)]

    def test_partition_of_unity(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 3, size=(12, 12)).astype(np.int32)
        rs = cp.load_region_mask(labels)
        total = np.zeros(labels.shape, dtype=int)
        for rid in rs.region_ids:
            total += rs.mask(rid).astype(int)
        assert (total == 1).all()

    def test_boundary_symmetry(self):
        labels = vertical_split(5, 6, 3)
        rs = cp.load_region_mask(labels)
        ab = rs.boundary_pairs(0, 1)
        ba = rs.boundary_pairs(1, 0)
        assert np.array_equal(ab[:, :2], ba[:, 2:])
        assert np.array_equal(ab[:, 2:], ba[:, :2])

    def test_errors(self):
        with pytest.raises(RegionError):
            cp.load_region_mask(np.zeros((0, 4), dtype=np.int32))
        with pytest.raises(RegionError):
            cp.load_region_mask(np.array([[0.5, 1.0]]))
        with pytest.raises(RegionError):
            cp.load_region_mask(np.array([[-1, 0]], dtype=np.int32))
        rs = cp.load_region_mask(vertical_split(4, 4, 2))
        with pytest.raises(RegionError):
            rs.mask(99)
        with pytest.raises(RegionError):
            rs.boundary_pairs(0, 99)

    def test_labels_immutable(self, split_8x8):
        with pytest.raises(ValueError):
            split_8x8.labels[0, 0] = 5


class TestDistanceField:
    def test_vertical_split_column_distance(self):
        # column k from the boundary on side 0 has d = min(k, 4)
        labels = vertical_split(8, 12, 6)
        rs = cp.load_region_mask(labels)
        df = cp.distance_field(rs, 0, 1, 4)
        for col in range(6):
            expect = min(5 - col, 4)
            assert np.allclose(df.values[:, col], expect)

    def test_boundary_pixels_have_zero(self, split_8x8):
        df = cp.distance_field(split_8x8, 0, 1, 2)
        side = split_8x8.boundary_side_pixels(0, 1)
        assert np.allclose(df.values[side[:, 0], side[:, 1]], 0.0)
        # the equal-split weights at d=0: (r - 0) / 2r == 0.5
        assert np.allclose((df.margin - 0.0) / (2 * df.margin), 0.5)

    def test_interior_clipped_to_margin(self):
        labels = vertical_split(8, 16, 8)
        rs = cp.load_region_mask(labels)
        df = cp.distance_field(rs, 0, 1, 3)
        assert df.values[:, 0].max() == 3.0
        assert df.unclipped[:, 0].max() > 3.0
        assert df.values.max() <= 3.0
        assert df.values.min() >= 0.0

    def test_matches_brute_force_on_random_masks(self):
        rng = np.random.default_rng(11)
        for trial in range(6):
            labels = rng.integers(0, 3, size=(16, 16)).astype(np.int32)
            rs = cp.load_region_mask(labels)
            for (i, j) in rs.boundaries:
                df = cp.distance_field(rs, i, j, 5)
                oracle = brute_force_distance(labels, rs.boundary_side_pixels(i, j))
                assert np.abs(df.unclipped - oracle).max() < 1e-9

    def test_monotone_toward_boundary(self):
        labels = vertical_split(6, 10, 5)
        rs = cp.load_region_mask(labels)
        df = cp.distance_field(rs, 0, 1, 10)
        # moving right (toward the boundary) never increases unclipped d on side 0
        diffs = np.diff(df.unclipped[:, :5], axis=1)
        assert (diffs <= 0).all()

    def test_non_adjacent_pair_rejected(self):
        labels = np.zeros((6, 6), dtype=np.int32)
        labels[:, 2:4] = 1
        labels[:, 4:] = 2
        rs = cp.load_region_mask(labels)
        with pytest.raises(RegionError):
            cp.distance_field(rs, 0, 2, 3)
        with pytest.raises(RegionError):
            cp.distance_field(rs, 0, 1, 0.5)


class TestDownsample:
    def test_exact_two_halves(self):
        rs = cp.load_region_mask(vertical_split(8, 8, 4))
        small = cp.downsample_to_latent(rs, 4, 4)
        assert small.labels.shape == (4, 4)
        assert np.array_equal(small.labels, vertical_split(4, 4, 2))

    def test_single_region_any_scale(self):
        rs = cp.load_region_mask(np.zeros((9, 9), dtype=np.int32))
        small = cp.downsample_to_latent(rs, 4, 3)
        assert small.region_ids == (0,)

    def test_checkerboard_vanishes(self):
        labels = np.indices((4, 4)).sum(axis=0) % 2
        rs = cp.load_region_mask(labels.astype(np.int32))
        # majority vote ties break to id 0 in every 2x2 cell, so id 1 vanishes
        cells = [labels[2 * r:2 * r + 2, 2 * c:2 * c + 2] for r in range(2) for c in range(2)]
        assert all((cell == 0).sum() == (cell == 1).sum() for cell in cells)
        with pytest.raises(RegionError, match="vanished"):
            cp.downsample_to_latent(rs, 2, 2)

    def test_majority_vote_uneven_blocks(self):
        labels = np.zeros((6, 6), dtype=np.int32)
        labels[:, 4:] = 1  # two thirds / one third
        rs = cp.load_region_mask(labels)
        small = cp.downsample_to_latent(rs, 3, 3)
        assert np.array_equal(small.labels, np.array([[0, 0, 1]] * 3))

    def test_partition_after_downsample(self):
        rng = np.random.default_rng(5)
        labels = np.repeat(np.repeat(rng.integers(0, 3, size=(4, 4)), 4, axis=0), 4, axis=1)
        rs = cp.load_region_mask(labels.astype(np.int32))
        small = cp.downsample_to_latent(rs, 8, 8)
        total = np.zeros((8, 8), dtype=int)
        for rid in small.region_ids:
            total += small.mask(rid).astype(int)
        assert (total == 1).all()

    def test_dimension_validation(self, split_8x8):
        with pytest.raises(RegionError):
            cp.downsample_to_latent(split_8x8, 16, 4)
        with pytest.raises(RegionError):
            cp.downsample_to_latent(split_8x8, 0, 4)


class TestMaskIO:
    def test_png_round_trip(self, tmp_path):
        labels = vertical_split(10, 10, 5)
        path = str(tmp_path / "mask.png")
        save_mask_png(path, labels)
        rs = cp.load_mask_png(path)
        assert np.array_equal(rs.labels, labels)

    def test_png_gap_in_ids_rejected(self, tmp_path):
        labels = vertical_split(6, 6, 3) * 2  # ids 0 and 2, id 1 missing
        path = str(tmp_path / "gap.png")
        save_mask_png(path, labels)
        with pytest.raises(RegionError, match="zero pixels"):
            cp.load_mask_png(path)

    def test_png_requires_palette_mode(self, tmp_path):
        from PIL import Image

        path = str(tmp_path / "rgb.png")
        Image.new("RGB", (4, 4)).save(path)
        with pytest.raises(RegionError, match="palette"):
            cp.load_mask_png(path)

    def test_polygon_json(self, tmp_path):
        import json

        doc = {
            "width": 8,
            "height": 8,
            "regions": [
                {"id": 0, "polygons": [[[0, 0], [4, 0], [4, 8], [0, 8]]]},
                {"id": 1, "polygons": [[[4, 0], [8, 0], [8, 8], [4, 8]]]},
            ],
        }
        path = tmp_path / "mask.json"
        path.write_text(json.dumps(doc))
        rs = cp.load_mask_json(str(path))
        assert np.array_equal(rs.labels, vertical_split(8, 8, 4))

    def test_polygon_uncovered_pixel_rejected(self, tmp_path):
        import json

        doc = {
            "width": 8,
            "height": 8,
            "regions": [{"id": 0, "polygons": [[[0, 0], [4, 0], [4, 8], [0, 8]]]}],
        }
        path = tmp_path / "partial.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(RegionError, match="not covered"):
            cp.load_mask_json(str(path))

    def test_polygon_empty_region_rejected(self, tmp_path):
        import json

        doc = {
            "width": 8,
            "height": 8,
            "regions": [
                {"id": 0, "polygons": [[[0, 0], [8, 0], [8, 8], [0, 8]]]},
                {"id": 1, "polygons": [[[20, 20], [21, 20], [21, 21]]]},
            ],
        }
        path = tmp_path / "empty.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(RegionError, match="zero pixels"):
            cp.load_mask_json(str(path))
