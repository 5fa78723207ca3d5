import numpy as np
import pytest

from wxseg.geom import (
    TWO_PI,
    azimuth,
    build_grid_index,
    neighbor_features,
    sector_mask,
)
from wxseg.pcio import PointCloud


def make_cloud(xyz, intensity=None):
    xyz = np.asarray(xyz, dtype=np.float64)
    inten = np.full(len(xyz), 0.5) if intensity is None else np.asarray(intensity)
    return PointCloud(np.column_stack([xyz, inten]))


def cloud_at_azimuths(angles, r=5.0):
    xyz = [(r * np.cos(a), r * np.sin(a), 0.0) for a in angles]
    return make_cloud(xyz)


def brute_force_features(cloud, radius, k):
    """Independent O(N^2) oracle for neighbor statistics."""
    xyz = cloud.xyz
    n = cloud.count
    out = np.empty((n, 7))
    out[:, 0:4] = cloud.points
    out[:, 4] = np.sqrt(np.sum(xyz**2, axis=1))
    for i in range(n):
        d = np.sqrt(np.sum((xyz - xyz[i]) ** 2, axis=1))
        d = np.delete(d, i)
        out[i, 5] = np.sum(d <= radius)
        if d.size == 0:
            out[i, 6] = 2.0 * radius
        else:
            kk = min(k, d.size)
            out[i, 6] = np.sort(d)[:kk].mean()
    return out


class TestAzimuth:
    def test_plus_x_axis(self):
        assert azimuth(1.0, 0.0) == 0.0

    def test_plus_y_axis(self):
        assert azimuth(0.0, 1.0) == pytest.approx(np.pi / 2, abs=1e-15)

    def test_third_quadrant(self):
        # atan2(-1, -1) = -3*pi/4, normalized to 5*pi/4
        assert azimuth(-1.0, -1.0) == pytest.approx(5 * np.pi / 4, abs=1e-15)

    def test_origin_is_zero(self):
        assert azimuth(0.0, 0.0) == 0.0

    def test_always_in_range(self):
        rng = np.random.default_rng(3)
        xy = rng.normal(0, 10, (2000, 2))
        a = azimuth(xy[:, 0], xy[:, 1])
        assert np.all(a >= 0.0)
        assert np.all(a < TWO_PI)
        # include points just below the +x axis, the rounding hazard
        a2 = azimuth(1.0, -1e-300)
        assert 0.0 <= a2 < TWO_PI

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            x, y = rng.normal(0, 5, 2)
            if x == 0 and y == 0:
                continue
            phi = rng.uniform(0, TWO_PI)
            xr = np.cos(phi) * x - np.sin(phi) * y
            yr = np.sin(phi) * x + np.cos(phi) * y
            expect = np.mod(azimuth(x, y) + phi, TWO_PI)
            got = azimuth(xr, yr)
            diff = min(abs(got - expect), TWO_PI - abs(got - expect))
            assert diff < 1e-12


class TestSectorMask:
    def test_full_circle_selects_all(self):
        cloud = cloud_at_azimuths(np.linspace(0, TWO_PI, 50, endpoint=False))
        assert sector_mask(cloud, 1.234, TWO_PI).all()

    def test_zero_width_selects_none(self):
        cloud = cloud_at_azimuths(np.linspace(0, TWO_PI, 50, endpoint=False))
        assert not sector_mask(cloud, 0.0, 0.0).any()

    def test_wrapping_sector(self):
        cloud = cloud_at_azimuths([0.1, 1.0, 3.0])
        mask = sector_mask(cloud, 3 * np.pi / 2, np.pi)
        np.testing.assert_array_equal(mask, [True, True, False])

    def test_width_out_of_range(self):
        cloud = cloud_at_azimuths([0.1])
        with pytest.raises(ValueError):
            sector_mask(cloud, 0.0, -0.1)
        with pytest.raises(ValueError):
            sector_mask(cloud, 0.0, TWO_PI + 0.1)

    def test_complementary_sectors_partition(self):
        rng = np.random.default_rng(5)
        for trial in range(100):
            n = int(rng.integers(5, 60))
            cloud = make_cloud(rng.normal(0, 8, (n, 3)))
            start = rng.uniform(0, TWO_PI)
            width = rng.uniform(0, TWO_PI)
            m1 = sector_mask(cloud, start, width)
            m2 = sector_mask(cloud, np.mod(start + width, TWO_PI), TWO_PI - width)
            assert np.all(m1 ^ m2), f"trial {trial}: sectors do not partition"


class TestGridIndex:
    def test_single_point_cell(self):
        cloud = make_cloud([(0.5, 0.5, 0.5)])
        idx = build_grid_index(cloud, 1.0)
        assert set(idx.cells) == {(0, 0, 0)}
        np.testing.assert_array_equal(idx.cells[(0, 0, 0)], [0])

    def test_two_points_two_cells(self):
        cloud = make_cloud([(0.1, 0.0, 0.0), (1.1, 0.0, 0.0)])
        idx = build_grid_index(cloud, 1.0)
        assert len(idx.cells) == 2

    def test_cells_partition_points(self):
        rng = np.random.default_rng(9)
        cloud = make_cloud(rng.normal(0, 10, (100, 3)))
        idx = build_grid_index(cloud, 2.0)
        everything = np.concatenate(list(idx.cells.values()))
        assert sorted(everything.tolist()) == list(range(100))
        for key, members in idx.cells.items():
            expect = np.floor(cloud.xyz[members] / 2.0).astype(np.int64)
            assert np.all(expect == np.array(key))

    def test_rejects_nonpositive_cell(self):
        cloud = make_cloud([(0, 0, 0)])
        with pytest.raises(ValueError):
            build_grid_index(cloud, 0.0)


class TestNeighborFeatures:
    def test_isolated_point_sentinel(self):
        cloud = make_cloud([(1.0, 2.0, 3.0)], intensity=[0.7])
        idx = build_grid_index(cloud, 2.0)
        f = neighbor_features(cloud, idx, 2.0, 3)
        assert f.shape == (1, 7)
        assert f[0, 5] == 0.0
        assert f[0, 6] == 4.0
        assert f[0, 4] == pytest.approx(np.sqrt(14.0))

    def test_two_points_one_meter_apart(self):
        cloud = make_cloud([(0, 0, 0), (1, 0, 0)])
        idx = build_grid_index(cloud, 2.0)
        f = neighbor_features(cloud, idx, 2.0, 1)
        np.testing.assert_array_equal(f[:, 5], [1.0, 1.0])
        np.testing.assert_array_equal(f[:, 6], [1.0, 1.0])

    def test_matches_brute_force_bitwise_random(self):
        rng = np.random.default_rng(21)
        for trial in range(8):
            n = int(rng.integers(2, 60))
            cloud = make_cloud(rng.normal(0, 4, (n, 3)))
            radius = float(rng.uniform(0.3, 3.0))
            k = int(rng.integers(1, 6))
            idx = build_grid_index(cloud, radius)
            got = neighbor_features(cloud, idx, radius, k)
            want = brute_force_features(cloud, radius, k)
            np.testing.assert_array_equal(got, want, err_msg=f"trial {trial}")

    def test_matches_brute_force_with_coarse_and_fine_cells(self):
        rng = np.random.default_rng(22)
        cloud = make_cloud(rng.normal(0, 6, (50, 3)))
        want = brute_force_features(cloud, 0.5, 3)
        for cell in (0.17, 0.5, 1.3, 8.0):
            idx = build_grid_index(cloud, cell)
            got = neighbor_features(cloud, idx, 0.5, 3)
            np.testing.assert_array_equal(got, want, err_msg=f"cell {cell}")

    def test_sparse_points_force_box_expansion(self):
        # neighbors many cells away exercise the expanding search
        cloud = make_cloud([(0, 0, 0), (9.7, 0, 0), (0, 23.0, 0), (40.0, 40.0, 2.0)])
        idx = build_grid_index(cloud, 1.0)
        got = neighbor_features(cloud, idx, 1.0, 2)
        want = brute_force_features(cloud, 1.0, 2)
        np.testing.assert_array_equal(got, want)

    def test_mismatched_index_rejected(self):
        c1 = make_cloud([(0, 0, 0), (1, 1, 1)])
        c2 = make_cloud([(0, 0, 0)])
        idx = build_grid_index(c1, 1.0)
        with pytest.raises(ValueError):
            neighbor_features(c2, idx, 1.0, 1)

    def test_bad_args_rejected(self):
        cloud = make_cloud([(0, 0, 0)])
        idx = build_grid_index(cloud, 1.0)
        with pytest.raises(ValueError):
            neighbor_features(cloud, idx, -1.0, 1)
        with pytest.raises(ValueError):
            neighbor_features(cloud, idx, 1.0, 0)
