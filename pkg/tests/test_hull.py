"""Visual-hull carving, dilation, membership and serialization."""

import numpy as np
import pytest

from hullnerf.errors import ConfigError, FormatError, ValidationError
from hullnerf.hull import (VoxelGrid, carve, contains, dilate, dilation_radius,
                           load_grid, occupancy_fraction, save_grid)
from hullnerf.scene_io import (CameraPose, Dataset, SceneSpec, ViewRecord,
                               generate_synthetic_scene)
from conftest import sample_occupied_points


def _grid(occ, lo=-1.0, hi=1.0):
    return VoxelGrid(resolution=occ.shape,
                     bounds=(np.full(3, lo), np.full(3, hi)), occupancy=occ)


def _single_view_dataset(mask, distance=4.0, focal=None):
    h, w = mask.shape
    m = np.eye(4)
    m[2, 3] = distance  # camera up the z axis looking down -z at the origin
    pose = CameraPose(width=w, height=h, focal=focal or w * 1.2,
                      principal_point=(w / 2, h / 2), cam_to_world=m)
    view = ViewRecord(image=np.ones((h, w, 3)), mask=mask, pose=pose)
    return Dataset(views=[view], near=2.0, far=6.0,
                   scene_bounds=(np.full(3, -1.5), np.full(3, 1.5)),
                   background=np.ones(3))


class TestCarve:
    def test_all_foreground_view_carves_nothing(self):
        ds = _single_view_dataset(np.ones((16, 16), dtype=bool))
        grid = carve(ds, 16)
        assert grid.occupancy.all()

    def test_zero_views_config_error(self):
        ds = _single_view_dataset(np.ones((8, 8), dtype=bool))
        ds.views = []
        with pytest.raises(ConfigError):
            carve(ds, 8)

    def test_resolution_too_small(self):
        ds = _single_view_dataset(np.ones((8, 8), dtype=bool))
        with pytest.raises(ConfigError):
            carve(ds, 1)

    def test_all_background_mask_warns(self):
        ds = _single_view_dataset(np.zeros((8, 8), dtype=bool))
        with pytest.warns(UserWarning):
            carve(ds, 8)

    def test_sphere_voxel_centers_stay_occupied(self):
        # finer masks than criterion 1: this checks the raw carve with no
        # dilation margin, so mask aliasing must stay below a voxel
        spec = SceneSpec(kind="sphere")
        ds, oracle = generate_synthetic_scene(spec, 20, 128, seed=7,
                                              render_images=False)
        grid = carve(ds, 128)
        lo, hi = ds.scene_bounds
        cell = (hi - lo) / 128
        axes = [lo[k] + (np.arange(128) + 0.5) * cell[k] for k in range(3)]
        xx, yy, zz = np.meshgrid(*axes, indexing="ij")
        centers = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
        inside = oracle.occupancy(centers).reshape(grid.occupancy.shape)
        assert not np.any(inside & ~grid.occupancy)

    def test_two_orthogonal_square_views_carve_a_box(self):
        # near-orthographic cameras (far away, narrow field of view) so the
        # back-projected cones are prisms up to < 1 voxel of taper
        res, half = 200, 0.5
        distance = 50.0
        focal = 0.5 * res / np.tan(0.06)
        rows, cols = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
        u = (cols + 0.5 - res / 2) / focal * distance
        v = (rows + 0.5 - res / 2) / focal * distance
        mask = (np.abs(u) < half) & (np.abs(v) < half)

        def pose_at(position):
            pos = np.asarray(position, dtype=np.float64)
            z = pos / np.linalg.norm(pos)
            x = np.cross([0.0, 0.0, 1.0], z)
            x /= np.linalg.norm(x)
            y = np.cross(z, x)
            m = np.eye(4)
            m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = x, y, z, pos
            return CameraPose(width=res, height=res, focal=focal,
                              principal_point=(res / 2, res / 2), cam_to_world=m)

        views = [ViewRecord(image=np.ones((res, res, 3)), mask=mask,
                            pose=pose_at(p))
                 for p in ([distance, 0, 0], [0, distance, 0])]
        ds = Dataset(views=views, near=distance - 2, far=distance + 2,
                     scene_bounds=(np.full(3, -1.5), np.full(3, 1.5)),
                     background=np.ones(3))
        n = 64
        grid = carve(ds, n)
        cell = 3.0 / n
        count = int(grid.occupancy.sum())
        lo_cells = (2 * half / cell - 2) ** 3
        hi_cells = (2 * half / cell + 2) ** 3
        assert lo_cells <= count <= hi_cells

    def test_view_monotonicity(self, sphere_scene):
        _, ds, _ = sphere_scene
        few = Dataset(views=ds.views[:4], near=ds.near, far=ds.far,
                      scene_bounds=ds.scene_bounds, background=ds.background)
        g_few = carve(few, 48)
        g_all = carve(ds, 48)
        assert not np.any(g_all.occupancy & ~g_few.occupancy)

    def test_half_resolution_plus_dilation_stays_conservative(
            self, sphere_scene):
        _, ds, oracle = sphere_scene
        grid = dilate(carve(ds, 48), 1)
        pts = sample_occupied_points(oracle, ds.scene_bounds, 20_000, seed=2)
        assert contains(grid, pts).all()


class TestDilate:
    def test_single_voxel_radius_one_gives_27(self):
        occ = np.zeros((8, 8, 8), dtype=bool)
        occ[4, 4, 4] = True
        out = dilate(_grid(occ), 1)
        assert int(out.occupancy.sum()) == 27
        assert out.occupancy[3:6, 3:6, 3:6].all()

    def test_radius_zero_is_identity(self):
        rng = np.random.default_rng(0)
        occ = rng.random((6, 7, 8)) > 0.7
        out = dilate(_grid(occ), 0)
        assert np.array_equal(out.occupancy, occ)

    def test_all_occupied_fixed_point(self):
        occ = np.ones((5, 5, 5), dtype=bool)
        assert dilate(_grid(occ), 3).occupancy.all()

    def test_monotone_and_composes(self):
        rng = np.random.default_rng(1)
        occ = rng.random((10, 9, 11)) > 0.9
        g = _grid(occ)
        d1 = dilate(g, 1)
        assert not np.any(occ & ~d1.occupancy)
        lhs = dilate(dilate(g, 2), 1)
        rhs = dilate(g, 3)
        assert np.array_equal(lhs.occupancy, rhs.occupancy)

    def test_negative_radius(self):
        with pytest.raises(ValidationError):
            dilate(_grid(np.ones((4, 4, 4), bool)), -1)


class TestDilationRadius:
    def test_paper_rule_values(self):
        assert dilation_radius(400, 64) == 7
        assert dilation_radius(400, 800) == 0
        assert dilation_radius(128, 128) == 0

    def test_bad_inputs(self):
        with pytest.raises(ValidationError):
            dilation_radius(0, 4)


class TestContains:
    def test_outside_bounds_false(self):
        g = _grid(np.ones((4, 4, 4), bool))
        assert contains(g, np.array([2.0, 0.0, 0.0])) is False

    def test_all_occupied_inside_true(self):
        g = _grid(np.ones((4, 4, 4), bool))
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, (500, 3))
        assert contains(g, pts).all()

    def test_max_corner_maps_to_last_cell(self):
        occ = np.zeros((4, 4, 4), dtype=bool)
        occ[3, 3, 3] = True
        g = _grid(occ)
        assert contains(g, np.array([1.0, 1.0, 1.0])) is True
        occ2 = np.ones((4, 4, 4), dtype=bool)
        occ2[3, 3, 3] = False
        assert contains(_grid(occ2), np.array([1.0, 1.0, 1.0])) is False

    def test_floor_indexing(self):
        occ = np.zeros((2, 2, 2), dtype=bool)
        occ[0, 0, 0] = True
        g = _grid(occ)  # cells split at 0.0
        assert contains(g, np.array([-0.1, -0.1, -0.1])) is True
        assert contains(g, np.array([0.1, -0.1, -0.1])) is False


class TestSerialization:
    def test_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        occ = rng.random((9, 17, 5)) > 0.5
        g = VoxelGrid(resolution=(9, 17, 5),
                      bounds=(np.array([-1.0, -2.0, 0.5]),
                              np.array([1.0, 2.0, 3.25])), occupancy=occ)
        path = tmp_path / "g.vaxgrid"
        save_grid(g, path)
        back = load_grid(path)
        assert back.resolution == g.resolution
        assert np.array_equal(back.bounds[0], g.bounds[0])
        assert np.array_equal(back.bounds[1], g.bounds[1])
        assert np.array_equal(back.occupancy, g.occupancy)

    def test_payload_size(self, tmp_path):
        n = 32
        g = _grid(np.ones((n, n, n), bool))
        path = tmp_path / "g.vaxgrid"
        save_grid(g, path)
        assert path.stat().st_size == 8 + 12 + 48 + (n ** 3 + 7) // 8

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.vaxgrid"
        path.write_bytes(b"NOTAGRID" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_grid(path)

    def test_truncated(self, tmp_path):
        g = _grid(np.ones((8, 8, 8), bool))
        path = tmp_path / "g.vaxgrid"
        save_grid(g, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_grid(path)


class TestOccupancyFraction:
    def test_extremes(self):
        assert occupancy_fraction(_grid(np.ones((4, 4, 4), bool))) == 1.0
        assert occupancy_fraction(_grid(np.zeros((4, 4, 4), bool))) == 0.0

    def test_sphere_hull_fraction_brackets_volume(self, sphere_scene):
        # Monte-Carlo volume oracle: the hull must cover the ball but not
        # blow up beyond the multi-view cone intersection
        spec, ds, oracle = sphere_scene
        grid = carve(ds, 96)
        frac = occupancy_fraction(grid)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1.5, 1.5, (400_000, 3))
        vol_frac = oracle.occupancy(pts).mean()
        assert frac >= vol_frac
        assert frac <= 2.5 * vol_frac
