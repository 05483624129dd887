"""Ray generation, coarse/fine sampling, hull rejection and packing."""

import math

import numpy as np
import pytest

from hullnerf.errors import CapacityError, ValidationError
from hullnerf.hull import VoxelGrid, contains, dilate
from hullnerf.sampling import (Ray, RaySamples, calibrate_capacity,
                               camera_ray_grid, coarse_t_batch, deltas_from_t,
                               fine_t_batch, pack_arrays, pack_batch,
                               pixel_rays, reject_by_hull, sample_coarse,
                               sample_fine)
from hullnerf.scene_io import CameraPose


def _pose(width=65, height=65, focal=80.0):
    m = np.eye(4)
    m[2, 3] = 4.0
    return CameraPose(width=width, height=height, focal=focal,
                      principal_point=(width / 2, height / 2), cam_to_world=m)


def _ray(t_near=0.0, t_far=1.0):
    return Ray(origin=np.zeros(3), direction=np.array([0.0, 0.0, -1.0]),
               t_near=t_near, t_far=t_far)


def _grid_full(value, n=8):
    return VoxelGrid(resolution=(n, n, n),
                     bounds=(np.full(3, -1.0), np.full(3, 1.0)),
                     occupancy=np.full((n, n, n), value, dtype=bool))


class TestPixelRays:
    def test_principal_point_ray_is_camera_forward(self):
        pose = _pose()  # 65px wide: pixel (32, 32) centers exactly on the pp
        (ray,) = pixel_rays(pose, [(32, 32)], near=2.0, far=6.0)
        assert np.allclose(ray.direction, pose.forward, atol=1e-12)

    def test_all_rays_share_the_camera_origin(self):
        pose = _pose()
        rays = pixel_rays(pose, [(0, 0), (10, 50), (64, 64)], 2.0, 6.0)
        for r in rays:
            assert np.array_equal(r.origin, pose.position)

    def test_corner_ray_angle_closed_form(self):
        pose = _pose(width=64, height=48, focal=70.0)
        # fractional (-0.5, -0.5) puts the ray through the exact image corner
        (ray,) = pixel_rays(pose, [(-0.5, -0.5)], 2.0, 6.0)
        cos_angle = float(ray.direction @ pose.forward)
        expected = math.atan(math.hypot(64 / 2, 48 / 2) / 70.0)
        assert abs(math.acos(np.clip(cos_angle, -1, 1)) - expected) < 1e-6

    def test_out_of_bounds_pixel(self):
        pose = _pose()
        with pytest.raises(ValidationError):
            pixel_rays(pose, [(0, 65)], 2.0, 6.0)

    def test_grid_matches_pixel_rays(self):
        pose = _pose(width=5, height=4)
        origins, dirs = camera_ray_grid(pose)
        rays = pixel_rays(pose, [(r, c) for r in range(4) for c in range(5)],
                          2.0, 6.0)
        assert np.allclose(dirs, np.stack([r.direction for r in rays]))


class TestSampleCoarse:
    def test_midpoints(self):
        s = sample_coarse(_ray(), 4, stratified=False)
        assert np.allclose(s.t, [0.125, 0.375, 0.625, 0.875])
        assert s.keep.all()

    def test_stratified_draws_stay_in_their_bins(self):
        rng = np.random.default_rng(0)
        s = sample_coarse(_ray(), 16, stratified=True, rng=rng)
        edges = np.linspace(0, 1, 17)
        assert np.all(s.t >= edges[:-1]) and np.all(s.t < edges[1:])

    def test_stratified_bin_means(self):
        rng = np.random.default_rng(1)
        n, draws = 8, 10_000
        t = coarse_t_batch(0.0, 1.0, n, True, rng, draws)
        width = 1.0 / n
        se = width / math.sqrt(12 * draws)
        mids = (np.arange(n) + 0.5) * width
        assert np.all(np.abs(t.mean(axis=0) - mids) < 3 * se)

    def test_seeded_reproducibility(self):
        a = sample_coarse(_ray(), 8, True, np.random.default_rng(42))
        b = sample_coarse(_ray(), 8, True, np.random.default_rng(42))
        assert np.array_equal(a.t, b.t)

    def test_delta_sums_to_span_from_first_sample(self):
        # terminal delta closes at t_far, so the deltas cover [t0, t_far]
        for stratified in (False, True):
            s = sample_coarse(_ray(2.0, 6.0), 33, stratified,
                              np.random.default_rng(3))
            assert abs(s.delta.sum() - (6.0 - s.t[0])) < 1e-9

    def test_n_zero_rejected(self):
        with pytest.raises(ValidationError):
            sample_coarse(_ray(), 0)


class TestSampleFine:
    def test_uniform_weights_spread_uniformly_over_bins(self):
        n, n_fine = 32, 10_000
        t = np.linspace(0.1, 3.9, n)[None, :]
        w = np.ones((1, n))
        draws = fine_t_batch(np.repeat(t, 1, 0), w, n_fine,
                             np.random.default_rng(0).random((1, n_fine)))[0]
        edges = np.empty(n + 1)
        edges[0], edges[-1] = t[0, 0], t[0, -1]
        edges[1:-1] = 0.5 * (t[0, :-1] + t[0, 1:])
        counts, _ = np.histogram(draws, bins=edges)
        expected = n_fine / n
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 52.19  # chi-square df=31 at the 99% level

    def test_one_hot_concentrates_in_that_bin(self):
        n = 8
        t = np.linspace(0.0, 1.0, n)[None, :]
        w = np.zeros((1, n))
        j = 5
        w[0, j] = 1.0
        draws = fine_t_batch(t, w, 64,
                             np.random.default_rng(1).random((1, 64)))[0]
        lo = 0.5 * (t[0, j - 1] + t[0, j])
        hi = 0.5 * (t[0, j] + t[0, j + 1])
        assert np.all((draws >= lo) & (draws <= hi))

    def test_union_length_and_order(self):
        ray = _ray(0.0, 2.0)
        coarse = sample_coarse(ray, 16, False)
        out = sample_fine(ray, coarse.t, np.ones(16), 24,
                          np.random.default_rng(0))
        assert len(out) == 16 + 24
        assert np.all(np.diff(out.t) > 0)

    def test_negative_weight_rejected(self):
        ray = _ray()
        coarse = sample_coarse(ray, 8, False)
        w = np.ones(8)
        w[3] = -0.1
        with pytest.raises(ValidationError):
            sample_fine(ray, coarse.t, w, 4, np.random.default_rng(0))

    def test_draws_confined_to_coarse_support(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            t = np.sort(rng.uniform(0, 10, 12))[None, :]
            w = rng.random((1, 12)) * rng.integers(0, 2, (1, 12))
            draws = fine_t_batch(t, w, 50, rng.random((1, 50)))
            assert np.all(draws >= t[0, 0]) and np.all(draws <= t[0, -1])


class TestRejectByHull:
    def test_all_occupied_keeps_everything(self):
        ray = _ray(0.05, 0.95)  # stays inside the grid bounds
        s = reject_by_hull(_grid_full(True), ray, sample_coarse(ray, 16, False))
        assert s.keep.all()

    def test_all_empty_keeps_nothing(self):
        ray = _ray(0.05, 0.95)
        s = reject_by_hull(_grid_full(False), ray, sample_coarse(ray, 16, False))
        assert not s.keep.any()

    def test_keep_matches_membership_reevaluated_per_point(self, sphere_grid):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            origin = rng.uniform(-3, 3, 3)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            ray = Ray(origin=origin, direction=d, t_near=0.5, t_far=5.0)
            s = reject_by_hull(sphere_grid, ray, sample_coarse(ray, 8, False))
            for k in range(8):
                point = origin + s.t[k] * d
                assert s.keep[k] == contains(sphere_grid, point)

    def test_monotone_under_dilation(self, sphere_grid):
        bigger = dilate(sphere_grid, 1)
        rng = np.random.default_rng(1)
        for _ in range(100):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            ray = Ray(origin=np.array([0.0, 0.0, 4.0]), direction=d,
                      t_near=2.0, t_far=6.0)
            s0 = reject_by_hull(sphere_grid, ray, sample_coarse(ray, 32, False))
            s1 = reject_by_hull(bigger, ray, sample_coarse(ray, 32, False))
            assert not np.any(s0.keep & ~s1.keep)


class TestPacking:
    def test_zero_kept_ray_is_all_invalid_with_origin_sentinel(self):
        ray = _ray(0.1, 1.9)
        s = sample_coarse(ray, 4, False)
        s = RaySamples(t=s.t, delta=s.delta, keep=np.zeros(4, bool))
        packed = pack_batch([ray], [s], capacity=4)
        assert not packed.valid.any()
        assert np.array_equal(packed.positions[0],
                              np.repeat(ray.origin[None], 4, axis=0))
        assert np.all(packed.t == 0) and np.all(packed.delta == 0)

    def test_capacity_exactly_max_kept(self):
        ray = _ray(0.1, 1.9)
        s = sample_coarse(ray, 6, False)
        packed = pack_batch([ray], [s], capacity=6)
        assert packed.valid.all()
        assert np.allclose(packed.t[0], s.t)

    def test_overflow_carries_observed_max(self):
        ray = _ray(0.1, 1.9)
        s = sample_coarse(ray, 6, False)
        with pytest.raises(CapacityError) as err:
            pack_batch([ray], [s], capacity=5)
        assert err.value.observed_max == 6
        assert err.value.capacity == 5

    def test_packing_preserves_order_and_geometry(self):
        rng = np.random.default_rng(0)
        origins = rng.uniform(-1, 1, (5, 3))
        dirs = rng.normal(size=(5, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        t = np.sort(rng.uniform(1, 5, (5, 12)), axis=1)
        delta = deltas_from_t(t, 5.5)
        keep = rng.random((5, 12)) > 0.4
        packed = pack_arrays(origins, dirs, t, delta, keep, capacity=12)
        for b in range(5):
            kept_t = t[b, keep[b]]
            m = kept_t.size
            assert np.array_equal(packed.t[b, :m], kept_t)
            assert np.array_equal(packed.delta[b, :m], delta[b, keep[b]])
            expect = origins[b] + kept_t[:, None] * dirs[b]
            assert np.allclose(packed.positions[b, :m], expect)
            assert packed.valid[b, :m].all() and not packed.valid[b, m:].any()


class TestCalibrateCapacity:
    class _Cfg:
        batch_rays = 64
        n_coarse = 16
        n_fine = 0
        seed = 0
        capacity_safety = 1.1
        val_views = 0

    def _dataset(self, sphere_scene):
        return sphere_scene[1]

    def test_all_occupied_gives_ceil_safety_times_n(self, sphere_scene):
        ds = self._dataset(sphere_scene)
        grid = VoxelGrid(resolution=(4, 4, 4), bounds=ds.scene_bounds,
                         occupancy=np.ones((4, 4, 4), bool))
        cap = calibrate_capacity(ds, grid, self._Cfg())
        assert cap == math.ceil(1.1 * 16)

    def test_all_empty_clamps_to_one(self, sphere_scene):
        ds = self._dataset(sphere_scene)
        grid = VoxelGrid(resolution=(4, 4, 4), bounds=ds.scene_bounds,
                         occupancy=np.zeros((4, 4, 4), bool))
        assert calibrate_capacity(ds, grid, self._Cfg()) == 1

    def test_dilated_grid_never_shrinks_capacity(self, sphere_scene, sphere_grid):
        ds = self._dataset(sphere_scene)
        cfg = self._Cfg()
        cfg.n_coarse = 64
        base = calibrate_capacity(ds, sphere_grid, cfg)
        grown = calibrate_capacity(ds, dilate(sphere_grid, 2), cfg)
        assert grown >= base


class TestDomainTypes:
    def test_ray_direction_must_be_unit(self):
        with pytest.raises(ValidationError):
            Ray(origin=np.zeros(3), direction=np.array([0.0, 0.0, -2.0]),
                t_near=0.0, t_far=1.0)

    def test_ray_near_before_far(self):
        with pytest.raises(ValidationError):
            _ray(3.0, 1.0)

    def test_samples_must_ascend(self):
        with pytest.raises(ValidationError):
            RaySamples(t=np.array([0.2, 0.1]), delta=np.array([0.1, 0.1]),
                       keep=np.ones(2, bool))

    def test_samples_need_positive_delta(self):
        with pytest.raises(ValidationError):
            RaySamples(t=np.array([0.1, 0.2]), delta=np.array([0.1, 0.0]),
                       keep=np.ones(2, bool))
