"""Camera rays and per-ray sample placement.

The single-ray functions are the documented API; the ``*_batch`` variants
are the vectorized equivalents used by the training and rendering loops
and follow the exact same conventions.

Spacing convention: delta_i = t_{i+1} - t_i with the terminal interval
closed at the ray's far bound, delta_{N-1} = t_far - t_{N-1}. The deltas
therefore sum to t_far - t_0 (the first sample generally sits half a bin
past t_near).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import CapacityError, ValidationError

if TYPE_CHECKING:
    from .hull import VoxelGrid
    from .scene_io import CameraPose, Dataset

FINE_WEIGHT_FLOOR = 1e-5  # keeps the importance CDF defined when all weights are 0


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ray:
    origin: np.ndarray     # (3,)
    direction: np.ndarray  # (3,), unit length
    t_near: float
    t_far: float

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if o.shape != (3,) or d.shape != (3,):
            raise ValidationError("ray origin/direction must be 3-vectors")
        n = float(np.linalg.norm(d))
        if abs(n - 1.0) > 1e-6:
            raise ValidationError(f"ray direction must be unit length, |d|={n}")
        if not self.t_near < self.t_far:
            raise ValidationError(f"need t_near < t_far, got {self.t_near}, {self.t_far}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def point_at(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


@dataclass(frozen=True)
class RaySamples:
    t: np.ndarray      # (N,), strictly ascending
    delta: np.ndarray  # (N,), positive spacings (terminal closed at t_far)
    keep: np.ndarray   # (N,) bool, in-hull mask

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        delta = np.asarray(self.delta, dtype=np.float64)
        keep = np.asarray(self.keep, dtype=bool)
        if not (t.shape == delta.shape == keep.shape) or t.ndim != 1:
            raise ValidationError("t, delta and keep must be equal-length 1-D arrays")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValidationError("sample positions must be strictly ascending")
        if np.any(delta <= 0):
            raise ValidationError("sample spacings must be positive")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "keep", keep)

    def __len__(self) -> int:
        return self.t.size


@dataclass(frozen=True)
class PackedBatch:
    """Fixed-capacity batch of kept sample points.

    Kept points are written densely per ray in ascending t; the remaining
    slots carry valid=False with the ray origin as a sentinel position and
    zero t/delta, so a compositor that honors the valid flag never
    observes them.
    """

    positions: np.ndarray   # (B, K, 3)
    directions: np.ndarray  # (B, 3)
    valid: np.ndarray       # (B, K) bool
    capacity: int
    t: np.ndarray           # (B, K), 0 where invalid
    delta: np.ndarray       # (B, K), 0 where invalid

    @property
    def n_rays(self) -> int:
        return self.positions.shape[0]

    @property
    def points_evaluated(self) -> int:
        return int(self.valid.sum())


# ---------------------------------------------------------------------------
# Ray generation
# ---------------------------------------------------------------------------

def pixel_ray_dirs(pose: "CameraPose", rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """World-space unit directions through pixel centers (col+0.5, row+0.5)."""
    cx, cy = pose.principal_point
    u = (np.asarray(cols, dtype=np.float64) + 0.5 - cx) / pose.focal
    v = (np.asarray(rows, dtype=np.float64) + 0.5 - cy) / pose.focal
    dirs_cam = np.stack([u, -v, -np.ones_like(u)], axis=-1)
    dirs = dirs_cam @ pose.rotation.T
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def camera_ray_grid(pose: "CameraPose") -> tuple[np.ndarray, np.ndarray]:
    """All pixel rays of a pose, row-major: (origins (H*W,3), dirs (H*W,3))."""
    rows, cols = np.meshgrid(np.arange(pose.height), np.arange(pose.width),
                             indexing="ij")
    dirs = pixel_ray_dirs(pose, rows.reshape(-1), cols.reshape(-1))
    origins = np.broadcast_to(pose.position, dirs.shape).copy()
    return origins, dirs


def pixel_rays(pose: "CameraPose", pixels: Sequence[tuple[float, float]],
               near: float, far: float) -> list[Ray]:
    """Rays through the given (row, col) pixels.

    Fractional coordinates are allowed (the ray passes through
    (col+0.5, row+0.5)); valid range is [-0.5, size-0.5] per axis.
    """
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    rows, cols = px[:, 0], px[:, 1]
    if np.any((rows < -0.5) | (rows > pose.height - 0.5) |
              (cols < -0.5) | (cols > pose.width - 0.5)):
        raise ValidationError("pixel outside image bounds")
    dirs = pixel_ray_dirs(pose, rows, cols)
    origin = pose.position
    return [Ray(origin=origin, direction=d, t_near=near, t_far=far) for d in dirs]


# ---------------------------------------------------------------------------
# Coarse sampling
# ---------------------------------------------------------------------------

def coarse_t_batch(t_near: float, t_far: float, n: int, stratified: bool,
                   rng: np.random.Generator | None, batch: int) -> np.ndarray:
    """(batch, n) sample positions: n equal bins, midpoint or jittered."""
    if n < 1:
        raise ValidationError(f"need at least one sample, got n={n}")
    edges = np.linspace(t_near, t_far, n + 1)
    lo, width = edges[:-1], np.diff(edges)
    if stratified:
        if rng is None:
            raise ValidationError("stratified sampling needs an rng")
        return lo + rng.random((batch, n)) * width
    return np.broadcast_to(lo + 0.5 * width, (batch, n)).copy()


def deltas_from_t(t: np.ndarray, t_far: float) -> np.ndarray:
    """Spacings for (…, N) sample positions, terminal closed at t_far."""
    return np.concatenate(
        [np.diff(t, axis=-1), t_far - t[..., -1:]], axis=-1)


def sample_coarse(ray: Ray, n: int, stratified: bool = False,
                  rng: np.random.Generator | None = None) -> RaySamples:
    """Stratified or midpoint samples over [t_near, t_far]; keeps everything."""
    t = coarse_t_batch(ray.t_near, ray.t_far, n, stratified, rng, batch=1)[0]
    return RaySamples(t=t, delta=deltas_from_t(t, ray.t_far),
                      keep=np.ones(n, dtype=bool))


# ---------------------------------------------------------------------------
# Importance (fine) sampling
# ---------------------------------------------------------------------------

def fine_t_batch(coarse_t: np.ndarray, weights: np.ndarray, n_fine: int,
                 u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws from the piecewise-constant coarse-bin density.

    Bin j surrounds coarse sample j: edges are the coarse positions'
    midpoints, closed at the first and last samples, so draws always lie
    within [coarse_t[0], coarse_t[-1]]. Bin mass is proportional to
    weights[j] + FINE_WEIGHT_FLOOR. ``u`` holds uniform [0,1) variates of
    shape (batch, n_fine).
    """
    ct = np.asarray(coarse_t, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if ct.shape != w.shape or ct.ndim != 2:
        raise ValidationError("coarse_t and weights must be equal-shape (B, n) arrays")
    if ct.shape[1] < 2:
        raise ValidationError("importance sampling needs at least 2 coarse samples")
    if np.any(w < 0):
        raise ValidationError("importance weights must be non-negative")
    batch, n = ct.shape

    edges = np.empty((batch, n + 1))
    edges[:, 0] = ct[:, 0]
    edges[:, 1:-1] = 0.5 * (ct[:, :-1] + ct[:, 1:])
    edges[:, -1] = ct[:, -1]

    pmf = w + FINE_WEIGHT_FLOOR
    pmf /= pmf.sum(axis=1, keepdims=True)
    cdf = np.zeros((batch, n + 1))
    np.cumsum(pmf, axis=1, out=cdf[:, 1:])
    cdf[:, -1] = 1.0

    # one flat searchsorted: offset each row so rows cannot interleave
    offsets = 2.0 * np.arange(batch)[:, None]
    pos = np.searchsorted((cdf + offsets).reshape(-1),
                          (u + offsets).reshape(-1), side="right")
    k = pos.reshape(batch, n_fine) - np.arange(batch)[:, None] * (n + 1) - 1
    np.clip(k, 0, n - 1, out=k)

    rows = np.arange(batch)[:, None]
    frac = (u - cdf[rows, k]) / pmf[rows, k]
    return edges[rows, k] + frac * (edges[rows, k + 1] - edges[rows, k])


def sample_fine(ray: Ray, coarse_t: np.ndarray, weights: np.ndarray,
                n_fine: int, rng: np.random.Generator) -> RaySamples:
    """Importance samples merged with the coarse positions.

    Returns the ascending union of coarse_t and n_fine inverse-CDF draws;
    the fine pass evaluates both, as in hierarchical rendering.
    """
    ct = np.asarray(coarse_t, dtype=np.float64).reshape(1, -1)
    w = np.asarray(weights, dtype=np.float64).reshape(1, -1)
    draws = fine_t_batch(ct, w, n_fine, rng.random((1, n_fine)))
    merged = np.sort(np.concatenate([ct[0], draws[0]]))
    return RaySamples(t=merged, delta=deltas_from_t(merged, ray.t_far),
                      keep=np.ones(merged.size, dtype=bool))


# ---------------------------------------------------------------------------
# Hull rejection and batch packing
# ---------------------------------------------------------------------------

def reject_by_hull(grid: "VoxelGrid", ray: Ray, samples: RaySamples) -> RaySamples:
    """Recompute the keep mask from hull membership; t and delta unchanged.

    Skipped points later contribute zero density, so the sampling geometry
    (and hence the transmittance quadrature) is untouched.
    """
    from .hull import contains

    keep = contains(grid, ray.point_at(samples.t))
    return replace(samples, keep=keep)


def keep_mask_batch(grid: "VoxelGrid", origins: np.ndarray, dirs: np.ndarray,
                    t: np.ndarray) -> np.ndarray:
    """Vectorized hull membership for (B, N) sample positions."""
    from .hull import contains

    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    return contains(grid, pts.reshape(-1, 3)).reshape(t.shape)


def pack_arrays(origins: np.ndarray, dirs: np.ndarray, t: np.ndarray,
                delta: np.ndarray, keep: np.ndarray, capacity: int) -> PackedBatch:
    """Pack kept samples of a (B, N) batch into (B, capacity) slots."""
    batch = origins.shape[0]
    counts = keep.sum(axis=1)
    observed = int(counts.max()) if batch else 0
    if observed > capacity:
        raise CapacityError(
            f"a ray kept {observed} samples but capacity is {capacity}",
            observed_max=observed, capacity=capacity)

    positions = np.repeat(origins[:, None, :], capacity, axis=1)
    valid = np.zeros((batch, capacity), dtype=bool)
    t_out = np.zeros((batch, capacity))
    delta_out = np.zeros((batch, capacity))

    rows, src = np.nonzero(keep)  # row-major -> ascending t within each ray
    if rows.size:
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        dst = np.arange(rows.size) - starts[rows]
        t_sel = t[rows, src]
        positions[rows, dst] = origins[rows] + t_sel[:, None] * dirs[rows]
        t_out[rows, dst] = t_sel
        delta_out[rows, dst] = delta[rows, src]
        valid[rows, dst] = True
    return PackedBatch(positions=positions, directions=dirs, valid=valid,
                       capacity=int(capacity), t=t_out, delta=delta_out)


def pack_batch(rays: Sequence[Ray], samples_list: Sequence[RaySamples],
               capacity: int) -> PackedBatch:
    """Pack per-ray sample lists; raises CapacityError (with the observed
    maximum) when any ray keeps more points than the capacity."""
    if len(rays) != len(samples_list):
        raise ValidationError("need one RaySamples per ray")
    n = max((len(s) for s in samples_list), default=0)
    batch = len(rays)
    origins = np.stack([r.origin for r in rays]) if batch else np.zeros((0, 3))
    dirs = np.stack([r.direction for r in rays]) if batch else np.zeros((0, 3))
    t = np.zeros((batch, n))
    delta = np.zeros((batch, n))
    keep = np.zeros((batch, n), dtype=bool)
    for i, s in enumerate(samples_list):
        t[i, :len(s)] = s.t
        delta[i, :len(s)] = s.delta
        keep[i, :len(s)] = s.keep
    return pack_arrays(origins, dirs, t, delta, keep, capacity)


# ---------------------------------------------------------------------------
# Pixel batches and capacity calibration
# ---------------------------------------------------------------------------

@dataclass
class ViewArrays:
    """Stacked per-view tensors for fast batched ray generation.

    Requires every view to share intrinsics and image size.
    """

    rotations: np.ndarray  # (V, 3, 3)
    origins: np.ndarray    # (V, 3)
    images: np.ndarray     # (V, H, W, 3)
    masks: np.ndarray      # (V, H, W)
    height: int
    width: int
    focal: float
    principal_point: tuple[float, float]

    @classmethod
    def from_views(cls, views) -> "ViewArrays":
        first = views[0].pose
        for v in views:
            if (v.pose.width, v.pose.height, v.pose.focal) != (
                    first.width, first.height, first.focal):
                raise ValidationError("batched training needs uniform intrinsics")
        return cls(
            rotations=np.stack([v.pose.rotation for v in views]),
            origins=np.stack([v.pose.position for v in views]),
            images=np.stack([v.image for v in views]),
            masks=np.stack([v.mask for v in views]),
            height=first.height, width=first.width, focal=first.focal,
            principal_point=first.principal_point,
        )

    @property
    def n_views(self) -> int:
        return self.rotations.shape[0]

    def rays_for_pixels(self, view_idx: np.ndarray, rows: np.ndarray,
                        cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cx, cy = self.principal_point
        u = (cols + 0.5 - cx) / self.focal
        v = (rows + 0.5 - cy) / self.focal
        dirs_cam = np.stack([u, -v, -np.ones_like(u)], axis=-1)
        dirs = np.einsum("bij,bj->bi", self.rotations[view_idx], dirs_cam)
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return self.origins[view_idx].copy(), dirs


def draw_pixel_batch(arrays: ViewArrays, batch: int, rng: np.random.Generator
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform-with-replacement pixel draws over all views: (view, row, col)."""
    per_view = arrays.height * arrays.width
    flat = rng.integers(0, arrays.n_views * per_view, size=batch)
    view_idx = flat // per_view
    off = flat % per_view
    return view_idx, off // arrays.width, off % arrays.width


def calibrate_capacity(dataset: "Dataset", grid: "VoxelGrid", config,
                       probe_iters: int = 10) -> int:
    """Slot capacity from probing random batches against the hull.

    Draws probe_iters batches with the config's geometry (batch size,
    sample counts), counts the kept samples per ray and returns the
    maximum inflated by config.capacity_safety, never below 1. Fine-phase
    probes draw from a uniform importance distribution, which matches the
    start-of-training weight profile. Uses a calibration-only rng stream,
    so training draws are unaffected.
    """
    n_val = getattr(config, "val_views", 0)
    views = dataset.views[:-n_val] if 0 < n_val < len(dataset.views) else dataset.views
    arrays = ViewArrays.from_views(views)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 1]))
    safety = float(getattr(config, "capacity_safety", 1.1))

    observed = 0
    for _ in range(probe_iters):
        view_idx, rows, cols = draw_pixel_batch(arrays, config.batch_rays, rng)
        origins, dirs = arrays.rays_for_pixels(view_idx, rows, cols)
        t = coarse_t_batch(dataset.near, dataset.far, config.n_coarse, True,
                           rng, config.batch_rays)
        keep = keep_mask_batch(grid, origins, dirs, t)
        observed = max(observed, int(keep.sum(axis=1).max()))
        if config.n_fine > 0:
            w = np.ones_like(t)
            draws = fine_t_batch(t, w, config.n_fine,
                                 rng.random((config.batch_rays, config.n_fine)))
            union = np.sort(np.concatenate([t, draws], axis=1), axis=1)
            keep_u = keep_mask_batch(grid, origins, dirs, union)
            observed = max(observed, int(keep_u.sum(axis=1).max()))
    return max(1, math.ceil(safety * observed))
