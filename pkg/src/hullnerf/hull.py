"""Silhouette carving of a binary occupancy grid.

A voxel survives unless some view proves it empty: all nine of its probe
points (cell center plus the eight cell corners) project inside that
view's image and land on background pixels. Corner probes stop a voxel
that only partially overlaps the object from being carved away by its
center alone; a one-cell dilation then covers mask-pixel aliasing, which
keeps the carved volume a strict superset of the object.

Grid file format (little-endian): 8-byte magic ``VAXGRID1``, three uint32
resolutions (nx, ny, nz), six float64 bounds (min xyz then max xyz), then
the occupancy bitset packed LSB-first with x varying fastest, then y,
then z.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ValidationError
from .scene_io import Dataset, ViewRecord

GRID_MAGIC = b"VAXGRID1"

# probe offsets in cell units: center plus the 8 corners
_PROBES = np.concatenate([
    np.full((1, 3), 0.5),
    np.stack(np.meshgrid([0.0, 1.0], [0.0, 1.0], [0.0, 1.0],
                         indexing="ij"), axis=-1).reshape(8, 3),
])


@dataclass
class VoxelGrid:
    """Axis-aligned binary occupancy grid over a world-space box."""

    resolution: tuple[int, int, int]
    bounds: tuple[np.ndarray, np.ndarray]
    occupancy: np.ndarray  # bool, shape == resolution

    def __post_init__(self):
        self.resolution = tuple(int(n) for n in self.resolution)
        lo = np.asarray(self.bounds[0], dtype=np.float64)
        hi = np.asarray(self.bounds[1], dtype=np.float64)
        if not np.all(lo < hi):
            raise ValidationError(f"grid bounds min must be < max, got {lo}, {hi}")
        self.bounds = (lo, hi)
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != self.resolution:
            raise ValidationError(
                f"occupancy shape {occ.shape} != resolution {self.resolution}")
        self.occupancy = occ

    @property
    def cell_size(self) -> np.ndarray:
        lo, hi = self.bounds
        return (hi - lo) / np.asarray(self.resolution, dtype=np.float64)


def _background_evidence(view: ViewRecord, points: np.ndarray) -> np.ndarray:
    """True where a world point provably projects onto background.

    Points behind the camera or outside the image give no evidence and
    return False.
    """
    pose = view.pose
    q = (points - pose.position) @ pose.rotation  # camera-frame coordinates
    z = q[:, 2]
    front = z < 0.0
    s = np.where(front, -z, 1.0)
    cx, cy = pose.principal_point
    u = cx + pose.focal * q[:, 0] / s
    v = cy - pose.focal * q[:, 1] / s
    inside = front & (u >= 0.0) & (u < pose.width) & (v >= 0.0) & (v < pose.height)
    out = np.zeros(points.shape[0], dtype=bool)
    if np.any(inside):
        cols = u[inside].astype(np.intp)
        rows = v[inside].astype(np.intp)
        out[inside] = ~view.mask[rows, cols]
    return out


def carve(dataset: Dataset, resolution: int | tuple[int, int, int]) -> VoxelGrid:
    """Carve the visual hull of a dataset's masks into an occupancy grid.

    Starts all-occupied; a voxel is emptied only when some view sees all
    nine probes on background. Voxels outside every frustum therefore stay
    occupied, and the result is the intersection of the per-view
    foreground cones (up to voxel resolution).
    """
    if isinstance(resolution, int):
        resolution = (resolution, resolution, resolution)
    if len(resolution) != 3 or any(n < 2 for n in resolution):
        raise ConfigError(f"carve resolution must be >= 2 per axis, got {resolution}")
    if not dataset.views:
        raise ConfigError("cannot carve with zero views")

    lo, hi = dataset.scene_bounds
    nx, ny, nz = resolution
    cell = (hi - lo) / np.asarray(resolution, dtype=np.float64)
    occ = np.ones(resolution, dtype=bool)

    ix_grid, iy_grid = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ix_flat = ix_grid.reshape(-1)
    iy_flat = iy_grid.reshape(-1)

    for view in dataset.views:
        if not view.mask.any():
            warnings.warn("carving with an all-background mask empties its "
                          "whole frustum", stacklevel=2)
        for z in range(nz):
            slab = occ[:, :, z].reshape(-1)
            if not slab.any():
                continue
            sel = np.flatnonzero(slab)
            idx = np.stack([ix_flat[sel], iy_flat[sel],
                            np.full(sel.shape, z)], axis=1)
            centers = lo + (idx + 0.5) * cell
            cand = _background_evidence(view, centers)
            if not cand.any():
                continue
            cand_idx = idx[cand]
            corners = lo + (cand_idx[:, None, :] + _PROBES[None, 1:]) * cell
            all_bg = _background_evidence(
                view, corners.reshape(-1, 3)).reshape(-1, 8).all(axis=1)
            kill = cand_idx[all_bg]
            occ[kill[:, 0], kill[:, 1], kill[:, 2]] = False

    return VoxelGrid(resolution=resolution, bounds=(lo, hi), occupancy=occ)


def _spread_axis(a: np.ndarray, axis: int) -> np.ndarray:
    """Binary dilation by one cell along one axis."""
    out = a.copy()
    head = [slice(None)] * 3
    tail = [slice(None)] * 3
    head[axis] = slice(None, -1)
    tail[axis] = slice(1, None)
    out[tuple(tail)] |= a[tuple(head)]
    out[tuple(head)] |= a[tuple(tail)]
    return out


def dilate(grid: VoxelGrid, radius_cells: int) -> VoxelGrid:
    """Max-pool the occupied set by a Chebyshev radius (box dilation).

    Radius 0 returns an identical grid. Box dilation is separable and
    composes additively: dilate(dilate(g, a), b) == dilate(g, a + b).
    """
    if radius_cells < 0:
        raise ValidationError(f"dilation radius must be >= 0, got {radius_cells}")
    occ = grid.occupancy.copy()
    for axis in range(3):
        for _ in range(radius_cells):
            occ = _spread_axis(occ, axis)
    return VoxelGrid(resolution=grid.resolution, bounds=grid.bounds, occupancy=occ)


def dilation_radius(grid_resolution: int, n_samples_per_ray: int) -> int:
    """Cells to dilate so one cell run matches one ray-sample spacing.

    ceil(grid / samples) when sampling is coarser than the grid, else 0;
    guards sub-sampling-rate features from being skipped entirely.
    """
    if grid_resolution < 1 or n_samples_per_ray < 1:
        raise ValidationError("grid resolution and sample count must be >= 1")
    if n_samples_per_ray >= grid_resolution:
        return 0
    return math.ceil(grid_resolution / n_samples_per_ray)


def contains(grid: VoxelGrid, point: np.ndarray) -> np.ndarray | bool:
    """Occupancy lookup for world points; False outside the bounds.

    Floor indexing; points exactly on the max face belong to the last cell.
    Accepts a single (3,) point or an (N, 3) array.
    """
    p = np.asarray(point, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    lo, hi = grid.bounds
    res = np.asarray(grid.resolution)
    inside = np.all((p >= lo) & (p <= hi), axis=1)
    idx = np.floor((p - lo) / grid.cell_size).astype(np.int64)
    np.clip(idx, 0, res - 1, out=idx)
    out = np.zeros(p.shape[0], dtype=bool)
    if np.any(inside):
        ii = idx[inside]
        out[inside] = grid.occupancy[ii[:, 0], ii[:, 1], ii[:, 2]]
    return bool(out[0]) if single else out


def occupancy_fraction(grid: VoxelGrid) -> float:
    """Occupied voxels / total voxels."""
    return float(grid.occupancy.mean())


def save_grid(grid: VoxelGrid, path: str | Path) -> None:
    nx, ny, nz = grid.resolution
    lo, hi = grid.bounds
    header = GRID_MAGIC + struct.pack("<3I", nx, ny, nz) + struct.pack(
        "<6d", lo[0], lo[1], lo[2], hi[0], hi[1], hi[2])
    # x fastest, then y, then z -> flatten [z, y, x] in C order
    flat = grid.occupancy.transpose(2, 1, 0).reshape(-1)
    payload = np.packbits(flat, bitorder="little").tobytes()
    Path(path).write_bytes(header + payload)


def load_grid(path: str | Path) -> VoxelGrid:
    buf = Path(path).read_bytes()
    if len(buf) < 8 or buf[:8] != GRID_MAGIC:
        raise FormatError(f"{path}: bad magic, not a {GRID_MAGIC.decode()} grid file")
    if len(buf) < 8 + 12 + 48:
        raise FormatError(f"{path}: truncated header")
    nx, ny, nz = struct.unpack_from("<3I", buf, 8)
    vals = struct.unpack_from("<6d", buf, 20)
    n = nx * ny * nz
    expected = 68 + (n + 7) // 8
    if len(buf) != expected:
        raise FormatError(f"{path}: payload is {len(buf)} bytes, expected {expected}")
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, offset=68),
                         count=n, bitorder="little")
    occ = bits.astype(bool).reshape(nz, ny, nx).transpose(2, 1, 0)
    return VoxelGrid(resolution=(nx, ny, nz),
                     bounds=(np.array(vals[:3]), np.array(vals[3:])),
                     occupancy=occ)
