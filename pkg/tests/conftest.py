"""Shared scene fixtures.

Session-scoped because carving and reference rendering are the slow parts;
all tests treat these as read-only.
"""

import numpy as np
import pytest

from hullnerf import hull
from hullnerf.scene_io import SceneSpec, generate_synthetic_scene


@pytest.fixture(scope="session")
def sphere_scene():
    """Sphere masks + oracle, 20 views at 64x64 (no reference images)."""
    spec = SceneSpec(kind="sphere")
    dataset, oracle = generate_synthetic_scene(spec, 20, 64, seed=7,
                                               render_images=False)
    return spec, dataset, oracle


@pytest.fixture(scope="session")
def sphere_grid(sphere_scene):
    """96^3 hull of the sphere scene with the standing 1-cell margin."""
    _, dataset, _ = sphere_scene
    return hull.dilate(hull.carve(dataset, 96), 1)


@pytest.fixture(scope="session")
def sphere_images_scene():
    """Small sphere dataset with reference-rendered images (8 views, 48px)."""
    spec = SceneSpec(kind="sphere")
    dataset, oracle = generate_synthetic_scene(spec, 8, 48, seed=3)
    return spec, dataset, oracle


def sample_occupied_points(oracle, bounds, n, seed=0):
    """Rejection-sample n points with oracle.occupancy(p) == True."""
    rng = np.random.default_rng(seed)
    lo, hi = bounds
    out = []
    got = 0
    while got < n:
        pts = rng.uniform(lo, hi, size=(max(4 * n, 100_000), 3))
        pts = pts[oracle.occupancy(pts)]
        out.append(pts)
        got += len(pts)
    return np.concatenate(out)[:n]
