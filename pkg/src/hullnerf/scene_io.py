"""Dataset ingestion and analytic synthetic scenes.

Dataset layout (blender/synthetic style): a root directory holding one
``transforms_<split>.json`` per split plus the referenced PNG images.
Manifest keys:

    camera_angle_x   horizontal field of view in radians (required)
    frames           list of {file_path, transform_matrix}   (required)
    w, h             expected image size in pixels           (optional)
    near, far        ray bounds in world units               (optional, default 2/6)
    scene_scale      scales the default [-1.5, 1.5]^3 bounds (optional, default 1)
    scene_bounds     {"min": [x,y,z], "max": [x,y,z]}        (optional, overrides)
    background       [r, g, b] in [0,1]                      (optional, default white)

``file_path`` follows the usual convention of being relative to the root
and may omit the ``.png`` suffix. Focal length is derived from the FOV as
``0.5 * width / tan(0.5 * camera_angle_x)``.

Synthetic scenes are generated from analytic shapes (sphere, torus,
two_lobe, rod) with exact silhouette masks and a ground-truth occupancy /
density / radiance oracle, so downstream stages can be checked against
closed-form geometry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .errors import ConfigError, DatasetFormatError, ValidationError

DEFAULT_NEAR = 2.0
DEFAULT_FAR = 6.0
DEFAULT_HALF_EXTENT = 1.5
DEFAULT_LUMINANCE_THRESHOLD = 0.99


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera: intrinsics plus a camera-to-world transform.

    The camera looks along its local -z axis, x points right, y up
    (blender/OpenGL convention). ``cam_to_world`` is 4x4 with an
    orthonormal, det +1 rotation block.
    """

    width: int
    height: int
    focal: float
    principal_point: tuple[float, float]
    cam_to_world: np.ndarray

    def __post_init__(self):
        if self.focal <= 0:
            raise ValidationError(f"focal must be positive, got {self.focal}")
        if self.width < 1 or self.height < 1:
            raise ValidationError("image dimensions must be >= 1 pixel")
        m = np.asarray(self.cam_to_world, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValidationError(f"cam_to_world must be 4x4, got {m.shape}")
        object.__setattr__(self, "cam_to_world", m)
        rot = m[:3, :3]
        if not np.all(np.isfinite(m)):
            raise ValidationError("cam_to_world contains non-finite values")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        det = float(np.linalg.det(rot))
        if err > 1e-6 or abs(det - 1.0) > 1e-6:
            raise ValidationError(
                f"rotation block not orthonormal/det+1 (err={err:.2e}, det={det:.8f})")

    @property
    def position(self) -> np.ndarray:
        return self.cam_to_world[:3, 3]

    @property
    def rotation(self) -> np.ndarray:
        return self.cam_to_world[:3, :3]

    @property
    def forward(self) -> np.ndarray:
        """Unit viewing direction in world coordinates (-z column)."""
        return -self.cam_to_world[:3, 2]

    def scaled(self, divisor: int) -> "CameraPose":
        """Same camera at 1/divisor resolution (focal and pp scale along)."""
        return CameraPose(
            width=self.width // divisor,
            height=self.height // divisor,
            focal=self.focal / divisor,
            principal_point=(self.principal_point[0] / divisor,
                             self.principal_point[1] / divisor),
            cam_to_world=self.cam_to_world,
        )


@dataclass(frozen=True)
class ViewRecord:
    """One calibrated view: RGB image, foreground mask and its camera."""

    image: np.ndarray   # (H, W, 3) float64 in [0, 1]
    mask: np.ndarray    # (H, W) bool, True = foreground
    pose: CameraPose

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        msk = np.asarray(self.mask, dtype=bool)
        if img.shape != (self.pose.height, self.pose.width, 3):
            raise ValidationError(
                f"image shape {img.shape} does not match pose "
                f"{self.pose.height}x{self.pose.width}")
        if msk.shape != (self.pose.height, self.pose.width):
            raise ValidationError(
                f"mask shape {msk.shape} does not match pose "
                f"{self.pose.height}x{self.pose.width}")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "mask", msk)


@dataclass
class Dataset:
    views: list[ViewRecord]
    near: float
    far: float
    scene_bounds: tuple[np.ndarray, np.ndarray]  # (min, max), world units
    background: np.ndarray  # (3,) rgb in [0, 1]

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValidationError(f"need 0 < near < far, got {self.near}, {self.far}")
        lo = np.asarray(self.scene_bounds[0], dtype=np.float64)
        hi = np.asarray(self.scene_bounds[1], dtype=np.float64)
        if not np.all(lo < hi):
            raise ValidationError(f"scene_bounds min must be < max, got {lo}, {hi}")
        self.scene_bounds = (lo, hi)
        self.background = np.asarray(self.background, dtype=np.float64)


@dataclass(frozen=True)
class SceneOracle:
    """Ground truth for a synthetic scene.

    All three callables are vectorized over (N, 3) point arrays;
    ``occupancy(p)`` is True exactly where ``density(p) > 0``.
    """

    occupancy: Callable[[np.ndarray], np.ndarray]
    radiance: Callable[[np.ndarray, np.ndarray], np.ndarray]
    density: Callable[[np.ndarray], np.ndarray]
    ray_hit: Callable[[np.ndarray, np.ndarray], np.ndarray]
    """Analytic silhouette test: (origins (N,3), unit dirs (N,3)) -> (N,) bool."""


# ---------------------------------------------------------------------------
# Mask extraction
# ---------------------------------------------------------------------------

def extract_mask(image_rgba: np.ndarray, policy: str = "alpha",
                 threshold: float = DEFAULT_LUMINANCE_THRESHOLD) -> np.ndarray:
    """Binary foreground mask from an RGBA image in [0, 1].

    policy "alpha": foreground where alpha > 0.
    policy "luminance": foreground where min(r, g, b) < threshold, i.e.
    near-white pixels count as background.
    """
    img = np.asarray(image_rgba, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise ValidationError(f"expected HxWx3 or HxWx4 image, got {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValidationError("image values must lie in [0, 1]")
    if policy == "alpha":
        if img.shape[2] != 4:
            raise ValidationError("alpha policy needs an alpha channel")
        return img[:, :, 3] > 0.0
    if policy == "luminance":
        if not (0.0 < threshold <= 1.0):
            raise ConfigError(f"luminance threshold must be in (0, 1], got {threshold}")
        return img[:, :, :3].min(axis=2) < threshold
    raise ConfigError(f"unknown mask policy {policy!r}")


# ---------------------------------------------------------------------------
# Dataset loading
# ---------------------------------------------------------------------------

def _load_png(path: Path) -> np.ndarray:
    """PNG -> float64 array in [0, 1], (H, W, C) with C in {3, 4}."""
    with Image.open(path) as im:
        if im.mode in ("RGBA", "RGB"):
            arr = np.asarray(im)
        elif im.mode in ("I;16", "I"):
            arr = np.asarray(im.convert("I"))[:, :, None].repeat(3, axis=2)
        else:
            arr = np.asarray(im.convert("RGBA"))
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype in (np.uint16, np.int32):
        return arr.astype(np.float64) / 65535.0
    return np.clip(arr.astype(np.float64), 0.0, 1.0)


def load_dataset(root_path: str | Path, split: str = "train") -> Dataset:
    """Read one split of a transforms-manifest dataset.

    Raises DatasetFormatError for missing/malformed manifests or images and
    ValidationError for size mismatches and bad pose matrices.
    """
    root = Path(root_path)
    manifest_path = root / f"transforms_{split}.json"
    if not manifest_path.is_file():
        raise DatasetFormatError(f"no manifest {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"manifest {manifest_path} is not valid JSON: {e}")
    if "camera_angle_x" not in manifest or "frames" not in manifest:
        raise DatasetFormatError("manifest needs camera_angle_x and frames")

    camera_angle_x = float(manifest["camera_angle_x"])
    background = np.asarray(manifest.get("background", [1.0, 1.0, 1.0]), dtype=np.float64)
    threshold = float(manifest.get("mask_threshold", DEFAULT_LUMINANCE_THRESHOLD))

    views: list[ViewRecord] = []
    for frame in manifest["frames"]:
        rel = str(frame["file_path"])
        img_path = root / rel
        if img_path.suffix == "":
            img_path = img_path.with_suffix(".png")
        if not img_path.is_file():
            raise DatasetFormatError(f"frame references missing file {img_path}")
        img = _load_png(img_path)
        h, w = img.shape[:2]
        if "w" in manifest and (w != int(manifest["w"]) or h != int(manifest["h"])):
            raise ValidationError(
                f"{img_path.name}: image is {w}x{h}, manifest declares "
                f"{manifest['w']}x{manifest['h']}")

        matrix = np.asarray(frame["transform_matrix"], dtype=np.float64)
        if matrix.shape != (4, 4) or abs(np.linalg.det(matrix)) < 1e-12:
            raise ValidationError(f"{img_path.name}: pose matrix is not invertible")
        focal = 0.5 * w / math.tan(0.5 * camera_angle_x)
        pose = CameraPose(width=w, height=h, focal=focal,
                          principal_point=(w / 2.0, h / 2.0), cam_to_world=matrix)

        if img.shape[2] == 4:
            mask = extract_mask(img, policy="alpha")
            alpha = img[:, :, 3:4]
            rgb = img[:, :, :3] * alpha + (1.0 - alpha) * background
        else:
            mask = extract_mask(img, policy="luminance", threshold=threshold)
            rgb = img[:, :, :3]
        views.append(ViewRecord(image=rgb, mask=mask, pose=pose))

    scale = float(manifest.get("scene_scale", 1.0))
    half = DEFAULT_HALF_EXTENT * scale
    lo = np.full(3, -half)
    hi = np.full(3, half)
    if "scene_bounds" in manifest:
        lo = np.asarray(manifest["scene_bounds"]["min"], dtype=np.float64)
        hi = np.asarray(manifest["scene_bounds"]["max"], dtype=np.float64)
    return Dataset(
        views=views,
        near=float(manifest.get("near", DEFAULT_NEAR)),
        far=float(manifest.get("far", DEFAULT_FAR)),
        scene_bounds=(lo, hi),
        background=background,
    )


# ---------------------------------------------------------------------------
# Analytic shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneSpec:
    """Declarative description of a synthetic scene.

    kind selects the shape: "sphere" (center/radius), "torus" (center,
    major_radius, minor_radius, axis z), "two_lobe" (two spheres of
    lobe_radius at center +- lobe_offset along x) or "rod" (z-aligned
    cylinder of radius and half_length). Camera ring parameters and the
    volume density of the solid interior live here too so a scene is fully
    reproducible from (spec, n_views, resolution, seed).
    """

    kind: str = "sphere"
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 0.5
    albedo: tuple[float, float, float] = (0.85, 0.30, 0.25)
    major_radius: float = 0.6
    minor_radius: float = 0.25
    lobe_offset: float = 0.4
    lobe_radius: float = 0.5
    albedo_b: tuple[float, float, float] = (0.25, 0.40, 0.85)
    half_length: float = 0.8
    camera_distance: float = 4.0
    camera_angle_x: float = 0.8
    near: float | None = None
    far: float | None = None
    scene_scale: float = 1.0
    density: float = 40.0
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)

    KINDS = ("sphere", "torus", "two_lobe", "rod")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown scene kind {self.kind!r}, expected one of {self.KINDS}")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown scene spec keys: {sorted(bad)}")
        d = dict(d)
        for key in ("center", "albedo", "albedo_b", "background"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            out[name] = list(v) if isinstance(v, tuple) else v
        return out


def _sphere_inside(p: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    d = p - center
    return np.einsum("...i,...i->...", d, d) < radius * radius


def _sphere_hit(o: np.ndarray, d: np.ndarray, center: np.ndarray,
                radius: float) -> np.ndarray:
    """True where the ray o + t d (t > 0) meets the open ball."""
    b = center - o
    t_ca = np.einsum("...i,...i->...", b, d)
    b2 = np.einsum("...i,...i->...", b, b)
    disc = t_ca * t_ca - (b2 - radius * radius)
    inside = b2 < radius * radius
    return inside | ((disc > 0.0) & (t_ca > 0.0))


def _torus_coeffs(o: np.ndarray, d: np.ndarray, big_r: float, small_r: float):
    """Quartic coefficients of the torus intersection (torus at origin, axis z)."""
    od = np.einsum("...i,...i->...", o, d)
    oo = np.einsum("...i,...i->...", o, o)
    alpha = oo + big_r * big_r - small_r * small_r
    a2 = d[..., 0] ** 2 + d[..., 1] ** 2
    a1 = 2.0 * (o[..., 0] * d[..., 0] + o[..., 1] * d[..., 1])
    a0 = o[..., 0] ** 2 + o[..., 1] ** 2
    k = 4.0 * big_r * big_r
    c3 = 4.0 * od
    c2 = 4.0 * od * od + 2.0 * alpha - k * a2
    c1 = 4.0 * alpha * od - k * a1
    c0 = alpha * alpha - k * a0
    return c3, c2, c1, c0


def _torus_hit(o: np.ndarray, d: np.ndarray, center: np.ndarray,
               big_r: float, small_r: float) -> np.ndarray:
    """Ray-torus test via the real positive roots of the quartic."""
    o = o - center
    c3, c2, c1, c0 = _torus_coeffs(o, d, big_r, small_r)
    n = c3.shape[0]
    comp = np.zeros((n, 4, 4))
    comp[:, 1, 0] = comp[:, 2, 1] = comp[:, 3, 2] = 1.0
    comp[:, 0, 3] = -c0
    comp[:, 1, 3] = -c1
    comp[:, 2, 3] = -c2
    comp[:, 3, 3] = -c3
    roots = np.linalg.eigvals(comp)
    real = np.abs(roots.imag) < 1e-8 * (1.0 + np.abs(roots.real))
    return np.any(real & (roots.real > 1e-9), axis=1)


def _rod_hit(o: np.ndarray, d: np.ndarray, center: np.ndarray,
             radius: float, half_length: float) -> np.ndarray:
    """Ray vs finite z-aligned cylinder (side surface + caps as a solid)."""
    o = o - center
    a = d[..., 0] ** 2 + d[..., 1] ** 2
    b = o[..., 0] * d[..., 0] + o[..., 1] * d[..., 1]
    c = o[..., 0] ** 2 + o[..., 1] ** 2 - radius * radius
    disc = b * b - a * c
    safe_a = np.where(a > 1e-14, a, 1.0)
    sq = np.sqrt(np.maximum(disc, 0.0))
    t_lo = np.where(a > 1e-14, (-b - sq) / safe_a, -np.inf)
    t_hi = np.where(a > 1e-14, (-b + sq) / safe_a, np.inf)
    radial_ok = np.where(a > 1e-14, disc > 0.0, c < 0.0)

    dz = d[..., 2]
    oz = o[..., 2]
    safe_dz = np.where(np.abs(dz) > 1e-14, dz, 1.0)
    z_a = (-half_length - oz) / safe_dz
    z_b = (half_length - oz) / safe_dz
    z_lo = np.where(np.abs(dz) > 1e-14, np.minimum(z_a, z_b), -np.inf)
    z_hi = np.where(np.abs(dz) > 1e-14, np.maximum(z_a, z_b), np.inf)
    axial_ok = np.where(np.abs(dz) > 1e-14, True, np.abs(oz) < half_length)

    lo = np.maximum(np.maximum(t_lo, z_lo), 1e-9)
    hi = np.minimum(t_hi, z_hi)
    return radial_ok & axial_ok & (hi > lo)


def _shade(base: np.ndarray, height: np.ndarray) -> np.ndarray:
    """Smooth vertical shading; keeps colors inside (0, 1)."""
    s = 0.55 + 0.45 * np.clip(height, -1.0, 1.0)
    return np.clip(s[..., None] * base, 0.0, 1.0)


def make_oracle(spec: SceneSpec) -> SceneOracle:
    """Occupancy / density / radiance / silhouette functions for a spec."""
    center = np.asarray(spec.center, dtype=np.float64)
    albedo = np.asarray(spec.albedo, dtype=np.float64)
    sigma0 = float(spec.density)

    if spec.kind == "sphere":
        r = float(spec.radius)

        def inside(p):
            return _sphere_inside(p, center, r)

        def radiance(p, d):
            return _shade(albedo, (p[..., 2] - center[2]) / r)

        def ray_hit(o, d):
            return _sphere_hit(o, d, center, r)

    elif spec.kind == "two_lobe":
        off = np.array([spec.lobe_offset, 0.0, 0.0])
        ca, cb = center + off, center - off
        r = float(spec.lobe_radius)
        albedo_b = np.asarray(spec.albedo_b, dtype=np.float64)

        def inside(p):
            return _sphere_inside(p, ca, r) | _sphere_inside(p, cb, r)

        def radiance(p, d):
            in_a = _sphere_inside(p, ca, r)
            base = np.where(in_a[..., None], albedo, albedo_b)
            return _shade(base, (p[..., 2] - center[2]) / r)

        def ray_hit(o, d):
            return _sphere_hit(o, d, ca, r) | _sphere_hit(o, d, cb, r)

    elif spec.kind == "torus":
        big_r, small_r = float(spec.major_radius), float(spec.minor_radius)

        def inside(p):
            q = p - center
            ring = np.sqrt(q[..., 0] ** 2 + q[..., 1] ** 2) - big_r
            return ring * ring + q[..., 2] ** 2 < small_r * small_r

        def radiance(p, d):
            q = p - center
            az = np.arctan2(q[..., 1], q[..., 0])
            base = albedo * 1.0
            out = _shade(base, 0.6 * np.cos(2.0 * az) + 0.4 * q[..., 2] / small_r)
            return out

        def ray_hit(o, d):
            return _torus_hit(o, d, center, big_r, small_r)

    else:  # rod
        r, h = float(spec.radius), float(spec.half_length)

        def inside(p):
            q = p - center
            return (q[..., 0] ** 2 + q[..., 1] ** 2 < r * r) & (np.abs(q[..., 2]) < h)

        def radiance(p, d):
            return _shade(albedo, (p[..., 2] - center[2]) / h)

        def ray_hit(o, d):
            return _rod_hit(o, d, center, r, h)

    def density(p):
        return np.where(inside(p), sigma0, 0.0)

    def occupancy(p):
        return inside(p)

    return SceneOracle(occupancy=occupancy, radiance=radiance,
                       density=density, ray_hit=ray_hit)


# ---------------------------------------------------------------------------
# Synthetic scene generation
# ---------------------------------------------------------------------------

def _look_at_pose(position: np.ndarray, target: np.ndarray,
                  width: int, height: int, focal: float) -> CameraPose:
    up = np.array([0.0, 0.0, 1.0])
    z_axis = position - target
    z_axis = z_axis / np.linalg.norm(z_axis)
    x_axis = np.cross(up, z_axis)
    x_axis = x_axis / np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = x_axis, y_axis, z_axis, position
    return CameraPose(width=width, height=height, focal=focal,
                      principal_point=(width / 2.0, height / 2.0), cam_to_world=m)


def hemisphere_poses(n_views: int, distance: float, width: int, height: int,
                     focal: float, rng: np.random.Generator,
                     target: np.ndarray | None = None) -> list[CameraPose]:
    """Cameras at random points of the upper hemisphere, all looking at the target."""
    target = np.zeros(3) if target is None else target
    poses = []
    while len(poses) < n_views:
        v = rng.normal(size=3)
        norm = np.linalg.norm(v)
        if norm < 1e-9:
            continue
        v /= norm
        v[2] = abs(v[2])
        # keep cameras clearly above the horizon and away from the pole
        # (the pole makes the z-up look-at frame degenerate)
        if not (0.08 <= v[2] <= 0.99):
            continue
        poses.append(_look_at_pose(target + distance * v, target, width, height, focal))
    return poses


def render_reference(oracle: SceneOracle, pose: CameraPose, near: float, far: float,
                     background: np.ndarray, n_steps: int = 1024,
                     chunk: int = 1024) -> np.ndarray:
    """Ground-truth image by fixed-step quadrature of the oracle density.

    Marches every pixel ray with n_steps midpoint samples and composites
    emission-absorption; treated as exact for metric purposes at the
    default step count.
    """
    from .sampling import camera_ray_grid

    origins, dirs = camera_ray_grid(pose)
    h = (far - near) / n_steps
    t_mid = near + (np.arange(n_steps) + 0.5) * h
    out = np.empty((pose.height * pose.width, 3))
    for start in range(0, origins.shape[0], chunk):
        o = origins[start:start + chunk]
        d = dirs[start:start + chunk]
        pts = o[:, None, :] + t_mid[None, :, None] * d[:, None, :]
        flat = pts.reshape(-1, 3)
        sigma = oracle.density(flat).reshape(pts.shape[:2])
        rgb = oracle.radiance(flat, np.repeat(d, n_steps, axis=0)).reshape(pts.shape)
        alpha = -np.expm1(-sigma * h)
        trans = np.cumprod(1.0 - alpha, axis=1)
        t_excl = np.concatenate([np.ones_like(trans[:, :1]), trans[:, :-1]], axis=1)
        w = t_excl * alpha
        color = np.einsum("ns,nsc->nc", w, rgb)
        color += (1.0 - w.sum(axis=1))[:, None] * background
        out[start:start + chunk] = color
    return out.reshape(pose.height, pose.width, 3)


def generate_synthetic_scene(
    spec: SceneSpec,
    n_views: int,
    resolution: int,
    seed: int,
    render_images: bool = True,
    n_steps: int = 1024,
) -> tuple[Dataset, SceneOracle]:
    """Build a synthetic dataset plus its ground-truth oracle.

    Cameras sit on the upper hemisphere looking at the scene center; masks
    come from the analytic silhouette test, images from dense quadrature of
    the oracle density. Fully deterministic for a given (spec, seed).

    render_images=False skips the (comparatively expensive) quadrature and
    stores constant-background images; masks and poses are unaffected, which
    is all hull carving needs.
    """
    from .sampling import camera_ray_grid

    if n_views < 2:
        raise ConfigError(f"need at least 2 views, got {n_views}")
    if resolution < 16:
        raise ConfigError(f"resolution must be >= 16, got {resolution}")

    oracle = make_oracle(spec)
    rng = np.random.default_rng(seed)
    focal = 0.5 * resolution / math.tan(0.5 * spec.camera_angle_x)
    center = np.asarray(spec.center, dtype=np.float64)
    poses = hemisphere_poses(n_views, spec.camera_distance, resolution, resolution,
                             focal, rng, target=center)

    near = spec.near if spec.near is not None else spec.camera_distance - 2.0
    far = spec.far if spec.far is not None else spec.camera_distance + 2.0
    background = np.asarray(spec.background, dtype=np.float64)
    half = DEFAULT_HALF_EXTENT * spec.scene_scale
    bounds = (center - half, center + half)

    views = []
    for pose in poses:
        origins, dirs = camera_ray_grid(pose)
        mask = oracle.ray_hit(origins, dirs).reshape(pose.height, pose.width)
        if render_images:
            image = render_reference(oracle, pose, near, far, background,
                                     n_steps=n_steps)
        else:
            image = np.broadcast_to(background, (pose.height, pose.width, 3)).copy()
        views.append(ViewRecord(image=image, mask=mask, pose=pose))

    dataset = Dataset(views=views, near=near, far=far, scene_bounds=bounds,
                      background=background)
    return dataset, oracle


# ---------------------------------------------------------------------------
# Dataset writing (used by the CLI `synth` command)
# ---------------------------------------------------------------------------

def write_dataset(dataset: Dataset, out_dir: str | Path,
                  split: str = "train") -> Path:
    """Write a dataset as transforms_<split>.json plus RGBA PNGs.

    The mask is stored in the alpha channel, so a round trip through
    load_dataset recovers it via the alpha policy.
    """
    out = Path(out_dir)
    (out / split).mkdir(parents=True, exist_ok=True)
    first = dataset.views[0].pose
    camera_angle_x = 2.0 * math.atan(0.5 * first.width / first.focal)
    frames = []
    for i, view in enumerate(dataset.views):
        rel = f"./{split}/r_{i:03d}"
        rgba = np.concatenate(
            [view.image, view.mask[:, :, None].astype(np.float64)], axis=2)
        arr = np.round(rgba * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="RGBA").save(out / f"{rel}.png")
        frames.append({
            "file_path": rel,
            "transform_matrix": view.pose.cam_to_world.tolist(),
        })
    manifest = {
        "camera_angle_x": camera_angle_x,
        "w": first.width,
        "h": first.height,
        "near": dataset.near,
        "far": dataset.far,
        "background": dataset.background.tolist(),
        "scene_bounds": {
            "min": dataset.scene_bounds[0].tolist(),
            "max": dataset.scene_bounds[1].tolist(),
        },
        "frames": frames,
    }
    path = out / f"transforms_{split}.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path
