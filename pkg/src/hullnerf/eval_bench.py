"""Full-image rendering, image quality metrics and the throughput bench.

Rendering at evaluation time is fully deterministic: coarse samples sit at
bin midpoints and hierarchical resampling uses fixed mid-quantile draws,
so images are independent of chunking and reproducible bit-for-bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ValidationError
from .hull import VoxelGrid, occupancy_fraction
from .nerf_core import MlpParams, render_packed
from .sampling import (camera_ray_grid, coarse_t_batch, deltas_from_t,
                       fine_t_batch, keep_mask_batch, pack_arrays)
from .scene_io import CameraPose, Dataset
from .training import RadianceModel, TrainConfig, prepare, run_step

PSNR_CAP = 99.0  # reported for identical images; tables need finite entries
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _as_model(model) -> RadianceModel:
    if isinstance(model, MlpParams):
        return RadianceModel(mode="baseline", coarse=model, fine=None)
    return model


def render_image(model, pose: CameraPose, config: TrainConfig,
                 grid: VoxelGrid | None = None, *, near: float, far: float,
                 background: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Render one view; (H, W, 3) float64 in [0, 1].

    Chunk size is a pure performance knob: padded slots contribute exact
    zeros, so the output does not depend on how rays are grouped.
    """
    model = _as_model(model)
    origins_all, dirs_all = camera_ray_grid(pose)
    n_rays = origins_all.shape[0]
    n_c, n_f = config.n_coarse, config.n_fine
    hierarchical = model.fine is not None and n_f > 0
    bg = np.asarray(background, dtype=np.float64)
    out = np.empty((n_rays, 3))

    for start in range(0, n_rays, chunk):
        origins = origins_all[start:start + chunk]
        dirs = dirs_all[start:start + chunk]
        b = origins.shape[0]
        t = coarse_t_batch(near, far, n_c, False, None, b)
        delta = deltas_from_t(t, far)
        if grid is None:
            keep = np.ones(t.shape, dtype=bool)
        else:
            keep = keep_mask_batch(grid, origins, dirs, t)
        cap = max(1, int(keep.sum(axis=1).max()))
        packed = pack_arrays(origins, dirs, t, delta, keep, cap)
        colors, cache = render_packed(model.coarse, packed, bg)

        if hierarchical:
            w_full = np.zeros(t.shape)
            w_full[keep] = cache["render"]["weights"][packed.valid]
            u = np.broadcast_to((np.arange(n_f) + 0.5) / n_f, (b, n_f))
            draws = fine_t_batch(t, w_full, n_f, u)
            union = np.sort(np.concatenate([t, draws], axis=1), axis=1)
            delta_u = deltas_from_t(union, far)
            if grid is None:
                keep_u = np.ones(union.shape, dtype=bool)
            else:
                keep_u = keep_mask_batch(grid, origins, dirs, union)
            cap_u = max(1, int(keep_u.sum(axis=1).max()))
            packed_f = pack_arrays(origins, dirs, union, delta_u, keep_u, cap_u)
            colors, _ = render_packed(model.fine, packed_f, bg)
        out[start:start + chunk] = colors
    return np.clip(out.reshape(pose.height, pose.width, 3), 0.0, 1.0)


def write_png(image: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    arr = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter2(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation over the two leading axes."""
    a = sliding_window_view(img, kernel.size, axis=0) @ kernel
    return sliding_window_view(a, kernel.size, axis=1) @ kernel


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with the canonical constants.

    11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range
    1.0; means over the valid window region and over channels.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValidationError(f"images must be at least {SSIM_WINDOW} px per side")

    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        ux, uy = _filter2(x, kernel), _filter2(y, kernel)
        uxx, uyy = _filter2(x * x, kernel), _filter2(y * y, kernel)
        uxy = _filter2(x * y, kernel)
        vx = uxx - ux * ux
        vy = uyy - uy * uy
        cov = uxy - ux * uy
        s = ((2 * ux * uy + c1) * (2 * cov + c2)) / (
            (ux * ux + uy * uy + c1) * (vx + vy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Throughput benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchRow:
    method: str
    samples_per_batch: float
    rays_per_sec: float
    occupancy_fraction: float
    speedup: float


BENCH_HEADER = "method,samples_per_batch,rays_per_sec,occupancy_fraction,speedup"


def bench_sampling(dataset: Dataset, grid: VoxelGrid,
                   configs: list[TrainConfig], warmup: int = 20,
                   steps: int = 200, repeats: int = 3) -> list[BenchRow]:
    """Timed training steps per config; speedups relative to the baseline.

    Every run uses the config's own seed, so samples_per_batch is exactly
    reproducible; throughput is the median over repeats.
    """
    if len(configs) < 2 or not any(c.mode == "baseline" for c in configs):
        raise ConfigError("benchmark needs >= 2 configs including a baseline")

    raw = []
    for config in configs:
        throughputs = []
        samples = 0.0
        for _ in range(repeats):
            run = prepare(dataset, config, grid=grid)
            for i in range(warmup):
                run_step(run, i)
            points = 0
            t0 = time.perf_counter()
            for i in range(warmup, warmup + steps):
                _, p = run_step(run, i)
                points += p
            elapsed = max(time.perf_counter() - t0, 1e-9)
            throughputs.append(config.batch_rays * steps / elapsed)
            samples = points / steps
        occ = 1.0 if config.mode == "baseline" else occupancy_fraction(grid)
        raw.append((config.label, samples, float(np.median(throughputs)), occ))

    base_rps = next(r[2] for r, c in zip(raw, configs) if c.mode == "baseline")
    return [BenchRow(method=m, samples_per_batch=s, rays_per_sec=r,
                     occupancy_fraction=o, speedup=r / base_rps)
            for m, s, r, o in raw]


def write_bench_csv(rows: list[BenchRow], path: str | Path) -> None:
    lines = [BENCH_HEADER]
    for r in rows:
        lines.append(f"{r.method},{r.samples_per_batch:.1f},{r.rays_per_sec:.1f},"
                     f"{r.occupancy_fraction:.6f},{r.speedup:.4f}")
    Path(path).write_text("\n".join(lines) + "\n")
