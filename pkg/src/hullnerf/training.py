"""End-to-end training loop in three modes.

baseline    hierarchical: a coarse model on stratified samples plus an
            optional fine model on importance-resampled unions, both
            updated from the summed photometric losses.
vax_single  one model; stratified samples are tested against the hull
            grid and the model only ever sees the surviving points.
vax_hier    hull rejection applied to both the coarse and the fine point
            sets (fine importance weights come from the masked coarse
            render, so masked samples carry zero probability mass).

Determinism: every stochastic draw comes from a stream derived from
(seed, purpose, iteration), so runs are reproducible bit-for-bit across
thread counts, and a checkpoint resume continues the exact trajectory.

Training checkpoints (little-endian): 8-byte magic ``VAXTRN01``, uint32
version, uint64 iteration, int64 seed, uint8 mode code, uint8 model
count, uint8 recalibrated flag, uint8 reserved, uint32 slot capacity;
then per model a parameter block (see nerf_core) followed by Adam state
(uint64 step, then first and second moment tensors in parameter order).
"""

from __future__ import annotations

import io
import math
import struct
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import (CapacityError, ConfigError, FormatError, TrainingError,
                     ValidationError)
from .hull import VoxelGrid, load_grid
from .nerf_core import (AdamState, MlpParams, adam_step, backward_from_cache,
                        init_adam_state, init_mlp_params, read_params,
                        render_packed, rgb_loss, write_params)
from .sampling import (ViewArrays, coarse_t_batch, deltas_from_t,
                       draw_pixel_batch, calibrate_capacity, fine_t_batch,
                       keep_mask_batch, pack_arrays)
from .scene_io import Dataset

TRAIN_MAGIC = b"VAXTRN01"
_MODES = ("baseline", "vax_single", "vax_hier")
_STREAM_INIT, _STREAM_CALIB, _STREAM_ITER = 0, 1, 2


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    mode: str = "baseline"
    n_coarse: int = 64
    n_fine: int = 0
    batch_rays: int = 4096
    iterations: int = 1_000_000
    lr_init: float = 5e-4
    lr_final: float = 5e-6
    grid_path: str | None = None
    capacity_safety: float = 1.1
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0
    stratified: bool = True
    density_noise_std: float = 0.0  # raw-density perturbation; off by default
    # validation
    val_views: int = 2
    val_scale: int = 2
    val_chunk: int = 4096
    # architecture
    width: int = 256
    depth: int = 8
    levels_pos: int = 10
    levels_dir: int = 4
    color_width: int | None = None
    density_activation: str = "softplus"
    density_bias: float = -1.0
    dtype: str = "float64"

    def validate(self, have_grid: bool = False) -> None:
        if self.mode not in _MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {_MODES}")
        if self.mode in ("vax_single", "vax_hier") and not (have_grid or self.grid_path):
            raise ConfigError(f"mode {self.mode} requires a hull grid")
        if self.mode == "vax_single" and self.n_fine != 0:
            raise ConfigError("vax_single uses a single model; set n_fine = 0")
        if self.mode == "vax_hier" and self.n_fine <= 0:
            raise ConfigError("vax_hier needs n_fine > 0")
        if self.n_coarse < 1 or self.batch_rays < 1 or self.iterations < 0:
            raise ConfigError("n_coarse, batch_rays must be >= 1 and iterations >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def uses_fine(self) -> bool:
        return self.n_fine > 0

    @property
    def label(self) -> str:
        if self.mode == "baseline":
            return f"c{self.n_coarse}f{self.n_fine}"
        if self.mode == "vax_single":
            return f"vax_c{self.n_coarse}"
        return f"vax_c{self.n_coarse}f{self.n_fine}"

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown training config keys: {sorted(bad)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def lr_at(iteration: int, config: TrainConfig) -> float:
    """Exponential decay from lr_init to lr_final over the configured run."""
    if config.iterations <= 0:
        return config.lr_init
    frac = iteration / config.iterations
    return config.lr_init * (config.lr_final / config.lr_init) ** frac


# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------

LOG_HEADER = "iter,wall_s,loss,points,rays_per_s,val_psnr"


@dataclass
class LogRow:
    iteration: int
    wall_s: float
    loss: float
    points: int
    rays_per_s: float
    val_psnr: float  # nan when not computed at this row


@dataclass
class TrainLog:
    rows: list[LogRow] = field(default_factory=list)

    def append(self, row: LogRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValidationError("log iterations must be strictly increasing")
        self.rows.append(row)

    def loss_column(self) -> np.ndarray:
        return np.array([r.loss for r in self.rows])

    def to_csv(self, path: str | Path) -> None:
        lines = [LOG_HEADER]
        for r in self.rows:
            lines.append(f"{r.iteration},{r.wall_s:.6f},{r.loss!r},{r.points},"
                         f"{r.rays_per_s:.3f},{r.val_psnr!r}")
        Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Model and run state
# ---------------------------------------------------------------------------

@dataclass
class RadianceModel:
    mode: str
    coarse: MlpParams
    fine: MlpParams | None = None

    @property
    def primary(self) -> MlpParams:
        """The parameter set used for final renders."""
        return self.fine if self.fine is not None else self.coarse


@dataclass
class TrainState:
    model: RadianceModel
    adam_coarse: AdamState
    adam_fine: AdamState | None
    iteration: int
    capacity: int
    recalibrated: bool
    seed: int


@dataclass
class TrainRun:
    """Prepared training session: immutable data plus mutable state."""

    config: TrainConfig
    state: TrainState
    arrays: ViewArrays
    grid: VoxelGrid | None
    near: float
    far: float
    background: np.ndarray
    val_views: list


def _iter_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, _STREAM_ITER, iteration]))


def _split_views(dataset: Dataset, config: TrainConfig):
    n_val = config.val_views
    if 0 < n_val < len(dataset.views):
        return dataset.views[:-n_val], dataset.views[-n_val:]
    return dataset.views, []


def _init_model(config: TrainConfig) -> RadianceModel:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_INIT]))
    kw = dict(levels_pos=config.levels_pos, levels_dir=config.levels_dir,
              depth=config.depth, width=config.width,
              color_width=config.color_width,
              density_activation=config.density_activation,
              density_bias=config.density_bias, dtype=config.np_dtype)
    coarse = init_mlp_params(rng, **kw)
    fine = init_mlp_params(rng, **kw) if config.uses_fine else None
    return RadianceModel(mode=config.mode, coarse=coarse, fine=fine)


def prepare(dataset: Dataset, config: TrainConfig, grid: VoxelGrid | None = None,
            state: TrainState | None = None) -> TrainRun:
    """Load/derive everything a training loop needs; resumable via state."""
    config.validate(have_grid=grid is not None)
    if config.mode == "baseline":
        grid = None  # baseline never rejects, even when a grid is around
    elif grid is None:
        grid = load_grid(config.grid_path)
    train_views, val_views = _split_views(dataset, config)
    if not train_views:
        raise ConfigError("dataset has no training views")
    arrays = ViewArrays.from_views(train_views)

    if state is None:
        capacity = 0
        if grid is not None:
            capacity = calibrate_capacity(dataset, grid, config)
        model = _init_model(config)
        state = TrainState(
            model=model,
            adam_coarse=init_adam_state(model.coarse),
            adam_fine=init_adam_state(model.fine) if model.fine is not None else None,
            iteration=0, capacity=capacity, recalibrated=False, seed=config.seed)
    return TrainRun(config=config, state=state, arrays=arrays, grid=grid,
                    near=dataset.near, far=dataset.far,
                    background=dataset.background, val_views=val_views)


# ---------------------------------------------------------------------------
# One training step
# ---------------------------------------------------------------------------

def _attempt_step(run: TrainRun, iteration: int) -> tuple[float, int]:
    config, state = run.config, run.state
    rng = _iter_rng(state.seed, iteration)
    batch = config.batch_rays
    view_idx, rows, cols = draw_pixel_batch(run.arrays, batch, rng)
    targets = run.arrays.images[view_idx, rows, cols]
    origins, dirs = run.arrays.rays_for_pixels(view_idx, rows, cols)

    t = coarse_t_batch(run.near, run.far, config.n_coarse, config.stratified,
                       rng, batch)
    delta = deltas_from_t(t, run.far)
    if run.grid is None:
        keep = np.ones(t.shape, dtype=bool)
        cap = config.n_coarse
    else:
        keep = keep_mask_batch(run.grid, origins, dirs, t)
        cap = state.capacity
    packed = pack_arrays(origins, dirs, t, delta, keep, cap)

    def noise_for(p):
        if config.density_noise_std <= 0:
            return None
        return config.density_noise_std * rng.standard_normal(
            p.points_evaluated)

    colors, cache = render_packed(state.model.coarse, packed, run.background,
                                  sigma_noise=noise_for(packed))
    loss_c = rgb_loss(colors, targets)
    points = packed.points_evaluated
    dcolors = 2.0 * (colors - targets) / batch
    grads_c = backward_from_cache(state.model.coarse, cache, dcolors)
    loss_total = loss_c

    grads_f = None
    if config.uses_fine:
        w_full = np.zeros(t.shape)
        w_full[keep] = cache["render"]["weights"][packed.valid]
        draws = fine_t_batch(t, w_full, config.n_fine,
                             rng.random((batch, config.n_fine)))
        union = np.sort(np.concatenate([t, draws], axis=1), axis=1)
        delta_u = deltas_from_t(union, run.far)
        if run.grid is None:
            keep_u = np.ones(union.shape, dtype=bool)
            cap_u = union.shape[1]
        else:
            keep_u = keep_mask_batch(run.grid, origins, dirs, union)
            cap_u = state.capacity
        packed_f = pack_arrays(origins, dirs, union, delta_u, keep_u, cap_u)
        colors_f, cache_f = render_packed(state.model.fine, packed_f,
                                          run.background,
                                          sigma_noise=noise_for(packed_f))
        loss_f = rgb_loss(colors_f, targets)
        dcolors_f = 2.0 * (colors_f - targets) / batch
        grads_f = backward_from_cache(state.model.fine, cache_f, dcolors_f)
        loss_total = loss_c + loss_f
        points += packed_f.points_evaluated

    if not np.isfinite(loss_total):
        raise TrainingError("non-finite training loss", iteration=iteration,
                            seed=state.seed)

    lr = lr_at(iteration, config)
    new_coarse, state.adam_coarse = adam_step(
        state.model.coarse, grads_c, state.adam_coarse, lr)
    state.model.coarse = new_coarse
    if grads_f is not None:
        new_fine, state.adam_fine = adam_step(
            state.model.fine, grads_f, state.adam_fine, lr)
        state.model.fine = new_fine
    return loss_total, points


def run_step(run: TrainRun, iteration: int) -> tuple[float, int]:
    """Execute one training iteration, recalibrating capacity at most once.

    A second capacity overflow aborts with a TrainingError carrying the
    iteration and seed needed to reproduce the batch.
    """
    try:
        return _attempt_step(run, iteration)
    except CapacityError as err:
        if run.state.recalibrated:
            raise TrainingError(
                f"capacity overflow recurred (observed {err.observed_max})",
                iteration=iteration, seed=run.state.seed) from err
        run.state.capacity = max(
            1, math.ceil(run.config.capacity_safety * err.observed_max))
        run.state.recalibrated = True
        return _attempt_step(run, iteration)


# ---------------------------------------------------------------------------
# Validation metric
# ---------------------------------------------------------------------------

def _validation_psnr(run: TrainRun) -> float:
    if not run.val_views:
        return float("nan")
    from .eval_bench import psnr, render_image

    s = run.config.val_scale
    vals = []
    for view in run.val_views:
        pose = view.pose.scaled(s) if s > 1 else view.pose
        img = render_image(run.state.model, pose, run.config, grid=run.grid,
                           near=run.near, far=run.far,
                           background=run.background, chunk=run.config.val_chunk)
        h, w = view.image.shape[:2]
        gt = view.image
        if s > 1:
            gt = gt[: h - h % s, : w - w % s].reshape(
                h // s, s, w // s, s, 3).mean(axis=(1, 3))
        vals.append(psnr(img, gt))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------

def train_session(dataset: Dataset, config: TrainConfig,
                  grid: VoxelGrid | None = None, state: TrainState | None = None,
                  checkpoint_dir: str | Path | None = None,
                  ) -> tuple[TrainState, TrainLog]:
    """Run (or continue) training; returns the full final state and log.

    With ``state`` from resume(), continues the exact trajectory of the
    original run: iteration i always consumes the rng stream derived from
    (seed, i), so train(n) equals train(k) + resume + train(n - k).
    """
    run = prepare(dataset, config, grid=grid, state=state)
    log = TrainLog()
    start_iter = run.state.iteration
    t0 = time.perf_counter()
    t_last = t0
    iter_last = start_iter

    for i in range(start_iter, config.iterations):
        loss, points = run_step(run, i)
        run.state.iteration = i + 1
        done = i + 1 == config.iterations
        if (i + 1) % config.log_every == 0 or done:
            now = time.perf_counter()
            d_iter = (i + 1) - iter_last
            rays_per_s = config.batch_rays * d_iter / max(now - t_last, 1e-9)
            log.append(LogRow(iteration=i + 1, wall_s=now - t0, loss=loss,
                              points=points, rays_per_s=rays_per_s,
                              val_psnr=_validation_psnr(run)))
            t_last, iter_last = now, i + 1
        if (checkpoint_dir is not None and config.checkpoint_every > 0
                and (i + 1) % config.checkpoint_every == 0 and not done):
            save_checkpoint(run.state,
                            Path(checkpoint_dir) / f"checkpoint_{i + 1:07d}.vaxtrn")
    return run.state, log


def train(dataset: Dataset, config: TrainConfig, grid: VoxelGrid | None = None,
          state: TrainState | None = None,
          checkpoint_dir: str | Path | None = None,
          ) -> tuple[RadianceModel, TrainLog]:
    """train_session, returning just the model and the log."""
    final_state, log = train_session(dataset, config, grid=grid, state=state,
                                     checkpoint_dir=checkpoint_dir)
    return final_state.model, log


def foreground_coverage(dataset: Dataset, grid: VoxelGrid, n_samples: int,
                        views=None) -> tuple[int, int]:
    """How many mask-foreground rays keep at least one in-hull sample.

    Scans every foreground pixel of the given views (default: all views)
    with the deterministic midpoint sample schedule and returns
    (n_foreground_rays, n_covered_rays). Full coverage is the precondition
    for hull-masked training to see every foreground target.
    """
    from .sampling import camera_ray_grid

    views = dataset.views if views is None else views
    t = coarse_t_batch(dataset.near, dataset.far, n_samples, False, None, 1)[0]
    total = covered = 0
    for view in views:
        sel = view.mask.reshape(-1)
        if not sel.any():
            continue
        origins, dirs = camera_ray_grid(view.pose)
        origins, dirs = origins[sel], dirs[sel]
        keep = keep_mask_batch(grid, origins, dirs,
                               np.broadcast_to(t, (origins.shape[0], t.size)))
        total += origins.shape[0]
        covered += int(keep.any(axis=1).sum())
    return total, covered


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def _write_adam(f: BinaryIO, state: AdamState) -> None:
    f.write(struct.pack("<Q", state.step))
    for a in state.m + state.v:
        f.write(np.ascontiguousarray(a).tobytes())


def _read_adam(f: BinaryIO, params: MlpParams) -> AdamState:
    (step,) = struct.unpack("<Q", f.read(8))
    arrays = []
    for ref in params.arrays() * 2:
        raw = f.read(ref.size * ref.dtype.itemsize)
        if len(raw) != ref.size * ref.dtype.itemsize:
            raise FormatError("truncated optimizer state")
        arrays.append(np.frombuffer(raw, dtype=ref.dtype).reshape(ref.shape).copy())
    n = len(arrays) // 2
    return AdamState(m=arrays[:n], v=arrays[n:], step=step)


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    buf = io.BytesIO()
    buf.write(TRAIN_MAGIC)
    buf.write(struct.pack("<I", 1))
    buf.write(struct.pack("<Q", state.iteration))
    buf.write(struct.pack("<q", state.seed))
    n_models = 2 if state.model.fine is not None else 1
    buf.write(struct.pack("<4B", _MODES.index(state.model.mode), n_models,
                          1 if state.recalibrated else 0, 0))
    buf.write(struct.pack("<I", state.capacity))
    write_params(buf, state.model.coarse)
    _write_adam(buf, state.adam_coarse)
    if state.model.fine is not None:
        write_params(buf, state.model.fine)
        _write_adam(buf, state.adam_fine)
    Path(path).write_bytes(buf.getvalue())


def resume(path: str | Path) -> TrainState:
    """Load a training checkpoint; FormatError for anything unreadable."""
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"no checkpoint at {p}")
    with open(p, "rb") as f:
        if f.read(8) != TRAIN_MAGIC:
            raise FormatError(f"{p}: bad checkpoint magic")
        (version,) = struct.unpack("<I", f.read(4))
        if version != 1:
            raise FormatError(f"{p}: unsupported checkpoint version {version}")
        (iteration,) = struct.unpack("<Q", f.read(8))
        (seed,) = struct.unpack("<q", f.read(8))
        mode_code, n_models, recalibrated, _ = struct.unpack("<4B", f.read(4))
        if mode_code >= len(_MODES) or n_models not in (1, 2):
            raise FormatError(f"{p}: bad mode/model count")
        (capacity,) = struct.unpack("<I", f.read(4))
        coarse = read_params(f)
        adam_coarse = _read_adam(f, coarse)
        fine = adam_fine = None
        if n_models == 2:
            fine = read_params(f)
            adam_fine = _read_adam(f, fine)
    model = RadianceModel(mode=_MODES[mode_code], coarse=coarse, fine=fine)
    return TrainState(model=model, adam_coarse=adam_coarse, adam_fine=adam_fine,
                      iteration=iteration, capacity=capacity,
                      recalibrated=bool(recalibrated), seed=seed)
