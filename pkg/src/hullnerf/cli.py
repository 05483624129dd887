"""Command-line pipeline: synth, carve, train, render, eval, bench.

Commands compose only through files. Every run writes its resolved
configuration next to its outputs so it can be reproduced exactly. Exit
codes: 2 usage/config, 3 data/format, 4 numeric/training.

Heavy imports happen inside the command handlers so that --threads can
cap the BLAS pool before numpy is loaded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import (CapacityError, ConfigError, DatasetFormatError,
                     FormatError, TrainingError, ValidationError)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _ensure_fresh(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")


def _write_resolved(directory: Path, payload: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "resolved_config.json").write_text(json.dumps(payload, indent=1))


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no config file {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p} is not valid JSON: {e}")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .scene_io import SceneSpec, generate_synthetic_scene, write_dataset

    spec_dict = _load_json(args.spec) if args.spec else {"kind": args.kind}
    spec = SceneSpec.from_dict(spec_dict)
    out = Path(args.out)
    _ensure_fresh(out / "transforms_train.json", args.force)

    dataset, _ = generate_synthetic_scene(spec, args.views, args.resolution,
                                          args.seed)
    write_dataset(dataset, out, split="train")
    if args.test_views > 0:
        test_ds, _ = generate_synthetic_scene(spec, args.test_views,
                                              args.resolution, args.seed + 1)
        write_dataset(test_ds, out, split="test")
    _write_resolved(out, {
        "command": "synth", "spec": spec.to_dict(), "views": args.views,
        "resolution": args.resolution, "seed": args.seed,
        "test_views": args.test_views,
    })
    print(f"wrote {args.views} train views to {out}")
    return 0


# ---------------------------------------------------------------------------
# carve
# ---------------------------------------------------------------------------

def cmd_carve(args) -> int:
    from .hull import carve, dilate, dilation_radius, occupancy_fraction, save_grid
    from .scene_io import load_dataset

    dataset = load_dataset(args.dataset, args.split)
    grid = carve(dataset, args.resolution)
    if args.dilation == "auto":
        radius = dilation_radius(max(grid.resolution), args.n_samples)
    else:
        try:
            radius = int(args.dilation)
        except ValueError:
            raise ConfigError(
                f"--dilation must be an integer or 'auto', got {args.dilation!r}")
        if radius < 0:
            raise ConfigError("--dilation must be >= 0")
    if radius > 0:
        grid = dilate(grid, radius)

    out = Path(args.out)
    _ensure_fresh(out, args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_grid(grid, out)
    frac = occupancy_fraction(grid)
    _write_resolved(out.parent, {
        "command": "carve", "dataset": args.dataset, "split": args.split,
        "resolution": args.resolution, "dilation": radius,
        "n_samples": args.n_samples, "out": str(out),
        "occupancy_fraction": frac,
    })
    print(f"occupancy_fraction {frac:.6f}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _train_config_from_args(args) -> dict:
    cfg = _load_json(args.config) if args.config else {}
    overrides = {
        "mode": args.mode, "iterations": args.iterations,
        "n_coarse": args.n_coarse, "n_fine": args.n_fine,
        "batch_rays": args.batch_rays, "seed": args.seed,
        "width": args.width, "depth": args.depth,
        "levels_pos": args.levels_pos, "log_every": args.log_every,
        "lr_init": args.lr_init, "lr_final": args.lr_final,
        "grid_path": args.grid, "dtype": args.dtype,
        "checkpoint_every": args.checkpoint_every,
    }
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    return cfg


def cmd_train(args) -> int:
    from .scene_io import load_dataset
    from .training import TrainConfig, resume, save_checkpoint, train_session

    config = TrainConfig.from_dict(_train_config_from_args(args))
    out = Path(args.out)
    _ensure_fresh(out / "checkpoint_final.vaxtrn", args.force)
    out.mkdir(parents=True, exist_ok=True)

    dataset = load_dataset(args.dataset, args.split)
    state = resume(args.resume) if args.resume else None

    _write_resolved(out, {
        "command": "train", "dataset": args.dataset, "split": args.split,
        "config": config.to_dict(), "resume": args.resume,
    })
    final_state, log = train_session(dataset, config, state=state,
                                     checkpoint_dir=out)
    log.to_csv(out / "log.csv")
    save_checkpoint(final_state, out / "checkpoint_final.vaxtrn")
    if log.rows:
        last = log.rows[-1]
        print(f"finished iter {last.iteration} loss {last.loss:.6f} "
              f"val_psnr {last.val_psnr:.2f}")
    else:
        print("no iterations ran; wrote checkpoint as-is")
    return 0


# ---------------------------------------------------------------------------
# render / eval
# ---------------------------------------------------------------------------

def _load_model_bundle(args):
    from .hull import load_grid
    from .training import TrainConfig, resume

    state = resume(args.checkpoint)
    cfg_path = Path(args.config) if args.config else (
        Path(args.checkpoint).parent / "resolved_config.json")
    if not cfg_path.is_file():
        raise ConfigError(f"no training config at {cfg_path}; pass --config")
    resolved = json.loads(cfg_path.read_text())
    config = TrainConfig.from_dict(resolved.get("config", resolved))
    grid = None
    if config.mode in ("vax_single", "vax_hier"):
        grid_path = args.grid or config.grid_path
        if not grid_path:
            raise ConfigError("vax checkpoints need --grid at render time")
        grid = load_grid(grid_path)
    return state.model, config, grid


def cmd_render(args) -> int:
    from .eval_bench import render_image, write_png
    from .scene_io import load_dataset

    model, config, grid = _load_model_bundle(args)
    dataset = load_dataset(args.dataset, args.split)
    if not args.indices:
        indices = list(range(len(dataset.views)))
    else:
        try:
            indices = [int(s) for s in args.indices.split(",")]
        except ValueError:
            raise ConfigError(f"--indices must be comma-separated integers, "
                              f"got {args.indices!r}")
        if any(i < 0 or i >= len(dataset.views) for i in indices):
            raise ConfigError(f"--indices out of range for {len(dataset.views)} views")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in indices:
        view = dataset.views[i]
        img = render_image(model, view.pose, config, grid=grid,
                           near=dataset.near, far=dataset.far,
                           background=dataset.background, chunk=args.chunk)
        path = out / f"render_{args.split}_{i:03d}.png"
        _ensure_fresh(path, args.force)
        write_png(img, path)
    _write_resolved(out, {
        "command": "render", "checkpoint": args.checkpoint,
        "dataset": args.dataset, "split": args.split, "indices": indices,
    })
    print(f"rendered {len(indices)} views to {out}")
    return 0


def cmd_eval(args) -> int:
    from .eval_bench import psnr, render_image, ssim
    from .scene_io import load_dataset

    model, config, grid = _load_model_bundle(args)
    dataset = load_dataset(args.dataset, args.split)
    if not dataset.views:
        raise ConfigError(f"split {args.split!r} has no views to evaluate")
    lines = ["view,psnr,ssim"]
    scores = []
    for i, view in enumerate(dataset.views):
        img = render_image(model, view.pose, config, grid=grid,
                           near=dataset.near, far=dataset.far,
                           background=dataset.background, chunk=args.chunk)
        p, s = psnr(img, view.image), ssim(img, view.image)
        scores.append((p, s))
        lines.append(f"{i},{p:.4f},{s:.6f}")
        print(f"view {i:3d}  psnr {p:7.3f}  ssim {s:.4f}")
    mean_p = sum(p for p, _ in scores) / len(scores)
    mean_s = sum(s for _, s in scores) / len(scores)
    lines.append(f"mean,{mean_p:.4f},{mean_s:.6f}")
    print(f"mean      psnr {mean_p:7.3f}  ssim {mean_s:.4f}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    from .eval_bench import bench_sampling, write_bench_csv
    from .hull import load_grid
    from .scene_io import load_dataset
    from .training import TrainConfig

    entries = _load_json(args.configs)
    if not isinstance(entries, list):
        raise ConfigError("bench config file must hold a JSON list of configs")
    configs = [TrainConfig.from_dict(e) for e in entries]
    dataset = load_dataset(args.dataset, args.split)
    grid = load_grid(args.grid)
    rows = bench_sampling(dataset, grid, configs, warmup=args.warmup,
                          steps=args.steps, repeats=args.repeats)
    for r in rows:
        print(f"{r.method:16s} samples/batch {r.samples_per_batch:12.1f} "
              f"rays/s {r.rays_per_sec:10.1f} occ {r.occupancy_fraction:.4f} "
              f"speedup {r.speedup:.2f}x")
    if args.out:
        out = Path(args.out)
        _ensure_fresh(out, args.force)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_bench_csv(rows, out)
        _write_resolved(out.parent, {
            "command": "bench", "dataset": args.dataset, "grid": args.grid,
            "configs": entries, "warmup": args.warmup, "steps": args.steps,
            "repeats": args.repeats,
        })
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hullnerf",
        description="Radiance-field training with visual-hull empty-space skipping")
    p.add_argument("--threads", type=int, default=0,
                   help="cap BLAS/worker threads (0 = all cores)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate an analytic synthetic dataset")
    s.add_argument("--spec", help="JSON scene spec file")
    s.add_argument("--kind", default="sphere",
                   choices=["sphere", "torus", "two_lobe", "rod"])
    s.add_argument("--out", required=True)
    s.add_argument("--views", type=int, default=20)
    s.add_argument("--test-views", type=int, default=0)
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("carve", help="carve a visual-hull occupancy grid")
    c.add_argument("--dataset", required=True)
    c.add_argument("--split", default="train")
    c.add_argument("--resolution", type=int, default=400)
    c.add_argument("--dilation", default="auto",
                   help="cells, or 'auto' for ceil(grid/n_samples)")
    c.add_argument("--n-samples", type=int, default=64,
                   help="per-ray sample count the auto dilation rule assumes")
    c.add_argument("--out", required=True)
    c.add_argument("--force", action="store_true")
    c.set_defaults(func=cmd_carve)

    t = sub.add_parser("train", help="train a radiance field")
    t.add_argument("--dataset", required=True)
    t.add_argument("--split", default="train")
    t.add_argument("--config", help="JSON training config; flags override")
    t.add_argument("--mode", choices=["baseline", "vax_single", "vax_hier"])
    t.add_argument("--iterations", type=int)
    t.add_argument("--n-coarse", type=int, dest="n_coarse")
    t.add_argument("--n-fine", type=int, dest="n_fine")
    t.add_argument("--batch-rays", type=int, dest="batch_rays")
    t.add_argument("--seed", type=int)
    t.add_argument("--width", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--levels-pos", type=int, dest="levels_pos")
    t.add_argument("--log-every", type=int, dest="log_every")
    t.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    t.add_argument("--lr-init", type=float, dest="lr_init")
    t.add_argument("--lr-final", type=float, dest="lr_final")
    t.add_argument("--dtype", choices=["float32", "float64"])
    t.add_argument("--grid", help="hull grid path (vax modes)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", required=True)
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render views from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--config", help="training config JSON (default: sibling)")
    r.add_argument("--dataset", required=True)
    r.add_argument("--split", default="test")
    r.add_argument("--indices", help="comma-separated view indices")
    r.add_argument("--grid")
    r.add_argument("--chunk", type=int, default=8192)
    r.add_argument("--out", required=True)
    r.add_argument("--force", action="store_true")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint against a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config")
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--grid")
    e.add_argument("--chunk", type=int, default=8192)
    e.add_argument("--out", help="CSV output path")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="training-throughput benchmark rows")
    b.add_argument("--dataset", required=True)
    b.add_argument("--split", default="train")
    b.add_argument("--grid", required=True)
    b.add_argument("--configs", required=True,
                   help="JSON list of training configs")
    b.add_argument("--warmup", type=int, default=20)
    b.add_argument("--steps", type=int, default=200)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--out")
    b.add_argument("--force", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads and args.threads > 0:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, ValidationError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, CapacityError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
