"""Radiance-field toolkit with visual-hull empty-space skipping.

Submodules: scene_io (datasets, synthetic scenes), hull (voxel carving),
sampling (rays and sample placement), nerf_core (MLP, rendering,
gradients), training (the three-mode loop), eval_bench (metrics and the
throughput bench), cli (command-line pipeline).

Kept import-light on purpose: the CLI must be able to cap BLAS threads
before numpy loads, so pull what you need from the submodules.
"""

__version__ = "0.1.0"
