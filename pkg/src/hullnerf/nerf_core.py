"""Differentiable radiance-field core.

Everything here is plain numpy with hand-written reverse-mode gradients;
the gradient of every parameter is exact (validated against central finite
differences in the test suite).

Rendering follows the emission-absorption quadrature

    alpha_i = 1 - exp(-sigma_i * delta_i)
    T_i     = prod_{j<i} (1 - alpha_j)          (exclusive transmittance)
    w_i     = T_i * alpha_i
    color   = sum_i w_i * rgb_i

with sigma forced to zero at samples whose valid flag is False, which is
how hull-rejected points are skipped without touching the quadrature
geometry.

Checkpoint layout for one parameter set (little-endian): 8-byte magic
``VAXMLP01``, uint32 version, uint8 dtype code (1=float32, 2=float64),
uint8 density activation (0=relu, 1=softplus), uint8 include_input, uint8
reserved, six uint32 (levels_pos, levels_dir, depth, width, color_width,
skip_layer), float64 density_bias, then raw parameter tensors in
declaration order: trunk (weight, bias) pairs, density head, feature
layer, color hidden layer, color output layer.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import FormatError, TrainingError, ValidationError
from .sampling import PackedBatch

SIGMA_DELTA_CLAMP = 80.0  # exp(-80) underflows float64 anyway; avoids overflow upstream
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PARAMS_MAGIC = b"VAXMLP01"

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_ACT_CODES = {"relu": 0, "softplus": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


# ---------------------------------------------------------------------------
# Positional encoding
# ---------------------------------------------------------------------------

def positional_encoding(v: np.ndarray, levels: int,
                        include_input: bool = True) -> np.ndarray:
    """Fourier features: optionally v, then [sin(2^k pi v), cos(2^k pi v)]
    for k = 0..levels-1, applied per component.

    Output width is C * (include_input + 2 * levels) for C input channels.
    """
    if levels < 0:
        raise ValidationError(f"encoding levels must be >= 0, got {levels}")
    v = np.asarray(v, dtype=np.float64)
    parts = [v] if include_input else []
    if levels > 0:
        freqs = (2.0 ** np.arange(levels)) * np.pi
        angles = v[..., None, :] * freqs[:, None]           # (..., L, C)
        block = np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
        width = 2 * levels * v.shape[-1]                    # per k: sin(C), cos(C)
        parts.append(block.reshape(v.shape[:-1] + (width,)))
    if not parts:
        return np.zeros(v.shape[:-1] + (0,))
    return np.concatenate(parts, axis=-1)


def encoding_dim(levels: int, include_input: bool, channels: int = 3) -> int:
    return channels * ((1 if include_input else 0) + 2 * levels)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class MlpParams:
    """Radiance MLP weights plus the encoding configuration they assume.

    Trunk of ``depth`` ReLU layers of ``width``; the layer at index
    ``skip_layer`` (when 0 < skip_layer < depth) takes the encoded position
    concatenated onto the running activation. From the trunk output: a
    linear density head to one value, and a color branch made of a linear
    feature layer, concatenation with the encoded direction, one ReLU
    hidden layer of ``color_width`` and a linear head to rgb. Both heads
    return pre-activation values; see sigma_from_raw / rgb_from_raw.
    """

    levels_pos: int
    levels_dir: int
    include_input: bool
    depth: int
    width: int
    color_width: int
    skip_layer: int
    density_activation: str
    density_bias: float
    trunk: list[tuple[np.ndarray, np.ndarray]]
    density: tuple[np.ndarray, np.ndarray]
    feature: tuple[np.ndarray, np.ndarray]
    color_hidden: tuple[np.ndarray, np.ndarray]
    color_out: tuple[np.ndarray, np.ndarray]

    @property
    def pos_dim(self) -> int:
        return encoding_dim(self.levels_pos, self.include_input)

    @property
    def dir_dim(self) -> int:
        return encoding_dim(self.levels_dir, self.include_input)

    @property
    def dtype(self) -> np.dtype:
        return self.trunk[0][0].dtype

    def arrays(self) -> list[np.ndarray]:
        """All parameter tensors in declaration order."""
        out = []
        for w, b in self.trunk:
            out.extend([w, b])
        for w, b in (self.density, self.feature, self.color_hidden, self.color_out):
            out.extend([w, b])
        return out

    def replace_arrays(self, arrays: list[np.ndarray]) -> "MlpParams":
        """New MlpParams with the same configuration and the given tensors."""
        it = iter(arrays)
        trunk = [(next(it), next(it)) for _ in range(self.depth)]
        heads = [(next(it), next(it)) for _ in range(4)]
        return replace(self, trunk=trunk, density=heads[0], feature=heads[1],
                       color_hidden=heads[2], color_out=heads[3])

    def zeros_like(self) -> "MlpParams":
        return self.replace_arrays([np.zeros_like(a) for a in self.arrays()])

    def astype(self, dtype) -> "MlpParams":
        return self.replace_arrays([a.astype(dtype) for a in self.arrays()])

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def _trunk_in_dim(params_or_cfg, layer: int) -> int:
    p = params_or_cfg
    if layer == 0:
        return p.pos_dim
    if layer == p.skip_layer:
        return p.width + p.pos_dim
    return p.width


def init_mlp_params(rng: np.random.Generator, levels_pos: int = 10,
                    levels_dir: int = 4, depth: int = 8, width: int = 256,
                    color_width: int | None = None, include_input: bool = True,
                    density_activation: str = "softplus",
                    density_bias: float = -1.0,
                    dtype=np.float64) -> MlpParams:
    """He-initialized parameters for the configured architecture."""
    if density_activation not in _ACT_CODES:
        raise ValidationError(f"unknown density activation {density_activation!r}")
    if depth < 1 or width < 1:
        raise ValidationError("depth and width must be >= 1")
    color_width = width // 2 if color_width is None else color_width
    skip_layer = depth // 2 if depth >= 2 else 0

    shell = MlpParams(
        levels_pos=levels_pos, levels_dir=levels_dir, include_input=include_input,
        depth=depth, width=width, color_width=color_width, skip_layer=skip_layer,
        density_activation=density_activation, density_bias=density_bias,
        trunk=[], density=(None, None), feature=(None, None),
        color_hidden=(None, None), color_out=(None, None))

    def dense(n_in, n_out, gain):
        w = rng.normal(0.0, gain / np.sqrt(n_in), size=(n_in, n_out))
        return w.astype(dtype), np.zeros(n_out, dtype=dtype)

    trunk = [dense(_trunk_in_dim(shell, i), width, np.sqrt(2.0))
             for i in range(depth)]
    dir_dim = shell.dir_dim
    return replace(
        shell,
        trunk=trunk,
        density=dense(width, 1, 1.0),
        feature=dense(width, width, 1.0),
        color_hidden=dense(width + dir_dim, color_width, np.sqrt(2.0)),
        color_out=dense(color_width, 3, 1.0),
    )


# ---------------------------------------------------------------------------
# MLP forward / backward
# ---------------------------------------------------------------------------

def _forward_cached(params: MlpParams, x_enc: np.ndarray, d_enc: np.ndarray):
    if x_enc.shape[-1] != params.pos_dim or d_enc.shape[-1] != params.dir_dim:
        raise ValidationError(
            f"encoded widths ({x_enc.shape[-1]}, {d_enc.shape[-1]}) do not match "
            f"params ({params.pos_dim}, {params.dir_dim})")
    if x_enc.shape[0] != d_enc.shape[0]:
        raise ValidationError("position and direction batches differ in length")

    trunk_inputs, relu_masks = [], []
    h = x_enc
    for i, (w, b) in enumerate(params.trunk):
        if i == params.skip_layer and i > 0:
            h = np.concatenate([h, x_enc], axis=1)
        pre = h @ w + b
        trunk_inputs.append(h)
        relu_masks.append(pre > 0)
        h = np.maximum(pre, 0.0)

    wd, bd = params.density
    sigma_raw = (h @ wd + bd)[:, 0]
    wf, bf = params.feature
    feat = h @ wf + bf
    color_in = np.concatenate([feat, d_enc], axis=1)
    wh, bh = params.color_hidden
    ch_pre = color_in @ wh + bh
    ch = np.maximum(ch_pre, 0.0)
    wo, bo = params.color_out
    rgb_raw = ch @ wo + bo

    cache = dict(trunk_inputs=trunk_inputs, relu_masks=relu_masks, trunk_out=h,
                 color_in=color_in, ch_mask=ch_pre > 0, ch=ch)
    return sigma_raw, rgb_raw, cache


def mlp_forward(params: MlpParams, x_enc: np.ndarray,
                d_enc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw (pre-activation) density and rgb for encoded inputs.

    Accepts (N, pos_dim)/(N, dir_dim) batches or single encoded vectors.
    """
    x_enc = np.asarray(x_enc)
    d_enc = np.asarray(d_enc)
    single = x_enc.ndim == 1
    if single:
        x_enc, d_enc = x_enc[None], d_enc[None]
    sigma_raw, rgb_raw, _ = _forward_cached(params, x_enc, d_enc)
    if single:
        return sigma_raw[0], rgb_raw[0]
    return sigma_raw, rgb_raw


def _mlp_backward(params: MlpParams, cache: dict, dsigma_raw: np.ndarray,
                  drgb_raw: np.ndarray) -> MlpParams:
    """Parameter gradients given head gradients; mirrors _forward_cached."""
    wd, _ = params.density
    wf, _ = params.feature
    wh, _ = params.color_hidden
    wo, _ = params.color_out

    ch = cache["ch"]
    g_wo = ch.T @ drgb_raw
    g_bo = drgb_raw.sum(axis=0)
    dch = (drgb_raw @ wo.T) * cache["ch_mask"]
    color_in = cache["color_in"]
    g_wh = color_in.T @ dch
    g_bh = dch.sum(axis=0)
    dcolor_in = dch @ wh.T
    dfeat = dcolor_in[:, : params.width]

    h = cache["trunk_out"]
    g_wf = h.T @ dfeat
    g_bf = dfeat.sum(axis=0)
    g_wd = h.T @ dsigma_raw[:, None]
    g_bd = dsigma_raw.sum(axis=0, keepdims=True)
    dh = dfeat @ wf.T + dsigma_raw[:, None] @ wd.T

    g_trunk: list[tuple[np.ndarray, np.ndarray]] = [None] * params.depth
    for i in range(params.depth - 1, -1, -1):
        w, _ = params.trunk[i]
        dpre = dh * cache["relu_masks"][i]
        h_in = cache["trunk_inputs"][i]
        g_trunk[i] = (h_in.T @ dpre, dpre.sum(axis=0))
        dh = dpre @ w.T
        if i == params.skip_layer and i > 0:
            dh = dh[:, : params.width]  # encoded-position branch carries no params

    return replace(params, trunk=g_trunk, density=(g_wd, g_bd),
                   feature=(g_wf, g_bf), color_hidden=(g_wh, g_bh),
                   color_out=(g_wo, g_bo))


# ---------------------------------------------------------------------------
# Field activations
# ---------------------------------------------------------------------------

def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigma_from_raw(params: MlpParams, sigma_raw: np.ndarray) -> np.ndarray:
    """Non-negative density from the raw head output (softplus or relu)."""
    shifted = sigma_raw + params.density_bias
    if params.density_activation == "softplus":
        return _softplus(shifted)
    return np.maximum(shifted, 0.0)


def _sigma_grad(params: MlpParams, sigma_raw: np.ndarray) -> np.ndarray:
    shifted = sigma_raw + params.density_bias
    if params.density_activation == "softplus":
        return _sigmoid(shifted)
    return (shifted > 0).astype(sigma_raw.dtype)


def rgb_from_raw(rgb_raw: np.ndarray) -> np.ndarray:
    return _sigmoid(rgb_raw)


def query_field(params: MlpParams, positions: np.ndarray,
                directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Activated (sigma, rgb) at world positions with unit view directions."""
    x_enc = positional_encoding(positions, params.levels_pos,
                                params.include_input).astype(params.dtype)
    d_enc = positional_encoding(directions, params.levels_dir,
                                params.include_input).astype(params.dtype)
    sigma_raw, rgb_raw = mlp_forward(params, x_enc, d_enc)
    return sigma_from_raw(params, sigma_raw), rgb_from_raw(rgb_raw)


# ---------------------------------------------------------------------------
# Volume rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RenderOutput:
    color: np.ndarray          # (3,) estimated ray color before background
    weights: np.ndarray        # (N,) per-sample contributions
    transmittance: np.ndarray  # (N,) exclusive transmittance T_i
    acc_alpha: float           # sum of weights
    depth: float               # sum of w_i * t_i (0 when t not supplied)


def _render_core(sigma: np.ndarray, rgb: np.ndarray, delta: np.ndarray,
                 valid: np.ndarray, t: np.ndarray | None = None) -> dict:
    """Batched compositor over (B, K) samples; float64 accumulation."""
    sig = np.where(valid, sigma, 0.0).astype(np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    rgb = np.asarray(rgb, dtype=np.float64)
    x = np.minimum(sig * delta, SIGMA_DELTA_CLAMP)
    alpha = -np.expm1(-x)
    surviving = np.cumprod(1.0 - alpha, axis=-1)
    trans = np.concatenate(
        [np.ones_like(surviving[..., :1]), surviving[..., :-1]], axis=-1)
    weights = trans * alpha
    color = (weights[..., None] * rgb).sum(axis=-2)
    acc = weights.sum(axis=-1)
    depth = (weights * t).sum(axis=-1) if t is not None else np.zeros_like(acc)
    return dict(color=color, weights=weights, transmittance=trans, acc=acc,
                depth=depth, alpha=alpha, x=x, sig=sig)


def volume_render(sigma: np.ndarray, rgb: np.ndarray, delta: np.ndarray,
                  valid: np.ndarray | None = None,
                  t: np.ndarray | None = None) -> RenderOutput:
    """Composite one ray's samples into a color estimate.

    sigma (N,) >= 0, rgb (N, 3) in [0, 1], delta (N,) >= 0; valid defaults
    to all-true. Invalid samples behave exactly like sigma = 0.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    rgb = np.asarray(rgb, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    n = sigma.shape[0]
    valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not (rgb.shape == (n, 3) and delta.shape == (n,) and valid.shape == (n,)):
        raise ValidationError("sigma, rgb, delta and valid lengths must agree")
    if np.any(sigma < 0) or np.any(delta < 0):
        raise ValidationError("sigma and delta must be non-negative")
    r = _render_core(sigma[None], rgb[None], delta[None], valid[None],
                     None if t is None else np.asarray(t, dtype=np.float64)[None])
    return RenderOutput(color=r["color"][0], weights=r["weights"][0],
                        transmittance=r["transmittance"][0],
                        acc_alpha=float(r["acc"][0]), depth=float(r["depth"][0]))


def composite_background(out: RenderOutput, background: np.ndarray) -> np.ndarray:
    """Blend the residual transmittance with a background color."""
    bg = np.asarray(background, dtype=np.float64)
    return out.color + (1.0 - out.acc_alpha) * bg


def rgb_loss(predicted: np.ndarray, target: np.ndarray) -> float:
    """Mean over the batch of squared L2 color errors."""
    p = np.asarray(predicted, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    if p.shape != g.shape:
        raise ValidationError(f"shape mismatch {p.shape} vs {g.shape}")
    d = p - g
    return float(np.mean(np.sum(d * d, axis=-1)))


# ---------------------------------------------------------------------------
# Full pipeline: packed batch -> colors -> loss -> parameter gradients
# ---------------------------------------------------------------------------

def render_packed(params: MlpParams, batch: PackedBatch,
                  background: np.ndarray,
                  sigma_noise: np.ndarray | None = None) -> tuple[np.ndarray, dict]:
    """Forward pass over a packed batch.

    Evaluates the MLP only at valid slots, composites with the valid mask
    and returns (colors (B, 3), cache) where the cache carries everything
    the backward pass and the hierarchical sampler need (per-slot weights
    in cache['render']['weights']). ``sigma_noise``, when given, holds one
    pre-scaled perturbation per valid point, added to the raw density
    before the activation (the classic training regularizer; off at eval).
    """
    valid = batch.valid
    n_rays, cap = valid.shape
    pts = batch.positions[valid]
    dirs_pts = np.broadcast_to(batch.directions[:, None, :],
                               batch.positions.shape)[valid]
    x_enc = positional_encoding(pts, params.levels_pos,
                                params.include_input).astype(params.dtype)
    d_enc = positional_encoding(dirs_pts, params.levels_dir,
                                params.include_input).astype(params.dtype)
    sigma_raw, rgb_raw, mlp_cache = _forward_cached(params, x_enc, d_enc)
    if sigma_noise is not None:
        sigma_raw = sigma_raw + sigma_noise.astype(params.dtype)
    sigma = sigma_from_raw(params, sigma_raw)
    rgb = rgb_from_raw(rgb_raw)

    sigma_full = np.zeros((n_rays, cap))
    rgb_full = np.zeros((n_rays, cap, 3))
    sigma_full[valid] = sigma.astype(np.float64)
    rgb_full[valid] = rgb.astype(np.float64)

    render = _render_core(sigma_full, rgb_full, batch.delta, valid, batch.t)
    bg = np.asarray(background, dtype=np.float64)
    colors = render["color"] + (1.0 - render["acc"])[:, None] * bg
    cache = dict(render=render, mlp=mlp_cache, sigma_raw=sigma_raw,
                 rgb_raw=rgb_raw, rgb=rgb, bg=bg, valid=valid,
                 delta=np.asarray(batch.delta, dtype=np.float64))
    return colors, cache


def backward_from_cache(params: MlpParams, cache: dict,
                        dcolors: np.ndarray) -> MlpParams:
    """Gradients of a scalar through colors; dcolors is dL/dcolors (B, 3)."""
    render = cache["render"]
    valid = cache["valid"]
    weights, trans, alpha = render["weights"], render["transmittance"], render["alpha"]
    delta = cache["delta"]

    dacc = -(dcolors * cache["bg"]).sum(axis=1)
    rgb_full = np.zeros(weights.shape + (3,))
    rgb_full[valid] = cache["rgb"].astype(np.float64)
    dweights = (rgb_full * dcolors[:, None, :]).sum(axis=2) + dacc[:, None]

    # d sigma_k = delta_k * (dw_k T_k exp(-x_k) - sum_{j>k} dw_j w_j)
    a = dweights * weights
    suffix = np.cumsum(a[..., ::-1], axis=-1)[..., ::-1] - a
    live = cache["render"]["x"] < SIGMA_DELTA_CLAMP  # clamp kills the gradient
    dsigma_full = delta * (dweights * trans * (1.0 - alpha) - suffix) * live

    drgb_pts = (weights[..., None] * dcolors[:, None, :])[valid]
    dsigma_pts = dsigma_full[valid]

    dtype = params.dtype
    rgb = cache["rgb"]
    drgb_raw = (drgb_pts * rgb * (1.0 - rgb)).astype(dtype)
    dsigma_raw = (dsigma_pts * _sigma_grad(params, cache["sigma_raw"])).astype(dtype)
    return _mlp_backward(params, cache["mlp"], dsigma_raw, drgb_raw)


def backward(params: MlpParams, batch: PackedBatch, targets: np.ndarray,
             background: np.ndarray) -> tuple[float, MlpParams]:
    """Loss and exact parameter gradients for one packed batch.

    Invalid slots never reach the MLP, so parameters feeding only invalid
    samples get exactly zero gradient.
    """
    colors, cache = render_packed(params, batch, background)
    loss = rgb_loss(colors, targets)
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss in backward pass")
    dcolors = 2.0 * (colors - np.asarray(targets, dtype=np.float64)) / colors.shape[0]
    grads = backward_from_cache(params, cache, dcolors)
    return loss, grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators, ordered like MlpParams.arrays()."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


def init_adam_state(params: MlpParams) -> AdamState:
    return AdamState(m=[np.zeros_like(a) for a in params.arrays()],
                     v=[np.zeros_like(a) for a in params.arrays()], step=0)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState,
              lr: float) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.step + 1
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new_p.append(p - lr * update)
        new_m.append(m)
        new_v.append(v)
    return params.replace_arrays(new_p), AdamState(m=new_m, v=new_v, step=t)


# ---------------------------------------------------------------------------
# Parameter serialization
# ---------------------------------------------------------------------------

def write_params(f: BinaryIO, params: MlpParams) -> None:
    dtype_code = _DTYPE_TO_CODE.get(params.dtype)
    if dtype_code is None:
        raise FormatError(f"cannot serialize dtype {params.dtype}")
    f.write(PARAMS_MAGIC)
    f.write(struct.pack("<I", 1))
    f.write(struct.pack("<4B", dtype_code, _ACT_CODES[params.density_activation],
                        1 if params.include_input else 0, 0))
    f.write(struct.pack("<6I", params.levels_pos, params.levels_dir, params.depth,
                        params.width, params.color_width, params.skip_layer))
    f.write(struct.pack("<d", params.density_bias))
    for a in params.arrays():
        f.write(np.ascontiguousarray(a).tobytes())


def read_params(f: BinaryIO) -> MlpParams:
    magic = f.read(8)
    if magic != PARAMS_MAGIC:
        raise FormatError(f"bad parameter magic {magic!r}")
    (version,) = struct.unpack("<I", f.read(4))
    if version != 1:
        raise FormatError(f"unsupported parameter version {version}")
    dtype_code, act_code, include_input, _ = struct.unpack("<4B", f.read(4))
    if dtype_code not in _DTYPE_CODES or act_code not in _ACT_NAMES:
        raise FormatError("bad dtype or activation code in parameter header")
    levels_pos, levels_dir, depth, width, color_width, skip_layer = struct.unpack(
        "<6I", f.read(24))
    (density_bias,) = struct.unpack("<d", f.read(8))
    dtype = _DTYPE_CODES[dtype_code]

    shell = MlpParams(
        levels_pos=levels_pos, levels_dir=levels_dir,
        include_input=bool(include_input), depth=depth, width=width,
        color_width=color_width, skip_layer=skip_layer,
        density_activation=_ACT_NAMES[act_code], density_bias=density_bias,
        trunk=[], density=(None, None), feature=(None, None),
        color_hidden=(None, None), color_out=(None, None))

    def read_arr(shape):
        n = int(np.prod(shape))
        raw = f.read(n * dtype.itemsize)
        if len(raw) != n * dtype.itemsize:
            raise FormatError("truncated parameter payload")
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    arrays = []
    for i in range(depth):
        n_in = _trunk_in_dim(shell, i)
        arrays.extend([read_arr((n_in, width)), read_arr((width,))])
    dir_dim = shell.dir_dim
    arrays.extend([read_arr((width, 1)), read_arr((1,))])
    arrays.extend([read_arr((width, width)), read_arr((width,))])
    arrays.extend([read_arr((width + dir_dim, color_width)), read_arr((color_width,))])
    arrays.extend([read_arr((color_width, 3)), read_arr((3,))])
    return shell.replace_arrays(arrays)


def save_params(params: MlpParams, path: str | Path) -> None:
    buf = io.BytesIO()
    write_params(buf, params)
    Path(path).write_bytes(buf.getvalue())


def load_params(path: str | Path) -> MlpParams:
    with open(path, "rb") as f:
        return read_params(f)
