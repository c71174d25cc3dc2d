"""Permutohedral attention block on regular grids.

Per cell, a feature extractor (affine map of the input channels plus the
cell's spatial coordinates, then leaky-ReLU) and a descriptor extractor
(affine map of the input channels) produce attention features and values.
Both are split into two channel groups; each group is filtered independently
on its own lattice and the filtered halves are concatenated.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .filter import FilterOptions, filter_with_tape
from .gradients import vjp_descriptors, vjp_features
from .lattice import make_embedding

GROUPS = 2


class StaleTapeError(RuntimeError):
    pass


@dataclass
class PamParams:
    W_f: np.ndarray  # (F, C + s)
    b_f: np.ndarray  # (F,)
    W_v: np.ndarray  # (V, C)
    b_v: np.ndarray  # (V,)
    leaky_slope: float = 0.01
    normalize: bool = True
    concat_input: bool = False
    # attention kernel is exp(-|f_i - f_j|^2 / (2 bandwidth^2)) per group
    bandwidth: float = 1.0

    def __post_init__(self):
        F, V = self.W_f.shape[0], self.W_v.shape[0]
        if F % GROUPS or V % GROUPS:
            raise ValueError(f"feature ({F}) and descriptor ({V}) counts must be even")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not 0 < self.leaky_slope < 1:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.b_f.shape != (F,) or self.b_v.shape != (V,):
            raise ValueError("bias shapes do not match weight shapes")

    @property
    def arrays(self) -> dict[str, np.ndarray]:
        return {"W_f": self.W_f, "b_f": self.b_f, "W_v": self.W_v, "b_v": self.b_v}

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for name, a in self.arrays.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        h.update(repr((self.leaky_slope, self.normalize, self.concat_input, self.bandwidth)).encode())
        return h.hexdigest()


def init_params(channels: int, spatial_rank: int, n_features: int, n_descriptors: int,
                seed: int = 0, **kwargs) -> PamParams:
    """Uniform in +-fan_in**-0.5 for weights and biases."""
    rng = np.random.default_rng(seed)
    fin_f = channels + spatial_rank
    lim_f, lim_v = fin_f**-0.5, channels**-0.5
    return PamParams(
        rng.uniform(-lim_f, lim_f, (n_features, fin_f)),
        rng.uniform(-lim_f, lim_f, n_features),
        rng.uniform(-lim_v, lim_v, (n_descriptors, channels)),
        rng.uniform(-lim_v, lim_v, n_descriptors),
        **kwargs,
    )


def coordinate_mesh(dims, spacing=None) -> np.ndarray:
    """Physical coordinates of every cell, shape (prod(dims), len(dims)), row-major."""
    dims = tuple(int(n) for n in dims)
    if not dims or any(n <= 0 for n in dims):
        raise ValueError(f"grid dims must be positive, got {dims}")
    spacing = np.ones(len(dims)) if spacing is None else np.asarray(spacing, dtype=np.float64)
    if spacing.shape != (len(dims),):
        raise ValueError("need one spacing per grid axis")
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1) * spacing


def _flatten(x, params: PamParams) -> tuple[np.ndarray, tuple[int, ...]]:
    x = np.asarray(x, dtype=np.float64)
    C = params.W_v.shape[1]
    if x.ndim < 2 or x.shape[-1] != C:
        raise ValueError(f"input must be (*dims, {C}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input must be finite")
    return x.reshape(-1, C), x.shape[:-1]


def _leaky(z, slope):
    return np.where(z >= 0, z, slope * z)


def extract_features(x, params: PamParams, spacing=None) -> np.ndarray:
    xf, dims = _flatten(x, params)
    inp = np.concatenate([xf, coordinate_mesh(dims, spacing)], axis=1)
    if inp.shape[1] != params.W_f.shape[1]:
        raise ValueError(f"feature extractor expects {params.W_f.shape[1]} inputs, got {inp.shape[1]}")
    return _leaky(inp @ params.W_f.T + params.b_f, params.leaky_slope)


def extract_descriptors(x, params: PamParams) -> np.ndarray:
    xf, _ = _flatten(x, params)
    return xf @ params.W_v.T + params.b_v


@dataclass
class PamCache:
    dims: tuple
    inputs: np.ndarray  # (N, C + s): channels then mesh
    pre: np.ndarray  # feature pre-activations (N, F)
    features: np.ndarray
    descriptors: np.ndarray
    tapes: list = field(default_factory=list)
    groups: int = GROUPS
    fingerprint: str = ""


def pam_forward(x, params: PamParams, spacing=None, groups: int = GROUPS,
                options: FilterOptions | None = None) -> tuple[np.ndarray, PamCache]:
    """Run the block. Returns the output grid (*dims, V [+ C]) and a cache for backward.

    ``groups=1`` filters all descriptors with the full feature vector; it is
    kept only as the single-attention-map reference.
    """
    if groups not in (1, GROUPS):
        raise ValueError("groups must be 1 or 2")
    xf, dims = _flatten(x, params)
    inp = np.concatenate([xf, coordinate_mesh(dims, spacing)], axis=1)
    if inp.shape[1] != params.W_f.shape[1]:
        raise ValueError(f"feature extractor expects {params.W_f.shape[1]} inputs, got {inp.shape[1]}")
    pre = inp @ params.W_f.T + params.b_f
    feats = _leaky(pre, params.leaky_slope)
    desc = xf @ params.W_v.T + params.b_v
    opts = options or FilterOptions(normalize=params.normalize)
    outs, tapes = [], []
    for f_g, v_g in zip(np.split(feats, groups, axis=1), np.split(desc, groups, axis=1)):
        out, tape = filter_with_tape(make_embedding(f_g.shape[1], params.bandwidth), f_g, v_g, opts)
        outs.append(out)
        tapes.append(tape)
    y = np.concatenate(outs, axis=1)
    if params.concat_input:
        y = np.concatenate([y, xf], axis=1)
    cache = PamCache(dims, inp, pre, feats, desc, tapes, groups, params.fingerprint())
    return y.reshape(*dims, y.shape[1]), cache


def pam_backward(cache: PamCache, params: PamParams, grad_out, with_input: bool = False) -> dict:
    """Parameter gradients (and optionally d/dx) for the output gradient ``grad_out``."""
    if cache.fingerprint != params.fingerprint():
        raise StaleTapeError("parameters changed since the forward pass")
    V, C = params.W_v.shape
    g = np.asarray(grad_out, dtype=np.float64).reshape(cache.inputs.shape[0], -1)
    width = V + (C if params.concat_input else 0)
    if g.shape[1] != width:
        raise ValueError(f"grad_out has {g.shape[1]} channels, expected {width}")
    g_filtered = g[:, :V]
    g_desc, g_feat = [], []
    for tape, v_g, g_g in zip(cache.tapes, np.split(cache.descriptors, cache.groups, axis=1),
                              np.split(g_filtered, cache.groups, axis=1)):
        g_desc.append(vjp_descriptors(tape, g_g))
        g_feat.append(vjp_features(tape, v_g, g_g))
    dv = np.concatenate(g_desc, axis=1)
    df = np.concatenate(g_feat, axis=1)
    dz = np.where(cache.pre >= 0, df, params.leaky_slope * df)
    xf = cache.inputs[:, :C]
    grads = {
        "W_f": dz.T @ cache.inputs,
        "b_f": dz.sum(axis=0),
        "W_v": dv.T @ xf,
        "b_v": dv.sum(axis=0),
    }
    if with_input:
        dx = dv @ params.W_v + (dz @ params.W_f)[:, :C]
        if params.concat_input:
            dx = dx + g[:, V:]
        grads["x"] = dx.reshape(*cache.dims, C)
    return grads


def apply_update(params: PamParams, grads: dict, lr: float) -> PamParams:
    return replace(params, **{k: v - lr * grads[k] for k, v in params.arrays.items()})
