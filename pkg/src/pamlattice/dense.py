"""Brute-force O(N^2) non-local means, the reference for the lattice filter."""
from __future__ import annotations

import numpy as np

DEFAULT_CAP = 5000
KERNELS = ("gaussian", "exp_l2")
_BLOCK_ELEMENTS = 1 << 22


class DenseCapError(ValueError):
    pass


def _check(features, cap):
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] > cap:
        raise DenseCapError(f"{f.shape[0]} points exceeds the dense cap of {cap}")
    return f


def pairwise_sq_dists(f: np.ndarray) -> np.ndarray:
    # direct differences rather than the |a|^2 + |b|^2 - 2ab expansion:
    # exact zeros on the diagonal and exact symmetry
    # (x - y)^2 == (y - x)^2 bitwise, so blocking over rows keeps both
    n, d = f.shape
    out = np.empty((n, n))
    step = max(1, _BLOCK_ELEMENTS // max(n * d, 1))
    for i in range(0, n, step):
        diff = f[i : i + step, None, :] - f[None, :, :]
        out[i : i + step] = np.einsum("ijd,ijd->ij", diff, diff)
    return out


def attention_dense(features, kernel: str = "gaussian", cap: int = DEFAULT_CAP) -> np.ndarray:
    """Kernel matrix K_ij = k(f_i, f_j).

    gaussian: exp(-|f_i - f_j|^2 / 2), the kernel the lattice approximates.
    exp_l2:   exp(-|f_i - f_j|), the unsquared form.
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; choose from {KERNELS}")
    f = _check(features, cap)
    sq = pairwise_sq_dists(f)
    if kernel == "gaussian":
        return np.exp(-0.5 * sq)
    return np.exp(-np.sqrt(sq))


def nlm_dense(features, descriptors, kernel: str = "gaussian", normalize: bool = True,
              cap: int = DEFAULT_CAP) -> np.ndarray:
    v = np.asarray(descriptors, dtype=np.float64)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    K = attention_dense(features, kernel, cap)
    if K.shape[0] != v.shape[0]:
        raise ValueError(f"features give {K.shape[0]} points, descriptors {v.shape[0]}")
    out = K @ v
    if normalize:
        out /= K.sum(axis=1, keepdims=True)
    return out[:, 0] if squeeze else out


def compare(lattice_out, oracle_out) -> dict:
    """Accuracy of an approximation against the oracle.

    mean_rel_l2 / max_rel_l2 are per-point |a_i - o_i| / |o_i|; correlation is
    Pearson over all entries.
    """
    a = np.asarray(lattice_out, dtype=np.float64)
    o = np.asarray(oracle_out, dtype=np.float64)
    if a.shape != o.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {o.shape}")
    a2 = a.reshape(a.shape[0], -1) if a.ndim else a.reshape(1, 1)
    o2 = o.reshape(o.shape[0], -1) if o.ndim else o.reshape(1, 1)
    err = np.linalg.norm(a2 - o2, axis=1)
    ref = np.linalg.norm(o2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(ref > 0, err / np.where(ref > 0, ref, 1.0), np.where(err > 0, np.inf, 0.0))
    x, y = a2.ravel(), o2.ravel()
    if np.array_equal(x, y):
        corr = 1.0
    else:
        xs, ys = x - x.mean(), y - y.mean()
        denom = np.sqrt((xs @ xs) * (ys @ ys))
        corr = float(xs @ ys / denom) if denom > 0 else float("nan")
    return {"mean_rel_l2": float(rel.mean()), "max_rel_l2": float(rel.max()), "correlation": corr}


def calibration_gain(lattice_out, oracle_out) -> float:
    """Least-squares scalar g minimising |g * lattice - oracle|.

    Relates the unnormalized lattice output to the unnormalized oracle.
    """
    a = np.ravel(lattice_out)
    o = np.ravel(oracle_out)
    return float(a @ o / (a @ a))
