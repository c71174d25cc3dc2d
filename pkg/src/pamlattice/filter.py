"""Splat / blur / slice on the permutohedral lattice.

``permutohedral_filter`` approximates the Gaussian non-local mean

    v'_i = sum_j exp(-|f_i - f_j|^2 / 2) v_j

in time linear in the number of points. With ``normalize=True`` (the default)
a ones-channel is filtered alongside and divides the result, giving the
row-normalised attention output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import ABSENT, Embedding, SimplexRecords, VertexTable, build_lattice

NORMALIZER_FLOOR = 1e-300


class DegenerateNormalizerError(ArithmeticError):
    pass


@dataclass(frozen=True)
class FilterOptions:
    normalize: bool = True
    blur_order: str = "forward"
    # sum splat contributions in a canonical order, making the output
    # bitwise invariant to point order (slower)
    deterministic: bool = False
    # also instantiate the axis neighbors of splatted vertices, so blur mass
    # leaving the simplex vertices is kept for the later axes
    ring: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.blur_order not in ("forward", "reverse"):
            raise ValueError(f"blur_order must be 'forward' or 'reverse', got {self.blur_order!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


def splat(records: SimplexRecords, descriptors, n_vertices: int | None = None,
          deterministic: bool = False) -> np.ndarray:
    """Scatter descriptors (N, c) onto lattice vertices with barycentric weights."""
    v = np.asarray(descriptors, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] != records.n:
        raise ValueError(f"descriptor rows ({v.shape[0]}) != number of points ({records.n})")
    if records.vertex_ids is None:
        raise ValueError("records have no resolved vertex ids")
    ids = records.vertex_ids.ravel()
    m = int(ids.max()) + 1 if n_vertices is None else n_vertices
    out = np.empty((m, v.shape[1]))
    for ch in range(v.shape[1]):
        contrib = (records.barycentric * v[:, ch : ch + 1]).ravel()
        if deterministic:
            order = np.lexsort((contrib, ids))
            out[:, ch] = np.bincount(ids[order], weights=contrib[order], minlength=m)
        else:
            out[:, ch] = np.bincount(ids, weights=contrib, minlength=m)
    return out


def blur(table: VertexTable, values, order: str = "forward") -> np.ndarray:
    """Apply the (1, 2, 1)/4 kernel along each lattice axis in turn.

    Missing neighbors contribute zero. Each axis pass reads only the values
    left by the previous pass. ``order="reverse"`` visits axes d..0, which is
    the transpose of the forward operator.
    """
    vals = np.asarray(values, dtype=np.float64)
    squeeze = vals.ndim == 1
    if squeeze:
        vals = vals[:, None]
    m = len(table)
    if vals.shape[0] != m:
        raise ValueError(f"values have {vals.shape[0]} rows, table has {m} vertices")
    dp1 = table.plus.shape[1]
    axes = range(dp1) if order == "forward" else range(dp1 - 1, -1, -1)
    if order not in ("forward", "reverse"):
        raise ValueError(f"unknown blur order {order!r}")
    # row m is a permanent zero standing in for absent neighbors
    buf = np.zeros((m + 1, vals.shape[1]))
    buf[:m] = vals
    plus = np.where(table.plus == ABSENT, m, table.plus)
    minus = np.where(table.minus == ABSENT, m, table.minus)
    for j in axes:
        new = buf[minus[:, j]] + buf[plus[:, j]]
        new += 2.0 * buf[:m]
        new *= 0.25
        buf[:m] = new
    out = buf[:m]
    return out[:, 0] if squeeze else out


def slice_values(records: SimplexRecords, values, normalize: bool = False) -> np.ndarray:
    """Gather vertex values back to the points.

    With ``normalize`` the last column of ``values`` is the filtered ones-channel
    and divides the remaining columns.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    b = records.barycentric
    ids = records.vertex_ids
    out = np.einsum("nk,nkc->nc", b, vals[ids])
    if not normalize:
        return out
    den = out[:, -1]
    if np.any(den < NORMALIZER_FLOOR):
        raise DegenerateNormalizerError("sliced normalizer is (near) zero")
    return out[:, :-1] / den[:, None]


@dataclass
class FilterTape:
    """What the backward pass needs from a forward call."""

    embedding: Embedding
    records: SimplexRecords
    table: VertexTable
    blurred: np.ndarray  # blurred splat of the (possibly augmented) descriptors
    normalizer: np.ndarray | None  # sliced ones-channel, normalized mode only
    output: np.ndarray
    options: FilterOptions


def _augment(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v, np.ones((v.shape[0], 1))], axis=1)


def filter_with_tape(emb: Embedding, features, descriptors,
                     opts: FilterOptions = FilterOptions()) -> tuple[np.ndarray, FilterTape]:
    v = np.asarray(descriptors, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] != v.shape[0]:
        raise ValueError(f"features {f.shape} and descriptors {v.shape} disagree on N")
    table, records = build_lattice(emb, f, threads=opts.threads, ring=opts.ring)
    src = _augment(v) if opts.normalize else v
    blurred = blur(table, splat(records, src, len(table), opts.deterministic), opts.blur_order)
    sliced = slice_values(records, blurred)
    if opts.normalize:
        den = sliced[:, -1]
        if np.any(den < NORMALIZER_FLOOR):
            raise DegenerateNormalizerError("sliced normalizer is (near) zero")
        out = sliced[:, :-1] / den[:, None]
    else:
        den = None
        out = sliced
    return out, FilterTape(emb, records, table, blurred, den, out, opts)


def permutohedral_filter(emb: Embedding, features, descriptors,
                         opts: FilterOptions = FilterOptions()) -> np.ndarray:
    """Filter descriptors (N, c) by Gaussian affinity of features (N, d)."""
    return filter_with_tape(emb, features, descriptors, opts)[0]


def lattice_operator(records: SimplexRecords, table: VertexTable, values,
                     order: str = "forward", deterministic: bool = False) -> np.ndarray:
    """Unnormalized slice . blur(order) . splat on a prebuilt lattice."""
    return slice_values(records, blur(table, splat(records, values, len(table), deterministic), order))
