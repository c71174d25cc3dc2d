"""Permutohedral lattice geometry.

Features in R^d are mapped linearly onto the zero-sum hyperplane of R^{d+1},
which the lattice A*_d tiles with congruent simplices. Each point is located
in its enclosing simplex (base remainder-0 vertex + rank permutation) and
gets d+1 barycentric weights. Vertices are identified by integer keys; only
the first d coordinates are stored since the last is implied by the zero sum.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

HYPERPLANE_TOL = 1e-9
ABSENT = -1
# beyond this, float64 residuals y - rem0 lose the precision that rounding needs
MAX_COORD = 2.0**40


@dataclass(frozen=True)
class Embedding:
    """Linear elevation R^d -> zero-sum hyperplane of R^{d+1}.

    ``matrix`` has shape (d+1, d); ``elevate`` is ``f @ matrix.T``.
    """

    d: int
    scales: np.ndarray
    matrix: np.ndarray

    @property
    def bandwidth(self) -> np.ndarray:
        return unit_scales(self.d) / self.scales


def unit_scales(d: int) -> np.ndarray:
    i = np.arange(d, dtype=np.float64)
    return (d + 1) * np.sqrt(2.0 / 3.0) / np.sqrt((i + 1) * (i + 2))


def make_embedding(d: int, bandwidth=1.0) -> Embedding:
    """Embedding for which lattice filtering approximates
    ``exp(-|(f_i - f_j) / bandwidth|^2 / 2)``.

    ``bandwidth`` is a scalar or a length-d sequence of positive reals.
    """
    if int(d) != d or d < 1:
        raise ValueError(f"feature dimension must be >= 1, got {d}")
    d = int(d)
    bw = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (d,)).copy()
    if not np.all(np.isfinite(bw)) or np.any(bw <= 0):
        raise ValueError(f"bandwidths must be positive and finite, got {bw}")
    scales = unit_scales(d) / bw
    # y_0 = sum_m c_m ; y_i = sum_{m>=i} c_m - i * c_{i-1}, with c = scales * f
    E = np.zeros((d + 1, d))
    E[0, :] = 1.0
    for i in range(1, d + 1):
        E[i, i:] = 1.0
        E[i, i - 1] = -float(i)
    E *= scales[None, :]
    scales.setflags(write=False)
    E.setflags(write=False)
    return Embedding(d, scales, E)


def elevate(emb: Embedding, features) -> np.ndarray:
    """Map features (..., d) onto the hyperplane, returning (..., d+1)."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape[-1] != emb.d:
        raise ValueError(f"expected {emb.d} feature channels, got {f.shape[-1]}")
    if not np.all(np.isfinite(f)):
        raise ValueError("features must be finite")
    return f @ emb.matrix.T


@dataclass
class SimplexRecords:
    """Per-point enclosing simplex, vectorised over N points.

    rem0: (N, d+1) int64 remainder-0 base vertex.
    rank: (N, d+1) int64, a permutation of 0..d per row.
    barycentric: (N, d+1) weights; column k belongs to vertex k (remainder k).
    vertex_ids: (N, d+1) indices into a VertexTable, or None before resolution.
    """

    rem0: np.ndarray
    rank: np.ndarray
    barycentric: np.ndarray
    vertex_ids: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.rem0.shape[0]

    @property
    def d(self) -> int:
        return self.rem0.shape[1] - 1

    def margin(self) -> np.ndarray:
        """Distance (in barycentric units) of each point from its simplex boundary."""
        return self.barycentric.min(axis=1)


def find_simplex(y) -> SimplexRecords:
    """Locate the enclosing simplex of elevated points ``y`` of shape (N, d+1).

    A single point of shape (d+1,) is accepted and treated as N=1.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n, dp1 = y.shape
    d = dp1 - 1
    if d < 1:
        raise ValueError("elevated points need at least 2 coordinates")
    if not np.all(np.isfinite(y)):
        raise ValueError("elevated points must be finite")
    amax = np.abs(y).max(axis=1)
    if np.any(amax > MAX_COORD):
        raise ValueError(f"elevated coordinate magnitude {amax.max():.3g} exceeds {MAX_COORD:.3g}")
    scale = np.maximum(1.0, amax)
    if np.any(np.abs(y.sum(axis=1)) > HYPERPLANE_TOL * dp1 * scale):
        raise ValueError("point is not on the zero-sum hyperplane")

    v = y / dp1
    up = np.ceil(v) * dp1
    down = np.floor(v) * dp1
    rem0 = np.where(up - y < y - down, up, down)
    deficit = np.rint(rem0.sum(axis=1) / dp1).astype(np.int64)
    rem0 = np.rint(rem0).astype(np.int64)

    resid = y - rem0
    # descending residual, ties to the lower index
    order = np.argsort(-resid, axis=1, kind="stable")
    rank = np.empty_like(order)
    rows = np.arange(n)[:, None]
    rank[rows, order] = np.arange(dp1)[None, :]

    h = deficit[:, None]
    pos = h > 0
    neg = h < 0
    down_fix = pos & (rank >= dp1 - h)
    up_fix = neg & (rank < -h)
    rem0 = rem0 - dp1 * down_fix + dp1 * up_fix
    rank = rank + h + dp1 * (up_fix.astype(np.int64) - down_fix.astype(np.int64))

    r = (y - rem0) / dp1
    bary = np.zeros((n, dp1 + 1))
    bary[rows, d - rank] += r
    bary[rows, d + 1 - rank] -= r
    bary[:, 0] += 1.0 + bary[:, dp1]
    return SimplexRecords(rem0, rank, bary[:, :dp1])


def simplex_vertex_key(rem0, rank, k: int) -> np.ndarray:
    """Full (d+1)-coordinate key of vertex ``k`` of the simplex (rem0, rank).

    Works on single records (1-D) or batches (N, d+1).
    """
    rem0 = np.asarray(rem0, dtype=np.int64)
    rank = np.asarray(rank, dtype=np.int64)
    dp1 = rem0.shape[-1]
    if not 0 <= k < dp1:
        raise ValueError(f"vertex index k={k} outside [0, {dp1 - 1}]")
    return rem0 + k - dp1 * (rank >= dp1 - k)


def neighbor_key(key, axis: int, sign: int) -> np.ndarray:
    """Neighbor of a full lattice key along lattice axis ``axis``.

    sign=+1 gives ``key + 1 - (d+1) e_axis``, sign=-1 the inverse offset.
    """
    key = np.asarray(key, dtype=np.int64)
    dp1 = key.shape[-1]
    if not 0 <= axis < dp1:
        raise ValueError(f"axis {axis} outside [0, {dp1 - 1}]")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    out = key + sign
    out[..., axis] -= sign * dp1
    return out


def complete_key(key_d) -> np.ndarray:
    """Append the implied last coordinate to stored d-coordinate keys."""
    key_d = np.asarray(key_d, dtype=np.int64)
    return np.concatenate([key_d, -key_d.sum(axis=-1, keepdims=True)], axis=-1)


class _KeyIndex:
    """Sorted, deduplicated set of d-coordinate integer keys with batched lookup.

    Keys are packed into a single int64 by mixed radix when their bounding box
    allows it, otherwise they are compared lexicographically as records.
    """

    def __init__(self, keys: np.ndarray):
        keys = np.ascontiguousarray(keys, dtype=np.int64)
        self.ncols = keys.shape[1]
        # pad the box by one lattice step so every axis neighbor of a stored
        # key packs without aliasing
        pad = self.ncols + 1
        self.lo = keys.min(axis=0) - pad
        self.hi = keys.max(axis=0) + pad
        span = [int(x) for x in (self.hi - self.lo + 1)]
        total = 1
        for s in span:
            total *= s
        self.packed = total < 2**62
        if self.packed:
            strides = np.ones(self.ncols, dtype=np.int64)
            for j in range(self.ncols - 2, -1, -1):
                strides[j] = strides[j + 1] * span[j + 1]
            self.strides = strides
            codes = (keys - self.lo) @ strides
            self.sorted, inverse = np.unique(codes, return_inverse=True)
            self.keys = self.lo + (self.sorted[:, None] // strides[None, :]) % np.asarray(span)[None, :]
        else:
            rec = self._records(keys)
            self.sorted, inverse = np.unique(rec, return_inverse=True)
            self.keys = self.sorted.view(np.int64).reshape(-1, self.ncols).copy()
        self.inverse = inverse.reshape(-1)

    def _search(self, target) -> np.ndarray:
        pos = np.searchsorted(self.sorted, target)
        pos_c = np.minimum(pos, len(self.sorted) - 1)
        return np.where(self.sorted[pos_c] == target, pos_c, ABSENT)

    def neighbors(self, axis: int, sign: int) -> np.ndarray:
        """Index of every stored key's neighbor along ``axis`` (ABSENT if missing)."""
        if not self.packed:
            full = complete_key(self.keys)
            return self.lookup(neighbor_key(full, axis, sign)[:, :-1])
        # stored coordinates all move by sign; coordinate `axis` (if stored)
        # additionally by -sign * (d + 1)
        delta = int(self.strides.sum())
        if axis < self.ncols:
            delta -= (self.ncols + 1) * int(self.strides[axis])
        return self._search(self.sorted + sign * delta)

    def _records(self, keys):
        dt = np.dtype([(f"k{j}", "<i8") for j in range(self.ncols)])
        return np.ascontiguousarray(keys, dtype="<i8").view(dt).reshape(-1)

    def __len__(self):
        return len(self.sorted)

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        if not self.packed:
            return self._search(self._records(keys))
        inside = np.all((keys >= self.lo) & (keys <= self.hi), axis=1)
        codes = (np.where(inside[:, None], keys, self.lo) - self.lo) @ self.strides
        return np.where(inside, self._search(codes), ABSENT)


@dataclass
class VertexTable:
    """Lattice vertices in canonical (sorted key) order.

    keys: (M, d) stored key coordinates.
    plus, minus: (M, d+1) neighbor indices along each axis, ABSENT if missing.
    """

    keys: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    _index: _KeyIndex | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return self.keys.shape[0]

    @property
    def d(self) -> int:
        return self.keys.shape[1]

    def lookup(self, keys_d) -> np.ndarray:
        """Vertex indices of the given stored keys (ABSENT if not present)."""
        return self._index.lookup(np.atleast_2d(keys_d))

    @classmethod
    def from_keys(cls, keys_d: np.ndarray) -> tuple["VertexTable", np.ndarray]:
        """Deduplicate keys; return the table and each input key's vertex index."""
        index = _KeyIndex(keys_d)
        uniq = index.keys
        dp1 = uniq.shape[1] + 1
        plus = np.empty((len(uniq), dp1), dtype=np.int64)
        minus = np.empty_like(plus)
        for j in range(dp1):
            plus[:, j] = index.neighbors(j, +1)
            minus[:, j] = index.neighbors(j, -1)
        return cls(uniq, plus, minus, index), index.inverse


def _locate(emb: Embedding, features: np.ndarray) -> SimplexRecords:
    return find_simplex(elevate(emb, features))


def locate_points(emb: Embedding, features, threads: int = 1) -> SimplexRecords:
    """Elevate and find simplices, optionally over ``threads`` contiguous chunks.

    Records are computed per point, so chunking cannot change any value.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"features must be (N, d), got shape {f.shape}")
    if threads <= 1 or len(f) < 2 * threads:
        return _locate(emb, f)
    chunks = np.array_split(f, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda c: _locate(emb, c), chunks))
    return SimplexRecords(
        np.concatenate([p.rem0 for p in parts]),
        np.concatenate([p.rank for p in parts]),
        np.concatenate([p.barycentric for p in parts]),
    )


def simplex_keys(records: SimplexRecords) -> np.ndarray:
    """Stored keys of all simplex vertices, shape (N, d+1, d)."""
    dp1 = records.d + 1
    keys = np.empty((records.n, dp1, dp1 - 1), dtype=np.int64)
    for k in range(dp1):
        keys[:, k, :] = simplex_vertex_key(records.rem0, records.rank, k)[:, :-1]
    return keys


def build_lattice(emb: Embedding, features, threads: int = 1, ring: bool = False):
    """Build the sparse lattice for a feature matrix.

    Returns ``(table, records)`` with ``records.vertex_ids`` resolved. The
    table holds exactly the enclosing-simplex vertices, plus their immediate
    axis neighbors when ``ring`` is set. Vertex indices follow sorted key
    order, so the result does not depend on point order.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise ValueError(f"features must be (N, d) with N >= 1, got shape {f.shape}")
    records = locate_points(emb, f, threads)
    n, dp1 = records.n, records.d + 1
    keys = simplex_keys(records).reshape(-1, dp1 - 1)
    if ring:
        base = VertexTable.from_keys(keys)[0]
        full = complete_key(base.keys)
        extra = [base.keys]
        for j in range(dp1):
            for s in (1, -1):
                extra.append(neighbor_key(full, j, s)[:, :-1])
        table, _ = VertexTable.from_keys(np.concatenate(extra))
        records.vertex_ids = table.lookup(keys).reshape(n, dp1)
    else:
        table, inverse = VertexTable.from_keys(keys)
        records.vertex_ids = inverse.reshape(n, dp1)
    return table, records
