"""Vector-Jacobian products of the lattice filter.

Splat and slice are transposes of each other and the blur with the axis order
reversed is the transpose of the forward blur, so the descriptor VJP is the
filter itself run with reversed blur. Features enter only through the
barycentric weights (vertex keys are piecewise constant), so the feature VJP
is a per-point contraction over the d+1 simplex vertices followed by the
transposed elevation map.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .filter import FilterOptions, FilterTape, _augment, blur, filter_with_tape, slice_values, splat
from .lattice import Embedding, elevate, find_simplex

MARGIN = 1e-3
DESCRIPTOR_TOL = 1e-8
FEATURE_TOL = 1e-4


def _reverse(order: str) -> str:
    return "reverse" if order == "forward" else "forward"


def _check_grad(tape: FilterTape, grad_out) -> np.ndarray:
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape != tape.output.shape:
        raise ValueError(f"grad_out shape {g.shape} does not match filter output {tape.output.shape}")
    return g


def _augmented_grad(tape: FilterTape, g: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the sliced (unnormalized) values.

    For out = num / den the numerator receives g / den and the homogeneous
    channel receives -sum_c g_c out_c / den.
    """
    if not tape.options.normalize:
        return g
    den = tape.normalizer[:, None]
    g_num = g / den
    g_den = -np.einsum("nc,nc->n", g_num, tape.output)[:, None]
    return np.concatenate([g_num, g_den], axis=1)


def _backward_field(tape: FilterTape, g_aug: np.ndarray) -> np.ndarray:
    rec, table, opts = tape.records, tape.table, tape.options
    return blur(table, splat(rec, g_aug, len(table), opts.deterministic), _reverse(opts.blur_order))


def vjp_descriptors(tape: FilterTape, grad_out) -> np.ndarray:
    g = _check_grad(tape, grad_out)
    if tape.options.normalize:
        g = g / tape.normalizer[:, None]
    return slice_values(tape.records, _backward_field(tape, g))


def barycentric_vjp(records, grad_bary: np.ndarray) -> np.ndarray:
    """Pull dL/d(barycentric) (N, d+1) back to dL/d(elevated point) (N, d+1).

    Inside a simplex b[d - rank_j] gets +r_j and b[d + 1 - rank_j] gets -r_j
    with r = (y - rem0) / (d+1), and slot d+1 folds into slot 0.
    """
    n, dp1 = grad_bary.shape
    d = dp1 - 1
    ext = np.concatenate([grad_bary, grad_bary[:, :1]], axis=1)
    rows = np.arange(n)[:, None]
    rank = records.rank
    return (ext[rows, d - rank] - ext[rows, d + 1 - rank]) / dp1


def vjp_features(tape: FilterTape, descriptors, grad_out) -> np.ndarray:
    """dL/df for features (N, d) given the upstream gradient on the output.

    Two contributions per simplex vertex: the incoming gradient against the
    retained forward-blurred descriptors (slice side), and the point's own
    descriptor against the reverse-blurred incoming gradient (splat side).
    """
    if tape.blurred is None:
        raise ValueError("tape does not retain the blurred descriptor field")
    g = _check_grad(tape, grad_out)
    v = np.asarray(descriptors, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape != g.shape:
        raise ValueError(f"descriptors {v.shape} do not match grad_out {g.shape}")
    src = _augment(v) if tape.options.normalize else v
    g_aug = _augmented_grad(tape, g)
    if src.shape[1] != tape.blurred.shape[1]:
        raise ValueError("descriptors do not match the tape's channel count")
    rec = tape.records
    back = _backward_field(tape, g_aug)
    ids = rec.vertex_ids
    grad_b = np.einsum("nc,nkc->nk", g_aug, tape.blurred[ids])
    grad_b += np.einsum("nc,nkc->nk", src, back[ids])
    grad_y = barycentric_vjp(rec, grad_b)
    return grad_y @ tape.embedding.matrix


# ---------------------------------------------------------------------------
# finite-difference validation


@dataclass
class GradcheckReport:
    descriptor_max_rel: float
    descriptor_mean_rel: float
    feature_max_rel: float
    feature_mean_rel: float
    checked_points: int
    excluded_points: int
    descriptor_tol: float = DESCRIPTOR_TOL
    feature_tol: float = FEATURE_TOL
    extra: dict = field(default_factory=dict)

    @property
    def descriptors_ok(self) -> bool:
        return self.descriptor_max_rel <= self.descriptor_tol

    @property
    def features_ok(self) -> bool:
        return self.feature_max_rel <= self.feature_tol

    @property
    def passed(self) -> bool:
        return self.descriptors_ok and self.features_ok

    def lines(self) -> list[str]:
        status = lambda ok: "PASS" if ok else "FAIL"  # noqa: E731
        return [
            f"descriptor_vjp max_rel={self.descriptor_max_rel:.3e} mean_rel={self.descriptor_mean_rel:.3e} "
            f"tol={self.descriptor_tol:.0e} {status(self.descriptors_ok)}",
            f"feature_vjp    max_rel={self.feature_max_rel:.3e} mean_rel={self.feature_mean_rel:.3e} "
            f"tol={self.feature_tol:.0e} {status(self.features_ok)}",
            f"points checked={self.checked_points} excluded_near_boundary={self.excluded_points}",
        ]


def _rel(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, float]:
    scale = np.abs(numeric).max()
    err = np.abs(analytic - numeric)
    if scale == 0:
        m = float(err.max()) if err.size else 0.0
        return m, float(err.mean()) if err.size else 0.0
    return float(err.max() / scale), float(err.mean() / scale)


def finite_difference_check(emb: Embedding, features, descriptors, opts: FilterOptions = FilterOptions(),
                            seed: int = 0, desc_step: float = 1e-3, feat_step: float = 1e-5,
                            margin: float = MARGIN, max_points: int | None = None,
                            feature_vjp=vjp_features) -> GradcheckReport:
    """Compare both VJPs against central differences of L = sum(w * filter(f, v)).

    ``w`` is drawn from ``seed``. Feature derivatives are checked only for
    points whose barycentric weights all exceed ``margin`` (elsewhere the
    map has kinks); the rest are counted as excluded.
    """
    f = np.array(features, dtype=np.float64)
    v = np.array(descriptors, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    rng = np.random.default_rng(seed)
    out, tape = filter_with_tape(emb, f, v, opts)
    w = rng.standard_normal(out.shape)

    def loss(ff, vv):
        return float(np.sum(w * filter_with_tape(emb, ff, vv, opts)[0]))

    gv = vjp_descriptors(tape, w)
    num_v = np.empty_like(v)
    for idx in np.ndindex(*v.shape):
        vp = v.copy()
        vm = v.copy()
        vp[idx] += desc_step
        vm[idx] -= desc_step
        num_v[idx] = (loss(f, vp) - loss(f, vm)) / (2 * desc_step)
    d_max, d_mean = _rel(gv, num_v)

    gf = feature_vjp(tape, v, w)
    ok = np.flatnonzero(tape.records.margin() >= margin)
    excluded = f.shape[0] - len(ok)
    if max_points is not None and len(ok) > max_points:
        ok = np.sort(rng.choice(ok, max_points, replace=False))
    num_f = np.empty((len(ok), f.shape[1]))
    for r, i in enumerate(ok):
        for j in range(f.shape[1]):
            fp = f.copy()
            fm = f.copy()
            fp[i, j] += feat_step
            fm[i, j] -= feat_step
            num_f[r, j] = (loss(fp, v) - loss(fm, v)) / (2 * feat_step)
    if len(ok):
        f_max, f_mean = _rel(gf[ok], num_f)
    else:
        f_max = f_mean = 0.0
    return GradcheckReport(d_max, d_mean, f_max, f_mean, len(ok), excluded)


def resample_boundary_points(emb: Embedding, features, rng: np.random.Generator,
                             margin: float = MARGIN, max_rounds: int = 1000) -> tuple[np.ndarray, int]:
    """Redraw (standard normal) every point closer than ``margin`` to a simplex face.

    A point's barycentric weights depend only on its own position, so points
    can be redrawn one at a time. Returns the new features and the number of
    redraws.
    """
    f = np.array(features, dtype=np.float64)
    count = 0
    for _ in range(max_rounds):
        bad = np.flatnonzero(find_simplex(elevate(emb, f)).margin() < margin)
        if not len(bad):
            return f, count
        count += len(bad)
        f[bad] = rng.standard_normal((len(bad), f.shape[1]))
    raise RuntimeError("could not draw points away from simplex boundaries")
