"""Command-line entry point.

Exit status: 0 on success, 1 when a checked threshold is violated, 2 on a
usage or IO error.
"""
from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import io as pio
from .dense import DEFAULT_CAP, DenseCapError, calibration_gain, compare, nlm_dense
from .filter import FilterOptions, permutohedral_filter
from .gradients import (MARGIN, finite_difference_check, resample_boundary_points,
                        vjp_features)
from .lattice import make_embedding
from .toy import BlobTask, TrainingDiverged, evaluate, init_toy_model, train_toy

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

ORACLE_FIELDS = ("n", "d", "channels", "seed", "normalize", "gain", "mean_rel_l2", "max_rel_l2",
                 "correlation", "lattice_seconds", "dense_seconds")
ORACLE_MAX_REL = 0.15
ORACLE_MIN_CORR = 0.99
LATTICE_SLOPE = (0.8, 1.3)
DENSE_MIN_SLOPE = 1.7
# per-point relative error is ill-conditioned for one channel (oracle rows near
# zero); it settles from about 8 channels on
ORACLE_CHANNELS = 8


class UsageError(Exception):
    pass


def parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def positive_int(s: str) -> int:
    v = int(s)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def positive_float(s: str) -> float:
    v = float(s)
    if not v > 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def int_list(s: str) -> list[int]:
    try:
        vals = [int(float(t)) for t in s.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {s!r}")
    return vals


def _emit(line: str = "") -> None:
    sys.stdout.write(line + "\n")


def random_problem(n: int, d: int, channels: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit-scale Gaussian features (n, d) and descriptors (n, channels)."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.standard_normal((n, channels))


def _bandwidth(values, d: int) -> np.ndarray:
    bw = np.asarray(values if values else [1.0], dtype=np.float64)
    if bw.size not in (1, d):
        raise UsageError(f"--bandwidth needs 1 or {d} values, got {bw.size}")
    return np.broadcast_to(bw, (d,)).copy()


# ---------------------------------------------------------------------------
# bilateral


def bilateral_image(img: pio.Image, sigma_s: float, sigma_r: float, threads: int = 1) -> pio.Image:
    """Edge-preserving smoothing: normalized filtering over (x, y, intensity)."""
    if not (sigma_s > 0 and sigma_r > 0):
        raise ValueError("bandwidths must be positive")
    s = img.samples.astype(np.float64)
    h, w = img.height, img.width
    vals = s.reshape(h * w, img.channels)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    feats = np.concatenate([np.stack([xx.ravel(), yy.ravel()], axis=1) / sigma_s, vals / sigma_r], axis=1)
    emb = make_embedding(feats.shape[1])
    out = permutohedral_filter(emb, feats, vals, FilterOptions(normalize=True, threads=threads))
    out = np.clip(np.rint(out), 0, img.maxval)
    return pio.Image(out.reshape(img.samples.shape), img.maxval)


def cmd_bilateral(args) -> int:
    img = pio.read_image(args.input)
    if args.bandwidth is None:
        sigma_s, sigma_r = 4.0, 0.1 * img.maxval
    elif len(args.bandwidth) == 2:
        sigma_s, sigma_r = args.bandwidth
    else:
        raise UsageError("--bandwidth for bilateral takes SIGMA_S SIGMA_R")
    if sigma_s <= 0 or sigma_r <= 0:
        raise UsageError("bandwidths must be positive")
    out = bilateral_image(img, sigma_s, sigma_r, args.threads)
    pio.write_image(out, args.out)
    _emit(f"wrote {args.out} ({img.width}x{img.height}, {img.channels} channel(s)) "
          f"sigma_s={pio.format_float(sigma_s)} sigma_r={pio.format_float(sigma_r)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle-compare


def oracle_metrics(n: int, d: int, channels: int = 1, seed: int = 0, normalize: bool = True,
                   bandwidth=1.0, cap: int = DEFAULT_CAP, threads: int = 1) -> dict:
    """Lattice against the dense squared-exponential oracle on a seeded random problem.

    In unnormalized mode the lattice output is first rescaled by the
    least-squares gain (reported as ``gain``); normalized mode has gain 1.
    """
    if n > cap:
        raise DenseCapError(f"n={n} exceeds the dense cap {cap}")
    f, v = random_problem(n, d, channels, seed)
    bw = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (d,))
    t0 = time.perf_counter()
    lat = permutohedral_filter(make_embedding(d, bw), f, v, FilterOptions(normalize=normalize, threads=threads))
    t1 = time.perf_counter()
    ref = nlm_dense(f / bw, v, normalize=normalize, cap=cap)
    t2 = time.perf_counter()
    gain = 1.0 if normalize else calibration_gain(lat, ref)
    row = {"n": n, "d": d, "channels": channels, "seed": seed, "normalize": int(normalize), "gain": gain}
    row.update(compare(gain * lat, ref))
    row.update(lattice_seconds=t1 - t0, dense_seconds=t2 - t1)
    return row


def oracle_passes(row: dict) -> bool:
    return row["correlation"] > ORACLE_MIN_CORR and row["mean_rel_l2"] < ORACLE_MAX_REL


def cmd_oracle_compare(args) -> int:
    d = args.d if args.d is not None else 3
    row = oracle_metrics(args.n if args.n is not None else 500, d, args.channels or ORACLE_CHANNELS, args.seed,
                         args.normalize, _bandwidth(args.bandwidth, d), args.cap, args.threads)
    if args.out:
        pio.write_csv([row], ORACLE_FIELDS, args.out)
    ok = oracle_passes(row)
    _emit(f"n={row['n']} d={row['d']} channels={row['channels']} normalize={bool(row['normalize'])} "
          f"gain={pio.format_float(row['gain'])}")
    _emit(f"mean_rel_l2={pio.format_float(row['mean_rel_l2'])} (< {ORACLE_MAX_REL}) "
          f"correlation={pio.format_float(row['correlation'])} (> {ORACLE_MIN_CORR}) "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# gradcheck


def _sign_flipped(tape, descriptors, grad_out):
    return -vjp_features(tape, descriptors, grad_out)


FAULTS = {"none": vjp_features, "sign-flip": _sign_flipped}


def gradcheck_report(n: int = 30, d: int = 3, channels: int = 2, seed: int = 0, normalize: bool = True,
                     bandwidth=1.0, max_points: int | None = None, fault: str = "none") -> tuple[list[str], bool]:
    """Run the finite-difference check on a seeded problem; returns (report lines, passed)."""
    emb = make_embedding(d, np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (d,)))
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n, d))
    v = rng.standard_normal((n, channels))
    f, redrawn = resample_boundary_points(emb, f, rng, MARGIN)
    rep = finite_difference_check(emb, f, v, FilterOptions(normalize=normalize), seed=seed,
                                  max_points=max_points, feature_vjp=FAULTS[fault])
    head = f"gradcheck n={n} d={d} channels={channels} seed={seed} normalize={str(normalize).lower()}"
    lines = [head, *rep.lines(), f"boundary samples redrawn={redrawn}",
             f"result {'PASS' if rep.passed else 'FAIL'}"]
    return lines, rep.passed


def cmd_gradcheck(args) -> int:
    d = args.d if args.d is not None else 3
    lines, passed = gradcheck_report(args.n if args.n is not None else 30, d, args.channels or 2, args.seed,
                                     args.normalize, _bandwidth(args.bandwidth, d), args.max_points,
                                     args.fault)
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# bench


def loglog_slope(ns, seconds) -> float:
    """Least-squares slope of log(seconds) against log(n)."""
    x, y = np.log(np.asarray(ns, dtype=np.float64)), np.log(np.asarray(seconds, dtype=np.float64))
    if len(x) < 2:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def time_call(fn, reps: int = 5) -> float:
    """Median wall time of ``reps`` calls after one warm-up call."""
    fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def run_bench(methods: dict[str, list[int]], d: int = 5, channels: int = 1, seed: int = 0, reps: int = 5,
              cap: int = DEFAULT_CAP, threads: int = 1, normalize: bool = True,
              log=None) -> tuple[list[dict], dict[str, float]]:
    """Time each method over its list of sizes. Returns CSV rows and per-method slopes.

    ``rel_error`` is the oracle's mean relative L2 error for lattice rows with
    n within the dense cap, 0 for dense rows, and nan otherwise.
    """
    emb = make_embedding(d)
    opts = FilterOptions(normalize=normalize, threads=threads)
    rows, slopes = [], {}
    for method, ns in methods.items():
        if method not in ("lattice", "dense"):
            raise UsageError(f"unknown method {method!r}")
        secs = []
        for n in ns:
            if method == "dense" and n > cap:
                raise UsageError(f"dense method limited to n <= {cap}, got {n}")
            f, v = random_problem(n, d, channels, seed)
            if method == "lattice":
                t = time_call(lambda: permutohedral_filter(emb, f, v, opts), reps)
                rel = (compare(permutohedral_filter(emb, f, v, opts),
                               nlm_dense(f, v, normalize=normalize, cap=cap))["mean_rel_l2"]
                       if n <= cap and normalize else float("nan"))
            else:
                t = time_call(lambda: nlm_dense(f, v, normalize=normalize, cap=cap), reps)
                rel = 0.0
            secs.append(t)
            rows.append({"n": n, "d": d, "channels": channels, "method": method, "seconds": t, "rel_error": rel})
            if log:
                log(f"{method} n={n} seconds={pio.format_float(t)}")
        slopes[method] = loglog_slope(ns, secs)
    return rows, slopes


def slopes_pass(slopes: dict[str, float]) -> bool:
    ok = True
    if "lattice" in slopes:
        ok &= LATTICE_SLOPE[0] <= slopes["lattice"] <= LATTICE_SLOPE[1]
    if "dense" in slopes:
        ok &= slopes["dense"] > DENSE_MIN_SLOPE
    return bool(ok)


def cmd_bench(args) -> int:
    methods = {}
    for m in args.methods.split(","):
        m = m.strip()
        if m == "lattice":
            methods[m] = args.n_list or ([args.n] if args.n else [1000, 10000, 100000, 1000000])
        elif m == "dense":
            methods[m] = args.dense_n or ([args.n] if args.n else [100, 300, 1000])
        else:
            raise UsageError(f"unknown method {m!r}; choose lattice and/or dense")
    rows, slopes = run_bench(methods, args.d if args.d is not None else 5, args.channels or 1, args.seed,
                             args.reps, args.cap, args.threads, args.normalize, log=_emit)
    if args.out:
        pio.write_bench_csv(rows, args.out)
    else:
        sys.stdout.write(pio.bench_csv(rows))
    for m, s in slopes.items():
        _emit(f"slope {m}={pio.format_float(s)}")
    if args.check:
        ok = slopes_pass(slopes)
        _emit(f"slope check {'PASS' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# demo-train

TRACE_FIELDS = ("step", "loss", "accuracy")
CHECKPOINT_ROLES = {
    "W_f": "feature extractor weight", "b_f": "feature extractor bias",
    "W_v": "descriptor extractor weight", "b_v": "descriptor extractor bias",
    "H": "linear head weight", "h": "linear head bias",
}


def model_tensors(model) -> dict:
    return {**model.pam.arrays, "H": model.H, "h": model.h}


def cmd_demo_train(args) -> int:
    task = BlobTask(length=args.length, n_blobs=args.blobs, width=args.width, max_gap=args.max_gap,
                    ndim=args.ndim)
    model0 = init_toy_model(task, args.features, args.descriptors, seed=args.seed)
    out = args.out or "demo-train"
    os.makedirs(out, exist_ok=True)
    model, trace = train_toy(task, model0, steps=args.steps, lr=args.lr, seed=args.seed, batch=args.batch)
    pio.write_csv(trace, TRACE_FIELDS, os.path.join(out, "trace.csv"))
    config = {"task": "ordered-blobs", "length": task.length, "blobs": task.n_blobs, "width": task.width,
              "max_gap": task.max_gap, "ndim": task.ndim, "steps": args.steps, "lr": args.lr,
              "seed": args.seed, "batch": args.batch}
    pio.save_checkpoint(os.path.join(out, "checkpoint"), model_tensors(model), CHECKPOINT_ROLES, config)
    acc = evaluate(model, task, "pam")
    _emit(f"pam accuracy={pio.format_float(acc)}")
    if not args.baseline:
        return EXIT_OK
    local, trace_l = train_toy(task, model0, steps=args.steps, lr=args.lr, seed=args.seed, arm="local",
                               batch=args.batch)
    pio.write_csv(trace_l, TRACE_FIELDS, os.path.join(out, "trace_local.csv"))
    acc_l = evaluate(local, task, "local")
    gain = 100.0 * (acc - acc_l)
    _emit(f"local accuracy={pio.format_float(acc_l)}")
    _emit(f"gain points={pio.format_float(gain)}")
    if args.min_gain is not None and gain < args.min_gain:
        _emit(f"gain below {args.min_gain} FAIL")
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=positive_int, help="number of points")
    common.add_argument("--d", type=positive_int, help="feature dimension")
    common.add_argument("--channels", type=positive_int, help="descriptor channels")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--bandwidth", type=positive_float, nargs="+", help="feature bandwidth(s)")
    common.add_argument("--normalize", type=parse_bool, default=True, metavar="BOOL")
    common.add_argument("--threads", type=positive_int, default=1)
    common.add_argument("--out", help="output path")
    common.add_argument("--cap", type=positive_int, default=DEFAULT_CAP, help="largest n for the dense oracle")

    p = argparse.ArgumentParser(prog="pamlattice", description="Permutohedral lattice filtering tools.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bilateral", parents=[common], help="edge-preserving filter for PGM/PPM images")
    b.add_argument("input", help="P5 or P6 image")
    b.set_defaults(func=cmd_bilateral, needs_out=True)

    o = sub.add_parser("oracle-compare", parents=[common], help="lattice vs dense oracle on random data")
    o.set_defaults(func=cmd_oracle_compare)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of both VJPs")
    g.add_argument("--max-points", type=positive_int, help="cap on points used for the feature check")
    g.add_argument("--fault", choices=sorted(FAULTS), default="none", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    be = sub.add_parser("bench", parents=[common], help="runtime scaling of lattice and dense filtering")
    be.add_argument("--methods", default="lattice,dense")
    be.add_argument("--n-list", type=int_list, help="lattice sizes, comma-separated")
    be.add_argument("--dense-n", type=int_list, help="dense sizes, comma-separated")
    be.add_argument("--reps", type=positive_int, default=5)
    be.add_argument("--check", action="store_true", help="exit 1 unless slopes are linear / quadratic")
    be.set_defaults(func=cmd_bench)

    t = sub.add_parser("demo-train", parents=[common], help="train on the ordered-blobs toy task")
    t.add_argument("--steps", type=int, default=500)
    t.add_argument("--lr", type=float, default=1.0)
    t.add_argument("--batch", type=positive_int, default=4)
    t.add_argument("--length", type=positive_int, default=32)
    t.add_argument("--blobs", type=positive_int, default=3)
    t.add_argument("--width", type=positive_int, default=3)
    t.add_argument("--max-gap", type=positive_int, default=5)
    t.add_argument("--ndim", type=int, choices=(1, 2), default=1)
    t.add_argument("--features", type=positive_int, default=8)
    t.add_argument("--descriptors", type=positive_int, default=4)
    t.add_argument("--baseline", action="store_true", help="also train the local-only arm and report the gain")
    t.add_argument("--min-gain", type=float, help="with --baseline, exit 1 if the gain (points) is below this")
    t.set_defaults(func=cmd_demo_train)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "needs_out", False) and not args.out:
        parser.error("--out is required")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_FAIL
    except (UsageError, OSError, ValueError) as exc:
        # FormatError and DenseCapError are ValueErrors
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
