"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are repeated in
the terminal summary) or directly with ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import sys
import time

import numpy as np
import pytest

from pamlattice import io as pio
from pamlattice.cli import (DENSE_MIN_SLOPE, LATTICE_SLOPE, ORACLE_CHANNELS, ORACLE_MAX_REL, ORACLE_MIN_CORR,
                            main, oracle_metrics, run_bench)
from pamlattice.filter import FilterOptions, lattice_operator, permutohedral_filter
from pamlattice.gradients import DESCRIPTOR_TOL, FEATURE_TOL, MARGIN, finite_difference_check
from pamlattice.lattice import build_lattice, elevate, find_simplex, make_embedding, simplex_vertex_key
from pamlattice.toy import BlobTask, evaluate, init_toy_model, train_toy

RESULTS: list[str] = []


def report(tag: str, ok: bool, detail: str, seconds: float, budget: float) -> bool:
    ok = ok and seconds < budget
    line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail} ({seconds:.1f} s, budget {budget:.0f} s)"
    RESULTS.append(line)
    print(line)
    return ok


def criterion_adjoint() -> bool:
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        rng = np.random.default_rng([1, i])
        n, d, c = int(rng.integers(1, 501)), int(rng.integers(1, 7)), int(rng.integers(1, 5))
        f = rng.standard_normal((n, d))
        v, u = rng.standard_normal((2, n, c))
        table, rec = build_lattice(make_embedding(d), f, ring=True)
        lhs = np.sum(lattice_operator(rec, table, v) * u)
        rhs = np.sum(v * lattice_operator(rec, table, u, order="reverse"))
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    dt = time.perf_counter() - t0
    return report("C1 adjoint identity", worst <= 1e-10, f"100 instances, worst rel gap {worst:.2e} (tol 1e-10)",
                  dt, 10)


def criterion_gradients() -> bool:
    t0 = time.perf_counter()
    worst_v = worst_f = 0.0
    checked = excluded = 0
    for i in range(50):
        rng = np.random.default_rng([2, i])
        d, n, c = int(rng.integers(1, 5)), int(rng.integers(5, 51)), int(rng.integers(1, 4))
        f = rng.standard_normal((n, d))
        v = rng.standard_normal((n, c))
        rep = finite_difference_check(make_embedding(d), f, v, FilterOptions(normalize=bool(i % 2)), seed=i,
                                      margin=MARGIN)
        worst_v = max(worst_v, rep.descriptor_max_rel)
        worst_f = max(worst_f, rep.feature_max_rel)
        checked += rep.checked_points
        excluded += rep.excluded_points
    dt = time.perf_counter() - t0
    ok = worst_v <= DESCRIPTOR_TOL and worst_f <= FEATURE_TOL
    return report("C2 gradient correctness", ok,
                  f"50 instances, descriptor max rel {worst_v:.2e} (tol {DESCRIPTOR_TOL:.0e}), feature max rel "
                  f"{worst_f:.2e} (tol {FEATURE_TOL:.0e}), {checked} points checked, {excluded} near faces skipped",
                  dt, 60)


def criterion_oracle() -> bool:
    t0 = time.perf_counter()
    parts, ok = [], True
    for d in (2, 3, 5):
        row = oracle_metrics(500, d, ORACLE_CHANNELS, seed=0, normalize=True)
        good = row["correlation"] > ORACLE_MIN_CORR and row["mean_rel_l2"] < ORACLE_MAX_REL
        ok &= good
        parts.append(f"d={d} corr={row['correlation']:.4f} mean_rel={row['mean_rel_l2']:.3f} "
                     f"{'ok' if good else 'MISS'}")
    dt = time.perf_counter() - t0
    return report("C3 oracle agreement", ok,
                  f"N=500 c={ORACLE_CHANNELS}; " + "; ".join(parts)
                  + f" (need corr > {ORACLE_MIN_CORR}, mean_rel < {ORACLE_MAX_REL})", dt, 30)


def criterion_complexity() -> bool:
    t0 = time.perf_counter()
    _, slopes = run_bench({"lattice": [10**3, 10**4, 10**5, 10**6], "dense": [100, 300, 1000]}, d=5, reps=5)
    dt = time.perf_counter() - t0
    ok = LATTICE_SLOPE[0] <= slopes["lattice"] <= LATTICE_SLOPE[1] and slopes["dense"] > DENSE_MIN_SLOPE
    return report("C4 complexity", ok,
                  f"lattice slope {slopes['lattice']:.3f} (need {LATTICE_SLOPE[0]}..{LATTICE_SLOPE[1]}), "
                  f"dense slope {slopes['dense']:.3f} (need > {DENSE_MIN_SLOPE})", dt, 600)


def criterion_geometry() -> bool:
    t0 = time.perf_counter()
    checks = 10**4
    fails = {"zero-sum": 0, "remainder": 0, "partition": 0, "reconstruction": 0, "permutation": 0}
    rng = np.random.default_rng(5)
    for d in range(1, 7):
        n = checks // 6 + (1 if d <= checks % 6 else 0)
        y = elevate(make_embedding(d), rng.standard_normal((n, d)) * 10 ** rng.uniform(-2, 2, (n, 1)))
        rec = find_simplex(y)
        V = np.stack([simplex_vertex_key(rec.rem0, rec.rank, k) for k in range(d + 1)], axis=1)
        fails["zero-sum"] += int(np.sum(np.any(V.sum(axis=2) != 0, axis=1)))
        fails["remainder"] += int(np.sum(~np.all(np.mod(V, d + 1) == np.arange(d + 1)[None, :, None], axis=(1, 2))))
        b = rec.barycentric
        fails["partition"] += int(np.sum((np.abs(b.sum(axis=1) - 1) > 1e-9) | (b.min(axis=1) < -1e-12)))
        recon = np.abs(np.einsum("nk,nkc->nc", b, V) - y).max(axis=1)
        fails["reconstruction"] += int(np.sum(recon > 1e-9 * np.maximum(1.0, np.abs(y).max(axis=1))))
    opts = FilterOptions(deterministic=True)
    for i in range(checks // 10):
        r = np.random.default_rng([5, i])
        d, n = 1 + i % 6, int(r.integers(2, 13))
        f = r.standard_normal((n, d))
        v = r.standard_normal((n, 2))
        emb = make_embedding(d)
        ref = permutohedral_filter(emb, f, v, opts)
        for _ in range(10):
            p = r.permutation(n)
            fails["permutation"] += permutohedral_filter(emb, f[p], v[p], opts).tobytes() != ref[p].tobytes()
    dt = time.perf_counter() - t0
    total = sum(fails.values())
    detail = ", ".join(f"{k} {v}" for k, v in fails.items())
    return report("C5 lattice geometry invariants", total == 0, f"{checks} checks each; failures: {detail}", dt, 30)


def criterion_context() -> bool:
    t0 = time.perf_counter()
    task = BlobTask()
    gains, pams, locs = [], [], []
    for seed in range(5):
        m0 = init_toy_model(task, seed=seed)
        pam, _ = train_toy(task, m0, steps=500, seed=seed, arm="pam")
        loc, _ = train_toy(task, m0, steps=500, seed=seed, arm="local")
        a, b = evaluate(pam, task, "pam"), evaluate(loc, task, "local")
        pams.append(a)
        locs.append(b)
        gains.append(100 * (a - b))
    dt = time.perf_counter() - t0
    med = float(np.median(gains))
    return report("C6 context learning", med >= 20,
                  f"median gain {med:.1f} points (need >= 20); pam {np.round(pams, 3).tolist()}, "
                  f"local {np.round(locs, 3).tolist()}", dt, 300)


def criterion_bilateral(tmp) -> bool:
    import os

    t0 = time.perf_counter()
    const = pio.Image(np.full((32, 24, 3), [12, 128, 250], dtype=np.uint8))
    pio.write_image(const, os.path.join(tmp, "const.ppm"))
    code1 = main(["bilateral", os.path.join(tmp, "const.ppm"), "--out", os.path.join(tmp, "const_out.ppm")])
    fixed = code1 == 0 and np.array_equal(pio.read_image(os.path.join(tmp, "const_out.ppm")).samples, const.samples)

    a = np.full((64, 64), 60.0)
    a[:, 32:] = 190.0
    noisy = np.clip(np.rint(a + np.random.default_rng(7).normal(0, 12, a.shape)), 0, 255).astype(np.uint8)
    pio.write_image(pio.Image(noisy), os.path.join(tmp, "step.pgm"))
    code2 = main(["bilateral", os.path.join(tmp, "step.pgm"), "--out", os.path.join(tmp, "step_out.pgm")])
    out = pio.read_image(os.path.join(tmp, "step_out.pgm")).samples.astype(float)
    before = [noisy[:, :32].astype(float).var(), noisy[:, 32:].astype(float).var()]
    after = [out[:, :32].var(), out[:, 32:].var()]
    smooth = code2 == 0 and all(x < y for x, y in zip(after, before))
    dt = time.perf_counter() - t0
    return report("C7 bilateral CLI", fixed and smooth,
                  f"constant fixed point {fixed}; flat-region variance {before[0]:.1f}->{after[0]:.1f}, "
                  f"{before[1]:.1f}->{after[1]:.1f}", dt, 10)


# --- pytest entry points ------------------------------------------------------


def test_c1_adjoint_identity():
    assert criterion_adjoint()


def test_c2_gradient_correctness():
    assert criterion_gradients()


def test_c3_oracle_agreement():
    assert criterion_oracle()


@pytest.mark.slow
def test_c4_complexity():
    assert criterion_complexity()


def test_c5_geometry_invariants():
    assert criterion_geometry()


@pytest.mark.slow
def test_c6_context_learning():
    assert criterion_context()


def test_c7_bilateral_cli(tmp_path, capsys):
    ok = criterion_bilateral(str(tmp_path))
    assert ok


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        results = [criterion_adjoint(), criterion_gradients(), criterion_oracle(), criterion_complexity(),
                   criterion_geometry(), criterion_context(), criterion_bilateral(tmp)]
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
