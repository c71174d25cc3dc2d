import subprocess
import sys

import numpy as np
import pytest

from pamlattice import io as pio
from pamlattice.cli import ORACLE_FIELDS, bilateral_image, loglog_slope, main, oracle_metrics, parse_bool
from pamlattice.dense import compare, nlm_dense
from pamlattice.filter import permutohedral_filter
from pamlattice.lattice import make_embedding
from pamlattice.toy import BlobTask, init_toy_model


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def step_image(noise=0.0, seed=0, size=64):
    a = np.full((size, size), 60.0)
    a[:, size // 2:] = 190.0
    a += np.random.default_rng(seed).normal(0, noise, a.shape)
    return pio.Image(np.clip(np.rint(a), 0, 255).astype(np.uint8))


def test_parse_bool():
    assert parse_bool("True") and parse_bool("1") and not parse_bool("no")
    with pytest.raises(Exception):
        parse_bool("maybe")


def test_oracle_single_point():
    row = oracle_metrics(1, 3, channels=2, seed=5)
    assert row["mean_rel_l2"] < 1e-9 and row["max_rel_l2"] < 1e-9


def test_oracle_identical_features():
    v = np.random.default_rng(0).standard_normal((50, 3))
    f = np.tile([[0.2, -0.1, 0.7]], (50, 1))
    m = compare(permutohedral_filter(make_embedding(3), f, v), nlm_dense(f, v))
    assert m["max_rel_l2"] < 1e-6


def test_oracle_compare_cli(tmp_path, capsys):
    out = tmp_path / "o.csv"
    code, text = run(capsys, "oracle-compare", "--n", "500", "--d", "3", "--out", str(out))
    assert code == 0 and "PASS" in text
    rows = pio.read_csv(out, ORACLE_FIELDS)
    assert rows[0]["n"] == 500 and rows[0]["correlation"] > 0.99 and rows[0]["mean_rel_l2"] < 0.15


def test_oracle_unnormalized_reports_gain(capsys):
    code, text = run(capsys, "oracle-compare", "--n", "300", "--d", "2", "--normalize", "false")
    assert "gain=" in text and "gain=1 " not in text
    assert code in (0, 1)


def test_oracle_cap(capsys):
    assert main(["oracle-compare", "--n", "50", "--cap", "10"]) == 2


def test_oracle_bad_bandwidth_count(capsys):
    assert main(["oracle-compare", "--n", "20", "--d", "3", "--bandwidth", "1", "2"]) == 2


def test_gradcheck_pass_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    code, text = run(capsys, "gradcheck", "--n", "20", "--d", "3", "--seed", "7", "--out", str(a))
    assert code == 0 and text.strip().endswith("result PASS")
    assert main(["gradcheck", "--n", "20", "--d", "3", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_gradcheck_fault(capsys):
    code, text = run(capsys, "gradcheck", "--n", "20", "--fault", "sign-flip")
    assert code == 1 and "FAIL" in text


def test_gradcheck_unnormalized(capsys):
    code, _ = run(capsys, "gradcheck", "--n", "15", "--d", "2", "--normalize", "false")
    assert code == 0


def test_bench_csv(tmp_path, capsys):
    out = tmp_path / "b.csv"
    code, text = run(capsys, "bench", "--n-list", "200,400", "--dense-n", "50,100", "--d", "3", "--reps", "2",
                     "--out", str(out))
    assert code == 0
    rows = pio.read_bench_csv(out)
    assert [(r["method"], r["n"]) for r in rows] == [("lattice", 200), ("lattice", 400), ("dense", 50),
                                                    ("dense", 100)]
    assert all(r["seconds"] > 0 for r in rows)
    assert "slope lattice=" in text and "slope dense=" in text


def test_bench_dense_cap(capsys):
    assert main(["bench", "--methods", "dense", "--dense-n", "100", "--cap", "50", "--reps", "1"]) == 2


def test_loglog_slope():
    n = np.array([10, 100, 1000])
    assert loglog_slope(n, 3e-6 * n ** 2) == pytest.approx(2.0, rel=1e-12)
    assert np.isnan(loglog_slope([5], [1.0]))


def test_bilateral_constant_fixed_point(tmp_path, capsys):
    src, dst = tmp_path / "c.ppm", tmp_path / "o.ppm"
    img = pio.Image(np.full((12, 10, 3), [10, 200, 77], dtype=np.uint8))
    pio.write_image(img, src)
    assert main(["bilateral", str(src), "--out", str(dst)]) == 0
    assert np.array_equal(pio.read_image(dst).samples, img.samples)


def test_bilateral_tiny_range_bandwidth():
    img = step_image()
    out = bilateral_image(img, 4.0, 1e-3 * 255)
    assert np.abs(out.samples.astype(int) - img.samples.astype(int)).max() <= 1


def test_bilateral_smooths_flat_regions(tmp_path):
    img = step_image(noise=12.0, seed=1)
    src, dst = tmp_path / "n.pgm", tmp_path / "o.pgm"
    pio.write_image(img, src)
    assert main(["bilateral", str(src), "--out", str(dst), "--bandwidth", "3", "40"]) == 0
    out = pio.read_image(dst).samples.astype(float)
    inp = img.samples.astype(float)
    for sl in (np.s_[:, :32], np.s_[:, 32:]):
        assert out[sl].var() < inp[sl].var()


def test_bilateral_sixteen_bit():
    img = pio.Image(np.full((6, 6), 40000, dtype=np.uint16), 65535)
    assert np.array_equal(bilateral_image(img, 2.0, 1000.0).samples, img.samples)


def test_bilateral_errors(tmp_path, capsys):
    src = tmp_path / "c.pgm"
    pio.write_image(step_image(size=8), src)
    assert main(["bilateral", str(tmp_path / "missing.pgm"), "--out", str(tmp_path / "x.pgm")]) == 2
    assert main(["bilateral", str(src), "--out", str(tmp_path / "x.pgm"), "--bandwidth", "3"]) == 2
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P2\n1 1\n255\n0")
    assert main(["bilateral", str(bad), "--out", str(tmp_path / "x.pgm")]) == 2
    with pytest.raises(SystemExit) as info:
        main(["bilateral", str(src), "--out", str(tmp_path / "x.pgm"), "--bandwidth", "0", "1"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["bilateral", str(src)])
    assert info.value.code == 2


def test_demo_train_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    code, text = run(capsys, "demo-train", "--steps", "3", "--length", "20", "--width", "2", "--max-gap", "3",
                     "--out", str(out), "--baseline")
    assert code == 0 and "gain points=" in text
    trace = pio.read_csv(out / "trace.csv", ("step", "loss", "accuracy"))
    assert [r["step"] for r in trace] == [0, 1, 2]
    assert len(pio.read_csv(out / "trace_local.csv")) == 3
    tensors, manifest = pio.load_checkpoint(out / "checkpoint")
    assert set(tensors) == {"W_f", "b_f", "W_v", "b_v", "H", "h"}
    assert all(e["role"] for e in manifest["tensors"])
    assert manifest["config"]["steps"] == 3


def test_demo_train_zero_steps_saves_initial_model(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["demo-train", "--steps", "0", "--seed", "4", "--out", str(out)]) == 0
    tensors, _ = pio.load_checkpoint(out / "checkpoint")
    m0 = init_toy_model(BlobTask(), seed=4)
    assert np.array_equal(tensors["W_f"], m0.pam.W_f) and np.array_equal(tensors["H"], m0.H)


def test_demo_train_min_gain(tmp_path, capsys):
    code = main(["demo-train", "--steps", "1", "--baseline", "--min-gain", "101", "--out", str(tmp_path / "r")])
    assert code == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pamlattice", "gradcheck", "--n", "8", "--d", "2"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "result PASS" in res.stdout
    res = subprocess.run([sys.executable, "-m", "pamlattice", "no-such-command"], capture_output=True, text=True)
    assert res.returncode == 2
