import math

import numpy as np
import pytest

from pamlattice.dense import (DenseCapError, attention_dense, calibration_gain, compare, nlm_dense,
                              pairwise_sq_dists)


def loop_kernel(f, kernel):
    n = len(f)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            r2 = sum((a - b) ** 2 for a, b in zip(f[i], f[j]))
            K[i, j] = math.exp(-r2 / 2) if kernel == "gaussian" else math.exp(-math.sqrt(r2))
    return K


@pytest.mark.parametrize("kernel", ["gaussian", "exp_l2"])
def test_kernel_matches_loop(kernel):
    f = np.random.default_rng(0).standard_normal((25, 3))
    np.testing.assert_allclose(attention_dense(f, kernel), loop_kernel(f.tolist(), kernel), rtol=1e-13)


def test_closed_forms():
    f = np.array([[0.0, 0.0], [1.0, 1.0]])  # squared distance 2
    assert attention_dense(f)[0, 1] == pytest.approx(0.367879441, abs=1e-9)
    f1 = np.array([[0.0], [1.0]])
    assert attention_dense(f1, "exp_l2")[0, 1] == pytest.approx(math.exp(-1), rel=1e-15)
    same = np.array([[0.3, 0.3], [0.3, 0.3]])
    assert np.all(attention_dense(same) == 1.0)


def test_nlm_two_points():
    v = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(nlm_dense(np.zeros((2, 1)), v, normalize=False)[0], [1.0, 1.0])
    f = np.array([[0.0, 0.0], [1.0, 1.0]])
    e = math.exp(-1)
    np.testing.assert_allclose(nlm_dense(f, v, normalize=False)[0], v[0] + e * v[1], rtol=1e-15)
    np.testing.assert_allclose(nlm_dense(f, v)[0], (v[0] + e * v[1]) / (1 + e), rtol=1e-15)


def test_kernel_invariants():
    f = np.random.default_rng(1).standard_normal((700, 4))
    K = attention_dense(f)
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)
    assert np.all(K >= 0)
    v = np.eye(700)[:, :5]
    rows = nlm_dense(f, np.ones(700))
    np.testing.assert_allclose(rows, 1.0, atol=1e-12)
    np.testing.assert_allclose(nlm_dense(f, v, normalize=False), K @ v, atol=1e-12)


def test_pairwise_blocks_cover_rows():
    f = np.random.default_rng(2).standard_normal((1100, 7))
    D = pairwise_sq_dists(f)
    i, j = 1099, 3
    assert D[i, j] == np.sum((f[i] - f[j]) ** 2)


def test_nlm_linear():
    rng = np.random.default_rng(3)
    f, v, w = rng.standard_normal((3, 50, 2))
    np.testing.assert_allclose(nlm_dense(f, 2 * v + w), 2 * nlm_dense(f, v) + nlm_dense(f, w), atol=1e-12)


def test_cap():
    with pytest.raises(DenseCapError):
        attention_dense(np.zeros((11, 2)), cap=10)
    with pytest.raises(ValueError):
        attention_dense(np.zeros((3, 2)), kernel="cauchy")
    with pytest.raises(ValueError):
        nlm_dense(np.zeros((3, 2)), np.zeros(4))


def test_compare_cases():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((30, 3))
    m = compare(a, a)
    assert m == {"mean_rel_l2": 0.0, "max_rel_l2": 0.0, "correlation": 1.0}
    m = compare(a, 2 * a)
    assert m["mean_rel_l2"] == pytest.approx(0.5, rel=1e-14)
    assert m["max_rel_l2"] == pytest.approx(0.5, rel=1e-14)
    assert m["correlation"] == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(ValueError):
        compare(a, a[:3])


def test_calibration_gain():
    a = np.random.default_rng(5).standard_normal(40)
    assert calibration_gain(a, 3.5 * a) == pytest.approx(3.5, rel=1e-14)
