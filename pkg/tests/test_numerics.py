import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from afgrl.errors import DimensionError
from afgrl.numerics import csr_from_pairs, densify, make_rng, matmul, row_l2_normalize, spmm


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for t in range(a.shape[1]):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def test_matmul_identity(rng):
    m = rng.standard_normal((2, 3))
    np.testing.assert_array_equal(matmul(np.eye(2), m), m)


def test_matmul_small_case():
    np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])


def test_matmul_matches_triple_loop(rng):
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 3))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_dimension_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_matmul_associative(n, m, p, q, seed):
    r = np.random.default_rng(seed)
    a, b, c = r.standard_normal((n, m)), r.standard_normal((m, p)), r.standard_normal((p, q))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert np.linalg.norm(left - right) <= 1e-9 * max(1.0, np.linalg.norm(left))


def test_spmm_identity(rng):
    m = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(spmm(sp.identity(4, format="csr"), m), m)


def test_spmm_empty_is_zero(rng):
    s = sp.csr_matrix((3, 4))
    assert s.nnz == 0
    np.testing.assert_array_equal(spmm(s, rng.standard_normal((4, 2))), np.zeros((3, 2)))


def test_spmm_matches_dense(rng):
    s = sp.random(20, 20, density=0.1, format="csr", random_state=3)
    d = rng.standard_normal((20, 4))
    np.testing.assert_allclose(spmm(s, d), naive_matmul(s.toarray(), d), rtol=0, atol=1e-12)


def test_spmm_dimension_mismatch():
    with pytest.raises(DimensionError):
        spmm(sp.identity(3, format="csr"), np.ones((4, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 50), st.integers(1, 50), st.integers(1, 5), st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_spmm_property(n, m, k, density, seed):
    s = sp.random(n, m, density=density, format="csr", random_state=seed)
    d = np.random.default_rng(seed).standard_normal((m, k))
    np.testing.assert_allclose(spmm(s, d), matmul(densify(s), d), rtol=0, atol=1e-12)


def test_csr_from_pairs_is_canonical():
    m = csr_from_pairs(3, 3, [2, 0, 0, 2], [1, 2, 1, 1])
    assert m.indptr.tolist() == [0, 2, 2, 3]
    assert m.indices.tolist() == [1, 2, 1]
    assert m.data.tolist() == [1.0, 1.0, 2.0]


def test_normalize_345():
    np.testing.assert_allclose(row_l2_normalize([[3.0, 4.0]]), [[0.6, 0.8]])


def test_normalize_zero_row():
    out = row_l2_normalize([[0.0, 0.0], [1.0, 0.0]])
    np.testing.assert_array_equal(out[0], [0.0, 0.0])


def test_normalize_unit_norms(rng):
    out = row_l2_normalize(rng.standard_normal((30, 5)))
    assert np.all(np.abs(np.linalg.norm(out, axis=1) - 1.0) <= 1e-10)


def test_normalize_rejects_bad_eps():
    with pytest.raises(ValueError):
        row_l2_normalize([[1.0]], eps=0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 8), st.integers(0, 2**31))
def test_normalize_idempotent(n, d, seed):
    m = np.random.default_rng(seed).standard_normal((n, d))
    once = row_l2_normalize(m)
    np.testing.assert_allclose(row_l2_normalize(once), once, rtol=0, atol=1e-10)


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(7, "kmeans", 0).random(5)
    b = make_rng(7, "kmeans", 0).random(5)
    c = make_rng(7, "kmeans", 1).random(5)
    d = make_rng(8, "kmeans", 0).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
