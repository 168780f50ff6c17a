"""Dense/sparse kernels and seeded random streams.

Dense matrices are plain 2-D ``float64`` numpy arrays. Sparse matrices are
``scipy.sparse.csr_matrix`` instances with sorted, de-duplicated indices.
"""

from __future__ import annotations

import zlib

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError

DEFAULT_EPS = 1e-12

CsrMatrix = sp.csr_matrix
Rng = np.random.Generator


def as_dense(a) -> np.ndarray:
    """Return ``a`` as a C-contiguous 2-D float64 array."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_dense(a)
    b = as_dense(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    return a @ b


def spmm(s: CsrMatrix, d) -> np.ndarray:
    """Sparse-times-dense product ``s @ d`` returned as a dense array."""
    d = as_dense(d)
    if s.shape[1] != d.shape[0]:
        raise DimensionError(f"spmm: {s.shape} x {d.shape}")
    return np.asarray(s @ d, dtype=np.float64)


def densify(s: CsrMatrix) -> np.ndarray:
    return np.asarray(s.toarray(), dtype=np.float64)


def row_l2_normalize(m, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Scale every row to unit L2 norm; rows with norm below ``eps`` become zero."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    m = as_dense(m)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    out = np.zeros_like(m)
    ok = norms >= eps
    out[ok] = m[ok] / norms[ok, None]
    return out


def csr_from_pairs(n_rows: int, n_cols: int, rows, cols, values=None) -> CsrMatrix:
    """Build a canonical CSR matrix (sorted indices, duplicates summed)."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if values is None:
        values = np.ones(rows.shape[0], dtype=np.float64)
    m = sp.csr_matrix(
        (np.asarray(values, dtype=np.float64), (rows, cols)), shape=(n_rows, n_cols)
    )
    m.sum_duplicates()
    m.sort_indices()
    return m


def _stream_key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def make_rng(seed: int, *stream) -> Rng:
    """Seeded generator for a named sub-stream, e.g. ``make_rng(7, "kmeans", 3)``.

    The same ``(seed, *stream)`` always yields the same sequence (PCG64 is
    platform independent).
    """
    entropy = [int(seed)] + [_stream_key(p) for p in stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
