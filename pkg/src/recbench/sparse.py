"""
Sparse storage helpers and the numerical kernels shared by the models:
shrunk cosine top-k similarity, randomized truncated SVD and a Cholesky
SPD solve.

Matrices are plain :class:`scipy.sparse.csr_matrix` objects kept in
canonical form (sorted column indices, no duplicates, no explicit zeros).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

_log = logging.getLogger(__name__)

#: rows per dense block when materializing similarity products
BLOCK_ROWS = 1024
#: matrices with at most this many cells get an exact dense SVD under "auto"
DENSE_SVD_CELLS = 2_000_000


def as_csr(m, dtype=np.float64) -> sp.csr_matrix:
    """
    Return ``m`` as a canonical CSR matrix.  Always copies, so callers
    can treat the result as their own immutable snapshot.
    """
    out = sp.csr_matrix(m, dtype=dtype, copy=True)
    out.sum_duplicates()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def check_csr(m: sp.csr_matrix):
    """Raise ``ValueError`` if ``m`` breaks the canonical-form invariants."""
    if not sp.isspmatrix_csr(m):
        raise ValueError("expected a CSR matrix")
    if not m.has_sorted_indices or not m.has_canonical_format:
        raise ValueError("column indices must be strictly increasing within rows")
    if m.nnz and np.any(m.data == 0):
        raise ValueError("explicit zeros stored")


def binary_rows(rows, n_cols: int) -> sp.csr_matrix:
    """Build a binary CSR matrix from a sequence of per-row item index lists."""
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    if indptr[-1]:
        indices = np.concatenate([np.asarray(r, dtype=np.int64) for r in rows])
    else:
        indices = np.zeros(0, dtype=np.int64)
    data = np.ones(len(indices))
    return as_csr(sp.csr_matrix((data, indices, indptr), shape=(len(rows), n_cols)))


def row_normalize(m: sp.csr_matrix) -> sp.csr_matrix:
    "Divide each row by its sum; all-zero rows stay zero."
    sums = np.asarray(m.sum(axis=1)).ravel()
    inv = np.zeros_like(sums, dtype=np.float64)
    np.divide(1.0, sums, out=inv, where=sums != 0)
    return as_csr(sp.diags(inv) @ m)


@dataclass(frozen=True)
class DenseFactorPair:
    """
    Low-rank factors of a matrix.  ``singular_values`` is present for SVD
    output and ``None`` for factorizations that do not produce them.
    """

    row_factors: np.ndarray
    col_factors: np.ndarray
    singular_values: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return self.col_factors.shape[1]

    def reconstruct(self) -> np.ndarray:
        if self.singular_values is None:
            return self.row_factors @ self.col_factors.T
        return (self.row_factors * self.singular_values) @ self.col_factors.T


def _topk_dense_rows(block: np.ndarray, k: int, offset: int | None):
    """
    Keep the ``k`` largest positive entries of each row of ``block``.  Ties
    go to the smaller column index.  Returns COO triplets with row indices
    local to the block.
    """
    if offset is not None:
        r = np.arange(block.shape[0])
        block[r, r + offset] = 0.0
    k = min(k, block.shape[1])
    # stable sort on the negated values keeps equal scores in index order
    order = np.argsort(-block, axis=1, kind="stable")[:, :k]
    vals = np.take_along_axis(block, order, axis=1)
    rows = np.repeat(np.arange(block.shape[0]), k).reshape(block.shape[0], k)
    keep = vals > 0
    return rows[keep], order[keep], vals[keep]


def topk_rows(dense: np.ndarray, k: int) -> sp.csr_matrix:
    """
    Sparse copy of ``dense`` keeping the ``k`` largest positive entries of
    each row, ties to the smaller column index.
    """
    r, c, v = _topk_dense_rows(np.asarray(dense, dtype=np.float64), k, None)
    return as_csr(sp.csr_matrix((v, (r, c)), shape=dense.shape))


def shrunk_cosine(dots: np.ndarray, left_norms, right_norms, shrinkage: float):
    "Cosine with the usual additive shrinkage term in the denominator."
    denom = np.outer(left_norms, right_norms) + shrinkage
    out = np.zeros_like(dots, dtype=np.float64)
    np.divide(dots, denom, out=out, where=denom > 0)
    return out


def cosine_topk(
    m: sp.csr_matrix, axis: str = "rows", shrinkage: float = 0.0, k: int = 100
) -> sp.csr_matrix:
    """
    Top-``k`` shrunk cosine similarities between the rows (``axis="rows"``)
    or columns (``axis="cols"``) of ``m``.

    Entry ``(i, j)`` of the result is ``<v_i, v_j> / (|v_i| |v_j| + shrinkage)``
    for the ``k`` largest such values with ``j != i``; zero similarities are
    not stored.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if shrinkage < 0:
        raise ValueError("shrinkage must be non-negative")
    if m.shape[0] == 0 or m.shape[1] == 0 or m.nnz == 0:
        raise ValueError("empty input")
    if axis == "cols":
        vecs = as_csr(m.T)
    elif axis == "rows":
        vecs = as_csr(m)
    else:
        raise ValueError(f"unknown axis {axis!r}")

    n = vecs.shape[0]
    norms = np.sqrt(np.asarray(vecs.multiply(vecs).sum(axis=1)).ravel())
    vt = as_csr(vecs.T)
    rows, cols, vals = [], [], []
    for start in range(0, n, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, n)
        dots = (vecs[start:stop] @ vt).toarray()
        block = shrunk_cosine(dots, norms[start:stop], norms, shrinkage)
        r, c, v = _topk_dense_rows(block, k, start)
        rows.append(r + start)
        cols.append(c)
        vals.append(v)

    out = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return as_csr(out)


def truncated_svd(
    m,
    rank: int,
    seed: int = 0,
    *,
    oversample: int = 10,
    power_iters: int = 4,
    tol: float = 1e-10,
    max_power_iters: int = 64,
    method: str = "auto",
) -> DenseFactorPair:
    """
    Randomized range-finder SVD.

    At least ``power_iters`` rounds of subspace iteration are run, then
    iteration continues until the leading ``rank`` Ritz values change by
    less than ``tol`` (relative) or ``max_power_iters`` is reached.  The
    result is deterministic for a fixed ``seed``.

    ``method="auto"`` switches to an exact dense LAPACK SVD when the matrix
    is small (``DENSE_SVD_CELLS``) or the sketch would cover half of the
    smaller dimension anyway; ``"randomized"`` and ``"dense"`` force a path.
    """
    n_rows, n_cols = m.shape
    if not 1 <= rank <= min(n_rows, n_cols):
        raise ValueError(f"rank {rank} out of range [1, {min(n_rows, n_cols)}]")
    a = as_csr(m) if sp.issparse(m) else np.asarray(m, dtype=np.float64)
    at = a.T.tocsr() if sp.issparse(a) else a.T

    if method not in ("auto", "randomized", "dense"):
        raise ValueError(f"unknown SVD method {method!r}")
    width = min(rank + oversample, n_rows, n_cols)
    small = n_rows * n_cols <= DENSE_SVD_CELLS or 2 * width >= min(n_rows, n_cols)
    if method == "dense" or (method == "auto" and small):
        dense = a.toarray() if sp.issparse(a) else a
        u, s, vt = np.linalg.svd(dense, full_matrices=False)
        return _signed(u[:, :rank], s[:rank], vt[:rank].T)

    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((n_cols, width))
    q, _ = np.linalg.qr(a @ omega)

    prev = None
    for it in range(max_power_iters):
        q, _ = np.linalg.qr(at @ q)
        q, _ = np.linalg.qr(a @ q)
        if it + 1 < power_iters:
            continue
        s = np.linalg.svd(np.asarray((at @ q).T), compute_uv=False)[:rank]
        if prev is not None:
            scale = np.maximum(np.abs(s), np.finfo(float).tiny)
            if np.max(np.abs(s - prev) / scale) < tol:
                break
        prev = s

    b = np.asarray((at @ q).T)
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    return _signed(q @ ub[:, :rank], s[:rank], vt[:rank].T)


def _signed(u, s, v) -> DenseFactorPair:
    "Fix signs so the largest-magnitude entry of each right vector is positive."
    rank = v.shape[1]
    flip = np.sign(v[np.argmax(np.abs(v), axis=0), np.arange(rank)])
    flip[flip == 0] = 1.0
    return DenseFactorPair(u * flip, v * flip, s.copy())


def spd_solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """
    Solve ``gram @ Z = rhs`` for symmetric positive-definite ``gram`` using
    a Cholesky factorization.
    """
    gram = np.asarray(gram, dtype=np.float64)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError("gram must be square")
    if not np.allclose(gram, gram.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(gram).max())):
        raise ValueError("gram must be symmetric")
    try:
        factor = sla.cho_factor(gram, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("matrix not positive definite") from None
    return sla.cho_solve(factor, np.asarray(rhs, dtype=np.float64))
