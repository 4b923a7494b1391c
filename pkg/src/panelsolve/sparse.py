"""Compressed sparse column matrices, MatrixMarket I/O and test-matrix generators.

Symmetric matrices are stored lower-triangle only (stype "symmetric-lower");
matvec and norms apply both triangles for them.
"""

from __future__ import annotations

import numpy as np

from .errors import MatrixMarketError

GENERAL = "general"
SYMMETRIC_LOWER = "symmetric-lower"


class SparseMatrix:
    """CSC matrix of order n with sorted row indices per column."""

    def __init__(self, n, colptr, rowidx, values, stype=GENERAL):
        self.n = int(n)
        self.colptr = np.asarray(colptr, dtype=np.int64)
        self.rowidx = np.asarray(rowidx, dtype=np.int64)
        self.values = np.asarray(values)
        self.stype = stype
        self._validate()

    def _validate(self):
        n = self.n
        if self.colptr.shape != (n + 1,):
            raise ValueError("colptr must have length n+1")
        if self.colptr[0] != 0 or self.colptr[-1] != len(self.rowidx):
            raise ValueError("colptr must start at 0 and end at nnz")
        if len(self.rowidx) != len(self.values):
            raise ValueError("rowidx and values length mismatch")
        if np.any(np.diff(self.colptr) < 0):
            raise ValueError("colptr must be non-decreasing")
        if not len(self.rowidx):
            return
        if self.rowidx.min() < 0 or self.rowidx.max() >= n:
            raise ValueError("row index out of range")
        cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.colptr))
        inner = cols[1:] == cols[:-1]
        if np.any(np.diff(self.rowidx)[inner] <= 0):
            bad = int(cols[1:][inner & (np.diff(self.rowidx) <= 0)][0])
            raise ValueError(f"row indices not strictly increasing in column {bad}")
        if self.stype == SYMMETRIC_LOWER and np.any(self.rowidx < cols):
            bad = int(cols[self.rowidx < cols][0])
            raise ValueError(f"entry above diagonal in symmetric-lower column {bad}")

    @property
    def nnz(self):
        return len(self.rowidx)

    def col_rows(self, j):
        return self.rowidx[self.colptr[j]:self.colptr[j + 1]]

    def col_values(self, j):
        return self.values[self.colptr[j]:self.colptr[j + 1]]

    def entry(self, i, j):
        """Value at (i, j), honouring symmetric storage (0.0 if not stored)."""
        if self.stype == SYMMETRIC_LOWER and i < j:
            i, j = j, i
        rows = self.col_rows(j)
        k = np.searchsorted(rows, i)
        if k < len(rows) and rows[k] == i:
            return self.values[self.colptr[j] + k]
        return 0.0

    def to_dense(self):
        a = np.zeros((self.n, self.n), dtype=self.values.dtype)
        for j in range(self.n):
            rows = self.col_rows(j)
            a[rows, j] = self.col_values(j)
        if self.stype == SYMMETRIC_LOWER:
            a = a + np.tril(a, -1).T
        return a


def from_coo(n, rows, cols, vals, stype=GENERAL, sum_duplicates=True):
    """Build a SparseMatrix from triplets, sorting and summing duplicates."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals)
    order = np.lexsort((rows, cols))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if len(rows):
        keep = np.ones(len(rows), dtype=bool)
        dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
        if dup.any():
            if not sum_duplicates:
                raise ValueError("duplicate entries")
            out_r, out_c, out_v = [], [], []
            i = 0
            while i < len(rows):
                k = i + 1
                v = vals[i]
                while k < len(rows) and rows[k] == rows[i] and cols[k] == cols[i]:
                    v = v + vals[k]
                    k += 1
                out_r.append(rows[i]); out_c.append(cols[i]); out_v.append(v)
                i = k
            rows = np.array(out_r, dtype=np.int64)
            cols = np.array(out_c, dtype=np.int64)
            vals = np.array(out_v, dtype=vals.dtype)
        else:
            rows, cols, vals = rows[keep], cols[keep], vals[keep]
    colptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(colptr, cols + 1, 1)
    colptr = np.cumsum(colptr)
    return SparseMatrix(n, colptr, rows, vals, stype)


def read_matrix_market(path):
    """Read a `matrix coordinate (real|integer|pattern|complex) (general|symmetric)` file.

    1-based indices become 0-based, duplicates are summed, symmetric files are
    stored lower, and pattern entries get value 1.0.
    """
    with open(path, "r") as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixMarketError("empty file", line=1)
    header = lines[0].strip().split()
    if (len(header) < 5 or header[0] != "%%MatrixMarket"
            or header[1].lower() != "matrix" or header[2].lower() != "coordinate"):
        raise MatrixMarketError("expected '%%MatrixMarket matrix coordinate ...' header", line=1)
    field = header[3].lower()
    symmetry = header[4].lower()
    if field not in ("real", "integer", "pattern", "complex"):
        raise MatrixMarketError(f"unsupported field '{field}'", line=1)
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry '{symmetry}'", line=1)

    lineno = 1
    idx = 1
    while idx < len(lines) and (lines[idx].startswith("%") or not lines[idx].strip()):
        idx += 1
    if idx >= len(lines):
        raise MatrixMarketError("missing size line", line=len(lines))
    lineno = idx + 1
    size = lines[idx].split()
    if len(size) != 3:
        raise MatrixMarketError("size line must be 'rows cols nnz'", line=lineno)
    try:
        nrows, ncols, nent = int(size[0]), int(size[1]), int(size[2])
    except ValueError:
        raise MatrixMarketError("non-integer size line", line=lineno) from None
    if nrows != ncols:
        raise MatrixMarketError("matrix must be square", line=lineno)

    dtype = np.complex128 if field == "complex" else np.float64
    rows = np.empty(nent, dtype=np.int64)
    cols = np.empty(nent, dtype=np.int64)
    vals = np.empty(nent, dtype=dtype)
    count = 0
    for k in range(idx + 1, len(lines)):
        text = lines[k].strip()
        if not text or text.startswith("%"):
            continue
        if count >= nent:
            raise MatrixMarketError(f"more than the declared {nent} entries", line=k + 1)
        parts = text.split()
        try:
            i = int(parts[0]) - 1
            j = int(parts[1]) - 1
            if field == "pattern":
                v = 1.0
            elif field == "complex":
                v = complex(float(parts[2]), float(parts[3]))
            else:
                v = float(parts[2])
        except (ValueError, IndexError):
            raise MatrixMarketError("malformed entry", line=k + 1) from None
        if not (0 <= i < nrows and 0 <= j < ncols):
            raise MatrixMarketError(f"index ({i + 1}, {j + 1}) out of range", line=k + 1)
        if symmetry == "symmetric" and i < j:
            raise MatrixMarketError("symmetric file stores an upper-triangle entry", line=k + 1)
        rows[count], cols[count], vals[count] = i, j, v
        count += 1
    if count != nent:
        raise MatrixMarketError(f"declared {nent} entries but found {count}", line=len(lines))
    stype = SYMMETRIC_LOWER if symmetry == "symmetric" else GENERAL
    return from_coo(nrows, rows, cols, vals, stype)


def write_matrix_market(A, path):
    """Write A in coordinate format (symmetric-lower maps to 'symmetric')."""
    symmetry = "symmetric" if A.stype == SYMMETRIC_LOWER else "general"
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {symmetry}\n")
        fh.write(f"{A.n} {A.n} {A.nnz}\n")
        for j in range(A.n):
            rows = A.col_rows(j)
            vals = A.col_values(j)
            for i, v in zip(rows, vals):
                fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def symmetrize_pattern(A):
    """Pattern of A + At as symmetric-lower.

    Stored values of A are kept at their (lower) slots; entries present only
    via the transpose get value 0.
    """
    if A.stype == SYMMETRIC_LOWER:
        return SparseMatrix(A.n, A.colptr.copy(), A.rowidx.copy(), A.values.copy(),
                            SYMMETRIC_LOWER)
    cols = np.repeat(np.arange(A.n, dtype=np.int64), np.diff(A.colptr))
    rows = A.rowidx
    # map every entry to the lower triangle; keep values only for stored lower entries
    lo_r = np.maximum(rows, cols)
    lo_c = np.minimum(rows, cols)
    keep_val = np.where(rows >= cols, A.values, np.zeros(1, dtype=A.values.dtype))
    order = np.lexsort((lo_r, lo_c))
    lo_r, lo_c, keep_val = lo_r[order], lo_c[order], keep_val[order]
    out_r, out_c, out_v = [], [], []
    i = 0
    while i < len(lo_r):
        k = i
        v = 0.0
        while k < len(lo_r) and lo_r[k] == lo_r[i] and lo_c[k] == lo_c[i]:
            v = v + keep_val[k]
            k += 1
        out_r.append(lo_r[i]); out_c.append(lo_c[i]); out_v.append(v)
        i = k
    return from_coo(A.n, out_r, out_c, np.asarray(out_v), SYMMETRIC_LOWER,
                    sum_duplicates=False)


def gen_laplacian(dims, sizes):
    """5-point (2D) / 7-point (3D) Dirichlet Laplacian: diag 2*dims, off-diag -1."""
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != dims:
        raise ValueError(f"expected {dims} grid extents")
    if any(s < 1 for s in sizes):
        raise ValueError("grid extents must be >= 1")
    n = int(np.prod(sizes))
    idx = np.arange(n, dtype=np.int64).reshape(sizes)
    rows = [np.arange(n, dtype=np.int64)]
    cols = [np.arange(n, dtype=np.int64)]
    vals = [np.full(n, 2.0 * dims)]
    for axis in range(dims):
        lo = np.moveaxis(idx, axis, 0)[:-1].ravel()
        hi = np.moveaxis(idx, axis, 0)[1:].ravel()
        r = np.maximum(lo, hi)
        c = np.minimum(lo, hi)
        rows.append(r)
        cols.append(c)
        vals.append(np.full(len(r), -1.0))
    return from_coo(n, np.concatenate(rows), np.concatenate(cols),
                    np.concatenate(vals), SYMMETRIC_LOWER)


def spd_shift_values(A):
    """Replace values with the SPD convention: off-diag -1, diag degree+1."""
    S = symmetrize_pattern(A)
    deg = np.zeros(S.n, dtype=np.int64)
    for j in range(S.n):
        rows = S.col_rows(j)
        off = rows[rows != j]
        deg[off] += 1
        deg[j] += len(off)
    vals = np.where(S.rowidx == np.repeat(np.arange(S.n), np.diff(S.colptr)),
                    0.0, -1.0)
    # ensure every diagonal slot exists
    diag_missing = [j for j in range(S.n)
                    if j not in S.col_rows(j)]
    if diag_missing:
        rows = np.concatenate([S.rowidx, np.array(diag_missing, dtype=np.int64)])
        cols = np.concatenate([np.repeat(np.arange(S.n), np.diff(S.colptr)),
                               np.array(diag_missing, dtype=np.int64)])
        vals = np.concatenate([vals, np.zeros(len(diag_missing))])
        S = from_coo(S.n, rows, cols, vals, SYMMETRIC_LOWER)
    else:
        S = SparseMatrix(S.n, S.colptr, S.rowidx, vals, SYMMETRIC_LOWER)
    out_vals = S.values.copy()
    cols = np.repeat(np.arange(S.n), np.diff(S.colptr))
    on_diag = S.rowidx == cols
    out_vals[on_diag] = deg[S.rowidx[on_diag]] + 1.0
    out_vals[~on_diag] = -1.0
    return SparseMatrix(S.n, S.colptr, S.rowidx, out_vals, SYMMETRIC_LOWER)


def spmv(A, x):
    """A @ x with both triangles applied for symmetric-lower storage."""
    x = np.asarray(x)
    if x.shape != (A.n,):
        raise ValueError(f"vector length {x.shape} does not match order {A.n}")
    y = np.zeros(A.n, dtype=np.result_type(A.values.dtype, x.dtype))
    cols = np.repeat(np.arange(A.n, dtype=np.int64), np.diff(A.colptr))
    np.add.at(y, A.rowidx, A.values * x[cols])
    if A.stype == SYMMETRIC_LOWER:
        off = A.rowidx != cols
        np.add.at(y, cols[off], A.values[off] * x[A.rowidx[off]])
    return y


def inf_norm(A):
    """Max absolute row sum, both triangles for symmetric storage."""
    s = np.zeros(A.n)
    cols = np.repeat(np.arange(A.n, dtype=np.int64), np.diff(A.colptr))
    np.add.at(s, A.rowidx, np.abs(A.values))
    if A.stype == SYMMETRIC_LOWER:
        off = A.rowidx != cols
        np.add.at(s, cols[off], np.abs(A.values[off]))
    return s.max() if A.n else 0.0


def residual_norm(A, x, b):
    """Scaled residual ||b - Ax||_inf / (||A||_inf ||x||_inf + ||b||_inf)."""
    x = np.asarray(x)
    b = np.asarray(b)
    if x.shape != (A.n,) or b.shape != (A.n,):
        raise ValueError("vector length mismatch")
    r = b - spmv(A, x)
    denom = inf_norm(A) * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0)
    if denom == 0.0:
        return 0.0
    return float(np.abs(r).max(initial=0.0) / denom)


def permute_symmetric(A, perm):
    """Symmetric permutation of a symmetric-lower matrix: B[p[i], p[j]] = A[i, j]."""
    if A.stype != SYMMETRIC_LOWER:
        raise ValueError("permute_symmetric requires symmetric-lower storage")
    perm = np.asarray(perm, dtype=np.int64)
    cols = np.repeat(np.arange(A.n, dtype=np.int64), np.diff(A.colptr))
    pr = perm[A.rowidx]
    pc = perm[cols]
    lo_r = np.maximum(pr, pc)
    lo_c = np.minimum(pr, pc)
    return from_coo(A.n, lo_r, lo_c, A.values.copy(), SYMMETRIC_LOWER,
                    sum_duplicates=False)


class AdjacencyGraph:
    """Symmetric adjacency in CSR form, no self-loops."""

    def __init__(self, n, indptr, indices):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)

    def neighbors(self, v):
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @property
    def nedges(self):
        return len(self.indices) // 2


def adjacency_from_pattern(A):
    """Undirected graph of the symmetric pattern of A (diagonal dropped)."""
    S = A if A.stype == SYMMETRIC_LOWER else symmetrize_pattern(A)
    cols = np.repeat(np.arange(S.n, dtype=np.int64), np.diff(S.colptr))
    off = S.rowidx != cols
    u = S.rowidx[off]
    v = cols[off]
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(S.n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return AdjacencyGraph(S.n, np.cumsum(indptr), dst)
