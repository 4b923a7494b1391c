import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from panelsolve.sparse import SYMMETRIC_LOWER, SparseMatrix, from_coo


def dense_to_lower_sparse(Ad):
    """Dense symmetric matrix -> symmetric-lower SparseMatrix."""
    n = Ad.shape[0]
    r, c = np.nonzero(np.tril(Ad))
    return from_coo(n, r, c, Ad[r, c], SYMMETRIC_LOWER)


def rand_spd(rng, n, density):
    """Random sparse SPD matrix (diagonally dominant) and its dense copy."""
    mask = np.tril(rng.random((n, n)) < density, -1)
    vals = rng.uniform(-1.0, 1.0, (n, n)) * mask
    Ad = vals + vals.T
    Ad += np.diag(np.abs(Ad).sum(axis=1) + rng.uniform(0.5, 1.5, n))
    return dense_to_lower_sparse(Ad), Ad


def rand_sym_pattern(rng, n, density):
    """Random symmetric-lower pattern matrix with nonzero diagonal."""
    mask = np.tril(rng.random((n, n)) < density, -1)
    Ad = mask * 1.0
    Ad = Ad + Ad.T + np.eye(n) * (n + 1.0)
    return dense_to_lower_sparse(Ad), Ad


def dense_fill(Ad_pattern):
    """Boolean elimination fill oracle: returns the filled lower pattern."""
    n = Ad_pattern.shape[0]
    F = (np.tril(Ad_pattern) != 0) | np.eye(n, dtype=bool)
    F = F | np.tril(Ad_pattern.T != 0)
    for k in range(n):
        rows = np.nonzero(F[k + 1:, k])[0] + k + 1
        if len(rows):
            F[np.ix_(rows, rows)] |= True
    return np.tril(F) | np.eye(n, dtype=bool)


def etree_from_fill(F):
    """parent[v] = first off-diagonal row of the filled column v (or -1)."""
    n = F.shape[0]
    parent = np.full(n, -1, dtype=np.int64)
    for v in range(n):
        rows = np.nonzero(F[v + 1:, v])[0]
        if len(rows):
            parent[v] = v + 1 + rows[0]
    return parent


@pytest.fixture
def rng():
    return np.random.default_rng(20240211)
