"""Dense panel kernels: diagonal factorization, panel solve, scatter updates.

All kernels walk columns in a fixed outer loop with vectorized inner work so
results are reproducible run to run, and the two update variants accumulate
every element through the same per-column product (bitwise comparable).
Kernels write only the lower triangle of diagonal blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (DivergentSolveError, NotPositiveDefiniteError,
                     SingularPivotError, StructuralError)

LLT = "llt"
LDLT = "ldlt"
BUFFERED = "buffered"
DIRECT = "direct"


@dataclass
class KernelConfig:
    form: str = LLT
    variant: str = BUFFERED
    pivot_threshold: float = 0.0


def default_pivot_threshold(A):
    """1e-13 times the largest diagonal magnitude of A."""
    if A.n == 0 or A.nnz == 0:
        return 0.0
    cols = np.repeat(np.arange(A.n, dtype=np.int64), np.diff(A.colptr))
    on_diag = A.rowidx == cols
    if not on_diag.any():
        return 0.0
    return 1e-13 * float(np.abs(A.values[on_diag]).max())


# ---------------------------------------------------------------------------
# diagonal block factorizations (left-looking, lower triangle only)

def potrf_block(S, pivot_threshold=0.0, col_offset=0):
    """In-place Cholesky of the lower triangle of square S; L L^T = S."""
    w = S.shape[0]
    for j in range(w):
        s = S[j:, j] - S[j:, :j] @ S[j, :j]
        piv = s[0]
        if piv <= pivot_threshold:
            raise NotPositiveDefiniteError(col_offset + j, float(piv))
        r = np.sqrt(piv)
        S[j, j] = r
        S[j + 1:, j] = s[1:] / r


def ldlt_block(S, pivot_threshold=0.0, col_offset=0):
    """In-place LDLt of square S: unit-lower L strictly below, d on the diagonal."""
    w = S.shape[0]
    d = np.empty(w)
    for j in range(w):
        s = S[j:, j] - S[j:, :j] @ (d[:j] * S[j, :j])
        piv = s[0]
        if abs(piv) <= pivot_threshold:
            raise SingularPivotError(col_offset + j, float(piv))
        d[j] = piv
        S[j, j] = piv
        S[j + 1:, j] = s[1:] / piv


# ---------------------------------------------------------------------------
# panel triangular solves (all off-diagonal rows of one panel at once)

def trsm_panel(L, B):
    """B <- B L^-T for lower-triangular L (grouped solve of panel rows)."""
    w = L.shape[0]
    for j in range(w):
        piv = L[j, j]
        if piv == 0.0:
            raise DivergentSolveError(f"zero diagonal at column {j}")
        B[:, j] = (B[:, j] - B[:, :j] @ L[j, :j]) / piv


def ldlt_trsm(L, B):
    """B <- B (D L^T)^-1 with unit-lower L and d stored on L's diagonal."""
    w = L.shape[0]
    d = np.diagonal(L).copy()
    if np.any(d == 0.0):
        raise DivergentSolveError("zero diagonal in LDLt panel solve")
    for j in range(w):
        B[:, j] = (B[:, j] - B[:, :j] @ (d[:j] * L[j, :j])) / d[j]


# ---------------------------------------------------------------------------
# scatter updates: one facing block of a factored source panel into its
# destination panel. Both variants compute destination columns with the same
# per-column product; they differ only in staging.

def update_buffered(a_src, block, dst, dst_loc, dst_col0, buf, d_src=None):
    """Accumulate the block's outer product through a work buffer, then scatter.

    a_src: factored source panel storage; block: the facing block descriptor;
    dst: destination panel storage; dst_loc: destination-local rows of the
    source rows at and below the block; dst_col0: destination-local column of
    the block's first row; buf: per-worker scratch, at least (m, h).
    """
    h = block.height
    r0 = block.loc
    m = a_src.shape[0] - r0
    wb = buf[:m, :h]
    for b in range(h):
        row = a_src[r0 + b, :]
        if d_src is not None:
            row = d_src * row
        wb[b:, b] = a_src[r0 + b:, :] @ row
    # dispatch: the sub-diagonal rectangle in one scatter, the triangle by column
    if h == 1:
        dst[dst_loc, dst_col0] -= wb[:, 0]
        return
    if m > h:
        dst[dst_loc[h:], dst_col0:dst_col0 + h] -= wb[h:, :]
    for b in range(h):
        dst[dst_loc[b:h], dst_col0 + b] -= wb[b:h, b]


def update_scatter_direct(a_src, block, dst, dst_loc, dst_col0, d_src=None):
    """Accumulate the block's outer product straight into the destination."""
    h = block.height
    r0 = block.loc
    for b in range(h):
        row = a_src[r0 + b, :]
        if d_src is not None:
            row = d_src * row
        dst[dst_loc[b:], dst_col0 + b] -= a_src[r0 + b:, :] @ row


# ---------------------------------------------------------------------------
# flop accounting (cost model used for scheduling and reporting)

def flops_potrf(k):
    return k * (k + 1) * (2 * k + 1) // 6


def flops_trsm(m, k):
    return m * k * k


def flops_gemm(m, n, k):
    return 2 * m * n * k


def factor_task_flops(panel, form=LLT):
    w = panel.width
    m = len(panel.rows)
    f = flops_potrf(w) + flops_trsm(m, w)
    if form == LDLT:
        f += w * w + m * w
    return f


def update_task_flops(panel, blocks, form=LLT):
    w = panel.width
    total = 0
    for blk in blocks:
        m = panel.nrows - blk.loc
        total += flops_gemm(m, blk.height, w)
        if form == LDLT:
            total += m * w
    return total


def total_flops(symbol, form=LLT):
    total = 0
    for panel in symbol.panels:
        total += factor_task_flops(panel, form)
        total += update_task_flops(panel, panel.blocks, form)
    return total


# ---------------------------------------------------------------------------
# task execution bound to a symbol/store pair

class FactorKernels:
    """Runs factor/update tasks against a PanelStore.

    Writes to a destination panel must be serialized by the caller; a work
    buffer from new_buffer() must not be shared between concurrent tasks.
    """

    def __init__(self, symbol, store, config):
        self.symbol = symbol
        self.store = store
        self.config = config
        # blocks of each panel grouped by facing panel, plus destination-local
        # row maps resolved once
        self.couples = []
        for panel in symbol.panels:
            groups = {}
            for blk in panel.blocks:
                groups.setdefault(blk.facing, []).append(blk)
            self.couples.append(groups)

    def new_buffer(self):
        return np.zeros((self.symbol.max_nrows(), self.symbol.max_width()), order="F")

    def run_factor(self, p):
        """Factor one panel: fused column sweep over the diagonal block and the
        stacked off-diagonal rows (same arithmetic as potrf/ldlt + panel solve)."""
        panel = self.symbol.panels[p]
        a = self.store.data[p]
        w = panel.width
        thr = self.config.pivot_threshold
        if self.config.form == LDLT:
            if w == 1:
                piv = float(a[0, 0])
                if abs(piv) <= thr:
                    raise SingularPivotError(panel.fc, piv)
                a[1:, 0] /= piv
                return
            d = np.empty(w)
            for j in range(w):
                s = a[j:, j] if j == 0 else a[j:, j] - a[j:, :j] @ (d[:j] * a[j, :j])
                piv = s[0]
                if abs(piv) <= thr:
                    raise SingularPivotError(panel.fc + j, float(piv))
                d[j] = piv
                a[j, j] = piv
                a[j + 1:, j] = s[1:] / piv
        else:
            if w == 1:
                piv = float(a[0, 0])
                if piv <= thr:
                    raise NotPositiveDefiniteError(panel.fc, piv)
                r = math.sqrt(piv)
                a[0, 0] = r
                a[1:, 0] /= r
                return
            for j in range(w):
                s = a[j:, j] if j == 0 else a[j:, j] - a[j:, :j] @ a[j, :j]
                piv = s[0]
                if piv <= thr:
                    raise NotPositiveDefiniteError(panel.fc + j, float(piv))
                r = np.sqrt(piv)
                a[j, j] = r
                a[j + 1:, j] = s[1:] / r

    def run_update(self, p, q, buf=None):
        panel = self.symbol.panels[p]
        qpanel = self.symbol.panels[q]
        a = self.store.data[p]
        dst = self.store.data[q]
        rm = self.store.rowmaps[p]
        qrm = self.store.rowmaps[q]
        d_src = None
        if self.config.form == LDLT:
            d_src = np.diagonal(a[:panel.width, :panel.width]).copy()
        blocks = self.couples[p].get(q)
        if not blocks:
            raise StructuralError(f"no blocks of panel {p} face panel {q}")
        direct = self.config.variant == DIRECT
        if buf is None and not direct:
            buf = self.new_buffer()
        qfc = qpanel.fc
        # one destination-row lookup covers every block (their tails nest)
        loc0 = blocks[0].loc
        full_loc = qrm.searchsorted(rm[loc0:])
        if panel.width == 1:
            # no accumulation when k = 1: one batched product per block is
            # bitwise-identical to the per-column kernels
            self._run_update_rank1(a[:, 0], blocks, dst, full_loc, loc0, qfc,
                                   d_src, buf, direct)
            return
        for blk in blocks:
            dst_loc = full_loc[blk.loc - loc0:]
            dst_col0 = blk.fr - qfc
            if direct:
                update_scatter_direct(a, blk, dst, dst_loc, dst_col0, d_src)
            else:
                update_buffered(a, blk, dst, dst_loc, dst_col0, buf, d_src)

    def _run_update_rank1(self, col, blocks, dst, full_loc, loc0, qfc,
                          d_src, buf, direct):
        s = None if d_src is None else float(d_src[0])
        for blk in blocks:
            r0, h = blk.loc, blk.height
            dst_loc = full_loc[r0 - loc0:]
            c0 = blk.fr - qfc
            tail = col[r0:]
            m = len(tail)
            if h == 1:
                h0 = float(tail[0]) if s is None else float(tail[0]) * s
                if direct:
                    dst[dst_loc, c0] -= tail * h0
                else:
                    buf[:m, 0] = tail * h0
                    dst[dst_loc, c0] -= buf[:m, 0]
                continue
            head = tail[:h] * s if s is not None else tail[:h]
            if direct:
                P = tail[:, None] * head[None, :]
            else:
                P = buf[:m, :h]
                np.multiply(tail[:, None], head[None, :], out=P)
            if m > h:
                dst[dst_loc[h:], c0:c0 + h] -= P[h:, :]
            for b in range(h):
                dst[dst_loc[b:h], c0 + b] -= P[b:h, b]

    def run(self, task, buf=None):
        if task.kind == "factor":
            self.run_factor(task.p)
        else:
            self.run_update(task.p, task.q, buf)


def factorize_sequential(symbol, store, config):
    """Reference right-looking factorization in ascending panel order."""
    kernels = FactorKernels(symbol, store, config)
    buf = kernels.new_buffer()
    for p in range(symbol.npanels):
        kernels.run_factor(p)
        for q in sorted(kernels.couples[p]):
            kernels.run_update(p, q, buf)
    return kernels


# ---------------------------------------------------------------------------
# triangular solves over the factored store (verification path)

def supernodal_solve(symbol, store, b, form=LLT, perm=None):
    """Solve A x = b from the factored panels, applying the permutation."""
    n = symbol.n
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (n,):
        raise ValueError("right-hand side length mismatch")
    if perm is None:
        perm = np.arange(n, dtype=np.int64)
    w = np.empty(n)
    w[perm] = b

    for p, panel in enumerate(symbol.panels):
        a = store.data[p]
        wd = panel.width
        y = w[panel.fc:panel.lc]
        if wd == 1:
            if form != LDLT:
                y[0] /= a[0, 0]
        elif form == LDLT:
            for j in range(wd - 1):
                y[j + 1:] -= a[j + 1:wd, j] * y[j]
        else:
            for j in range(wd):
                y[j] /= a[j, j]
                y[j + 1:] -= a[j + 1:wd, j] * y[j]
        if len(panel.rows):
            w[panel.rows] -= a[wd:, :] @ y
        if form == LDLT:
            d = np.diagonal(a[:wd, :wd])
            if np.any(d == 0.0):
                raise DivergentSolveError("zero LDLt diagonal in solve")
            y /= d

    for p in range(symbol.npanels - 1, -1, -1):
        panel = symbol.panels[p]
        a = store.data[p]
        wd = panel.width
        t = w[panel.fc:panel.lc]
        if len(panel.rows):
            t -= a[wd:, :].T @ w[panel.rows]
        if wd == 1:
            if form != LDLT:
                t[0] /= a[0, 0]
        elif form == LDLT:
            for j in range(wd - 2, -1, -1):
                t[j] -= a[j + 1:wd, j] @ t[j + 1:wd]
        else:
            for j in range(wd - 1, -1, -1):
                t[j] = (t[j] - a[j + 1:wd, j] @ t[j + 1:wd]) / a[j, j]

    return w[perm]
