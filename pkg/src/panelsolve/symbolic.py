"""Symbolic factorization, supernode detection, amalgamation, panel splitting.

A panel (supernode) is a contiguous column range whose columns share one
off-diagonal row structure. Panels carry blocks: maximal contiguous row runs
clipped at facing-panel boundaries, so each block faces exactly one panel.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError
from .ordering import NONE


class ColumnStructure:
    """Per-column sorted row indices of L (diagonal included, fill included)."""

    def __init__(self, structs):
        self.structs = structs

    def __getitem__(self, j):
        return self.structs[j]

    def __len__(self):
        return len(self.structs)

    @property
    def nnz(self):
        return int(sum(len(s) for s in self.structs))


def symbolic_factorize(pattern, tree):
    """Column structures of L: struct(j) = pattern(j) U union of children minus child.

    Returns (ColumnStructure, nnz_L). Requires parent[v] > v (postordered input).
    """
    n = pattern.n
    kids = tree.children()
    structs = [None] * n
    diag = np.empty(1, dtype=np.int64)
    for j in range(n):
        cols = pattern.col_rows(j)
        diag[0] = j
        pieces = [cols[cols >= j], diag]
        for c in kids[j]:
            pieces.append(structs[c][structs[c] > c])
        structs[j] = np.unique(np.concatenate(pieces))
    cs = ColumnStructure(structs)
    return cs, cs.nnz


@dataclass
class PanelSet:
    """A partition of [0, n) into ordered panels with shared row structures.

    starts has len(npanels)+1; panel p covers columns [starts[p], starts[p+1]).
    rows[p] holds the sorted off-diagonal row indices shared by the panel.
    """

    starts: np.ndarray
    rows: list

    @property
    def npanels(self):
        return len(self.starts) - 1

    def width(self, p):
        return int(self.starts[p + 1] - self.starts[p])

    def entries(self, p):
        w = self.width(p)
        return w * (w + 1) // 2 + w * len(self.rows[p])

    def total_entries(self):
        return sum(self.entries(p) for p in range(self.npanels))

    def col2panel(self):
        out = np.empty(int(self.starts[-1]), dtype=np.int64)
        for p in range(self.npanels):
            out[self.starts[p]:self.starts[p + 1]] = p
        return out


def find_supernodes(cs, tree):
    """Maximal panels: j and j+1 merge iff parent(j) = j+1 and struct(j)\\{j} = struct(j+1)."""
    n = len(cs)
    starts = [0]
    for j in range(n - 1):
        mergeable = (tree.parent[j] == j + 1
                     and len(cs[j]) == len(cs[j + 1]) + 1)
        if not mergeable:
            starts.append(j + 1)
    starts.append(n)
    starts = np.array(starts, dtype=np.int64)
    rows = []
    for p in range(len(starts) - 1):
        fc, lc = int(starts[p]), int(starts[p + 1])
        struct = cs[fc]
        rows.append(struct[struct >= lc])
    return PanelSet(starts, rows)


def _panel_parent(panels, p):
    """Index of the panel owning this panel's first off-diagonal row (or NONE)."""
    if not len(panels.rows[p]):
        return NONE
    first = int(panels.rows[p][0])
    return int(np.searchsorted(panels.starts, first, side="right") - 1)


def _panel_depths(panels):
    """Distance from each panel to its panel-tree root."""
    np_ = panels.npanels
    parent = np.array([_panel_parent(panels, p) for p in range(np_)], dtype=np.int64)
    depth = np.zeros(np_, dtype=np.int64)
    for p in range(np_ - 1, -1, -1):
        if parent[p] != NONE:
            depth[p] = depth[parent[p]] + 1
    return depth, parent


def amalgamate(panels, nnz_original, max_fill_ratio=0.12):
    """Greedy bottom-up parent-child panel merging under a global fill budget.

    A child (the panel immediately preceding its parent, whose first
    off-diagonal row lands in the parent's columns) merges when cumulative
    added structural entries stay within max_fill_ratio * nnz_original.
    Candidates are taken deepest-level first, then smallest added fill.
    """
    if max_fill_ratio < 0:
        raise ValueError("max_fill_ratio must be >= 0")
    budget = max_fill_ratio * nnz_original
    np_ = panels.npanels
    starts = panels.starts.copy()
    rows = [r.copy() for r in panels.rows]
    depth, parent = _panel_depths(panels)

    alive = [True] * np_
    succ = list(range(1, np_)) + [NONE]   # next alive panel
    pred = [NONE] + list(range(np_ - 1))  # previous alive panel

    def added_fill(c, p):
        wc = int(starts[c + 1] - starts[c])
        wp = int(starts[p + 1] - starts[p])
        return wc * wp + wc * (len(rows[p]) - len(rows[c]))

    def mergeable(c, p):
        # child must end where the parent starts and chain into it
        if c == NONE or p == NONE or not alive[c] or not alive[p]:
            return False
        if starts[c + 1] != starts[p]:
            return False
        return len(rows[c]) > 0 and int(rows[c][0]) >= int(starts[p]) \
            and int(rows[c][0]) < int(starts[p + 1])

    heap = []
    for c in range(np_):
        p = parent[c]
        if p != NONE and mergeable(c, p):
            heapq.heappush(heap, (-int(depth[c]), added_fill(c, p), c, p))

    added_total = 0
    while heap:
        negd, fill, c, p = heapq.heappop(heap)
        if not mergeable(c, p) or fill != added_fill(c, p):
            continue  # stale entry
        if added_total + fill > budget + 1e-9:
            continue
        # merge c into p: p absorbs c's columns; structures union to p's rows
        in_parent = (rows[c] >= starts[p]) & (rows[c] < starts[p + 1])
        extra = np.setdiff1d(rows[c][~in_parent], rows[p])
        if len(extra):
            raise StructuralError("child rows escape parent structure")
        added_total += fill
        starts[p] = starts[c]
        alive[c] = False
        if pred[c] != NONE:
            succ[pred[c]] = p
        pred[p] = pred[c]
        # refreshed candidates: the panel now preceding p, and p into its own parent
        q = pred[p]
        if q != NONE and mergeable(q, p):
            heapq.heappush(heap, (-int(depth[q]), added_fill(q, p), q, p))
        r = succ[p]
        if r != NONE and mergeable(p, r):
            heapq.heappush(heap, (-int(depth[p]), added_fill(p, r), p, r))

    keep = [p for p in range(np_) if alive[p]]
    new_starts = np.array([starts[p] for p in keep] + [int(starts[-1])], dtype=np.int64)
    new_rows = [rows[p] for p in keep]
    out = PanelSet(new_starts, new_rows)
    actual = out.total_entries() - panels.total_entries()
    if actual > budget + 1e-9:
        raise StructuralError("amalgamation exceeded its fill budget")
    return out


def split_panels(panels, max_width=128, top_levels=3):
    """Cut wide panels near the panel-tree root into chained sub-panels.

    Panels at depth < top_levels with width > max_width become
    ceil(width/max_width) sub-panels of width max_width (remainder last);
    each earlier sub-panel gains the later sub-panel columns as rows.
    """
    if max_width < 1:
        raise ValueError("max_width must be >= 1")
    depth, _ = _panel_depths(panels)
    new_starts = [0]
    new_rows = []
    for p in range(panels.npanels):
        fc, lc = int(panels.starts[p]), int(panels.starts[p + 1])
        w = lc - fc
        if depth[p] >= top_levels or w <= max_width:
            new_starts.append(lc)
            new_rows.append(panels.rows[p])
            continue
        cuts = list(range(fc, lc, max_width)) + [lc]
        for k in range(len(cuts) - 1):
            new_starts.append(cuts[k + 1])
            tail_cols = np.arange(cuts[k + 1], lc, dtype=np.int64)
            new_rows.append(np.concatenate([tail_cols, panels.rows[p]]))
    return PanelSet(np.array(new_starts, dtype=np.int64), new_rows)


@dataclass
class Block:
    """Contiguous off-diagonal row run [fr, lr) of a panel, facing panel `facing`."""

    fr: int
    lr: int
    facing: int
    loc: int  # local storage row of fr within the owning panel

    @property
    def height(self):
        return self.lr - self.fr


@dataclass
class Panel:
    id: int
    fc: int
    lc: int
    rows: np.ndarray          # off-diagonal global rows, ascending
    blocks: list = field(default_factory=list)

    @property
    def width(self):
        return self.lc - self.fc

    @property
    def nrows(self):
        """Total storage rows: panel columns plus off-diagonal rows."""
        return self.width + len(self.rows)

    def rowmap(self):
        """Global row of each local storage row (ascending)."""
        return np.concatenate([np.arange(self.fc, self.lc, dtype=np.int64), self.rows])


@dataclass
class SymbolStructure:
    n: int
    panels: list
    col2panel: np.ndarray
    nnz_l: int

    @property
    def npanels(self):
        return len(self.panels)

    def block_count(self):
        return sum(len(p.blocks) for p in self.panels)

    def max_width(self):
        return max((p.width for p in self.panels), default=0)

    def max_nrows(self):
        return max((p.nrows for p in self.panels), default=0)


def build_symbol(panels):
    """Assemble the block symbolic structure from a panel partition."""
    n = int(panels.starts[-1])
    col2panel = panels.col2panel()
    out = []
    for p in range(panels.npanels):
        fc, lc = int(panels.starts[p]), int(panels.starts[p + 1])
        rows = panels.rows[p]
        panel = Panel(p, fc, lc, rows)
        loc = lc - fc
        i = 0
        while i < len(rows):
            facing = int(col2panel[rows[i]])
            f_lc = int(panels.starts[facing + 1])
            k = i
            while (k + 1 < len(rows) and rows[k + 1] == rows[k] + 1
                   and rows[k + 1] < f_lc):
                k += 1
            blk = Block(int(rows[i]), int(rows[k]) + 1, facing, loc + i)
            if facing <= p:
                raise StructuralError("block faces a non-later panel")
            panel.blocks.append(blk)
            i = k + 1
        out.append(panel)
    nnz_l = panels.total_entries()
    sym = SymbolStructure(n, out, col2panel, nnz_l)
    check = sum(p.width * (p.width + 1) // 2 + p.width * len(p.rows) for p in out)
    if check != nnz_l:
        raise StructuralError("panel entry accounting mismatch")
    return sym


class PanelStore:
    """Dense column-major storage per panel: (width + |rows|) x width."""

    def __init__(self, symbol):
        self.symbol = symbol
        self.data = [np.zeros((p.nrows, p.width), order="F") for p in symbol.panels]
        self.rowmaps = [p.rowmap() for p in symbol.panels]

    def panel(self, p):
        return self.data[p]

    def local_rows(self, p, global_rows):
        """Local storage rows for ascending global rows (must all exist)."""
        rm = self.rowmaps[p]
        loc = np.searchsorted(rm, global_rows)
        if np.any(loc >= len(rm)) or np.any(rm[loc] != global_rows):
            raise StructuralError(f"rows missing from panel {p} structure")
        return loc


def allocate_panels(symbol, A):
    """Zero-initialized PanelStore with A's lower entries scattered in."""
    store = PanelStore(symbol)
    for p, panel in enumerate(symbol.panels):
        lo, hi = int(A.colptr[panel.fc]), int(A.colptr[panel.lc])
        rows = A.rowidx[lo:hi]
        cols = np.repeat(np.arange(panel.fc, panel.lc, dtype=np.int64),
                         np.diff(A.colptr[panel.fc:panel.lc + 1]))
        sel = rows >= cols
        rows, cols = rows[sel], cols[sel]
        loc = store.local_rows(p, rows)
        store.data[p][loc, cols - panel.fc] = A.values[lo:hi][sel]
    return store


def gather_factor(symbol, store):
    """Dense lower factor from the store; returns (L, d) with d the LDLt diagonal
    (d is the stored block diagonal; for LLt factors ignore it)."""
    n = symbol.n
    L = np.zeros((n, n))
    d = np.zeros(n)
    for p, panel in enumerate(symbol.panels):
        a = store.data[p]
        rm = store.rowmaps[p]
        w = panel.width
        for c in range(w):
            L[rm[c:], panel.fc + c] = a[c:, c]
            d[panel.fc + c] = a[c, c]
    return L, d
