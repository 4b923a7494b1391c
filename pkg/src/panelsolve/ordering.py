"""Fill-reducing ordering: nested dissection, elimination tree, postordering.

The dissection is deterministic: BFS level-set bisection from a
pseudo-peripheral vertex, one boundary-minimization refinement pass,
minimum-degree ordering inside leaves, ties broken by lowest vertex index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NONE = -1  # parent sentinel for roots


@dataclass
class Permutation:
    """perm maps old index -> new index; iperm is its inverse."""

    perm: np.ndarray
    iperm: np.ndarray

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        self.iperm = np.asarray(self.iperm, dtype=np.int64)
        n = len(self.perm)
        if not np.array_equal(self.perm[self.iperm], np.arange(n)):
            raise ValueError("perm and iperm are not inverses")

    @classmethod
    def identity(cls, n):
        e = np.arange(n, dtype=np.int64)
        return cls(e.copy(), e.copy())

    @classmethod
    def from_perm(cls, perm):
        perm = np.asarray(perm, dtype=np.int64)
        iperm = np.empty_like(perm)
        iperm[perm] = np.arange(len(perm), dtype=np.int64)
        return cls(perm, iperm)

    def compose(self, first):
        """Permutation applying `first` then self (self o first)."""
        return Permutation.from_perm(self.perm[first.perm])


@dataclass
class EliminationTree:
    parent: np.ndarray  # parent[v] > v, or NONE for roots

    def __post_init__(self):
        self.parent = np.asarray(self.parent, dtype=np.int64)

    @property
    def n(self):
        return len(self.parent)

    def children(self):
        """children[v] sorted ascending."""
        kids = [[] for _ in range(self.n)]
        for v in range(self.n):
            p = self.parent[v]
            if p != NONE:
                kids[p].append(v)
        return kids

    def roots(self):
        return [v for v in range(self.n) if self.parent[v] == NONE]


@dataclass
class SepNode:
    """Separator-tree node: a vertex set (original ids) plus children."""

    vertices: np.ndarray
    children: list = field(default_factory=list)

    def is_leaf(self):
        return not self.children


@dataclass
class SeparatorTree:
    root: SepNode
    n: int

    def all_nodes(self):
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(node.children)
        return out


def _components(vertices, adj_of):
    """Connected components of the induced subgraph, ordered by min vertex."""
    vset = set(int(v) for v in vertices)
    seen = set()
    comps = []
    for start in sorted(vset):
        if start in seen:
            continue
        comp = []
        stack = [start]
        seen.add(start)
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in adj_of(v):
                if w in vset and w not in seen:
                    seen.add(w)
                    stack.append(w)
        comps.append(np.array(sorted(comp), dtype=np.int64))
    return comps


def _bfs_levels(start, vset, adj_of):
    """BFS level sets within vset starting from `start`."""
    levels = [[start]]
    seen = {start}
    while True:
        nxt = []
        for v in levels[-1]:
            for w in adj_of(v):
                if w in vset and w not in seen:
                    seen.add(w)
                    nxt.append(w)
        if not nxt:
            break
        levels.append(sorted(nxt))
    return levels


def _pseudo_peripheral(vertices, adj_of):
    """A vertex of (near) maximal eccentricity in the induced subgraph."""
    vset = set(int(v) for v in vertices)
    v = min(vset)
    last_depth = -1
    for _ in range(4):
        levels = _bfs_levels(v, vset, adj_of)
        if len(levels) - 1 <= last_depth:
            break
        last_depth = len(levels) - 1
        v = min(levels[-1])
    return v, _bfs_levels(v, vset, adj_of)


def _min_degree_order(vertices, adj_of):
    """Naive minimum-degree elimination order of the induced subgraph."""
    verts = [int(v) for v in vertices]
    vset = set(verts)
    adj = {v: set(w for w in adj_of(v) if w in vset) for v in verts}
    order = []
    alive = set(verts)
    while alive:
        v = min(alive, key=lambda u: (len(adj[u]), u))
        order.append(v)
        alive.discard(v)
        nbrs = adj.pop(v)
        for u in nbrs:
            adj[u].discard(v)
        # quotient-graph fill: clique the neighbors
        for u in nbrs:
            adj[u].update(w for w in nbrs if w != u)
    return np.array(order, dtype=np.int64)


def _split_once(vertices, adj_of):
    """One dissection step: returns (side_a, side_b, separator) or None for a leaf."""
    vset = set(int(v) for v in vertices)
    _, levels = _pseudo_peripheral(vertices, adj_of)
    if len(levels) < 2:
        return None
    sizes = np.array([len(l) for l in levels])
    total = sizes.sum()
    best_l, best_gap = 0, None
    for l in range(len(levels)):
        left = sizes[:l].sum()
        right = total - left - sizes[l]
        gap = abs(int(left) - int(right))
        if best_gap is None or gap < best_gap:
            best_gap, best_l = gap, l
    sep = set(levels[best_l])
    side_a = set(v for l in levels[:best_l] for v in l)
    side_b = set(v for l in levels[best_l + 1:] for v in l)
    if not side_a or not side_b:
        # lopsided level pick (e.g. dense graphs): keep the raw level cut so
        # the recursion still shrinks by the separator
        return (np.array(sorted(side_a), dtype=np.int64),
                np.array(sorted(side_b), dtype=np.int64),
                np.array(sorted(sep), dtype=np.int64))
    # one refinement pass: drop separator vertices with no neighbors across
    for s in sorted(sep):
        nb = [w for w in adj_of(s) if w in vset]
        in_a = any(w in side_a for w in nb)
        in_b = any(w in side_b for w in nb)
        if in_a and not in_b:
            sep.discard(s)
            side_a.add(s)
        elif in_b and not in_a:
            sep.discard(s)
            side_b.add(s)
        elif not in_a and not in_b:
            # isolated from both sides: send to the smaller one
            sep.discard(s)
            (side_a if len(side_a) <= len(side_b) else side_b).add(s)
    if not side_a and not side_b:
        return None
    return (np.array(sorted(side_a), dtype=np.int64),
            np.array(sorted(side_b), dtype=np.int64),
            np.array(sorted(sep), dtype=np.int64))


def _check_cut(side_a, side_b, adj_of):
    bset = set(int(v) for v in side_b)
    for v in side_a:
        for w in adj_of(int(v)):
            if w in bset:
                raise AssertionError("separator is not a vertex cut")


def nested_dissection(G, leaf_size=64):
    """Nested-dissection permutation and separator tree.

    Separators are numbered after both sub-domains (post-order); recursion
    stops at leaf_size vertices, leaves ordered by minimum degree.
    """
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    n = G.n
    adj_of = lambda v: G.indices[G.indptr[v]:G.indptr[v + 1]]
    order = []

    def visit(vertices):
        comps = _components(vertices, adj_of)
        if len(comps) > 1:
            node = SepNode(np.array([], dtype=np.int64))
            for comp in comps:
                node.children.append(visit(comp))
            return node
        verts = comps[0] if comps else np.array([], dtype=np.int64)
        if len(verts) <= leaf_size:
            order.extend(_min_degree_order(verts, adj_of).tolist())
            return SepNode(verts)
        split = _split_once(verts, adj_of)
        if split is None:
            order.extend(_min_degree_order(verts, adj_of).tolist())
            return SepNode(verts)
        side_a, side_b, sep = split
        _check_cut(side_a, side_b, adj_of)
        node = SepNode(sep)
        if len(side_a):
            node.children.append(visit(side_a))
        if len(side_b):
            node.children.append(visit(side_b))
        order.extend(sorted(int(v) for v in sep))
        return node

    root = visit(np.arange(n, dtype=np.int64))
    iperm = np.array(order, dtype=np.int64)
    perm = np.empty(n, dtype=np.int64)
    perm[iperm] = np.arange(n, dtype=np.int64)
    return Permutation(perm, iperm), SeparatorTree(root, n)


def elimination_tree(A):
    """Liu's parent-pointer algorithm on a symmetric-lower pattern."""
    n = A.n
    # row-wise view of the strict lower triangle
    row_lists = [[] for _ in range(n)]
    for k in range(n):
        for i in A.col_rows(k):
            if i > k:
                row_lists[int(i)].append(k)
    parent = np.full(n, NONE, dtype=np.int64)
    ancestor = np.full(n, NONE, dtype=np.int64)
    for j in range(n):
        for k in row_lists[j]:
            # walk from k toward the root, compressing paths to j
            r = k
            while ancestor[r] != NONE and ancestor[r] != j:
                nxt = ancestor[r]
                ancestor[r] = j
                r = nxt
            if ancestor[r] == NONE:
                ancestor[r] = j
                parent[r] = j
    return EliminationTree(parent)


def postorder(tree):
    """Post-order of the forest, children visited in ascending index order."""
    n = tree.n
    kids = tree.children()
    out = np.empty(n, dtype=np.int64)
    pos = 0
    for root in tree.roots():
        stack = [(root, False)]
        while stack:
            v, expanded = stack.pop()
            if expanded:
                out[pos] = v
                pos += 1
            else:
                stack.append((v, True))
                for c in reversed(kids[v]):
                    stack.append((c, False))
    return out


def postorder_permute(tree):
    """Relabel the tree in post-order.

    Returns the relabeling permutation (old index -> new index) and the
    relabeled tree, whose parent array satisfies parent[v] > v.
    """
    po = postorder(tree)  # po[new] = old
    perm = np.empty(tree.n, dtype=np.int64)
    perm[po] = np.arange(tree.n, dtype=np.int64)
    new_parent = np.full(tree.n, NONE, dtype=np.int64)
    for old in range(tree.n):
        p = tree.parent[old]
        if p != NONE:
            new_parent[perm[old]] = perm[p]
    return Permutation.from_perm(perm), EliminationTree(new_parent)
