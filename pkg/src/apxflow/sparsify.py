"""Capacity ultra-sparsification: spanning tree plus sampled off-tree edges.

``ultra_sparsify`` keeps a spanning tree at original capacities and keeps
each off-tree edge independently with probability proportional to its
capacity stretch (capacity over the bottleneck capacity of the tree path
between its endpoints), rescaling kept capacities by ``1 / p`` so every
fixed cut is preserved in expectation.  The sampling parameter ``kappa``
controls how aggressively low-stretch edges are dropped.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph, cut_capacity
from .treeops import TreeIndex

__all__ = [
    "UltraSparsifier",
    "measure_cut_distortion",
    "spanning_tree",
    "stretch_profile",
    "ultra_sparsify",
]

#: default oversampling multiplier for keep probabilities
DEFAULT_OVERSAMPLE = 4.0

#: tree capacities are kept as-is; inflating them only hurts measured distortion
KAPPA_TREE = 1.0


@dataclass
class UltraSparsifier:
    """Sparsified graph ``H`` on the same vertex set as its source.

    ``tree_edges`` are edge ids *of H* forming a spanning tree;
    ``off_tree_count`` is ``|E_H| - (n - 1)``.
    """

    H: Graph
    tree_edges: np.ndarray
    kappa_target: float
    off_tree_count: int
    stretch_sum: float
    seed: int

    def __post_init__(self):
        assert self.tree_edges.size == self.H.n - 1
        assert self.off_tree_count == self.H.m - (self.H.n - 1)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x):
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def spanning_tree(G: Graph, strategy: str = "max_capacity", seed: int = 0) -> np.ndarray:
    """Edge ids of a spanning tree of connected ``G``.

    ``max_capacity`` builds the maximum-capacity spanning tree (which
    maximizes every bottleneck, so off-tree capacity stretch never exceeds
    one); ``low_stretch_heuristic`` is a seeded recursive ball-growing
    heuristic over the ``1 / capacity`` length metric.
    """
    if not G.is_connected():
        raise ValueError("spanning tree requires a connected graph")
    if strategy == "max_capacity":
        order = np.lexsort((np.arange(G.m), -G.cap))
        uf = _UnionFind(G.n)
        picked = []
        for e in order:
            if uf.union(int(G.tail[e]), int(G.head[e])):
                picked.append(int(e))
                if len(picked) == G.n - 1:
                    break
        return np.asarray(sorted(picked), dtype=np.int64)
    if strategy == "low_stretch_heuristic":
        return _low_stretch_tree(G, seed)
    raise ValueError(f"unknown strategy {strategy!r}")


def _low_stretch_tree(G: Graph, seed: int) -> np.ndarray:
    """Recursive ball growing: grow a shortest-path ball around a seeded
    center, keep its Dijkstra tree, connect and recurse on the remainder."""
    rng = np.random.default_rng(seed)
    indptr, eids, _ = G.adjacency

    def neighbors(v):
        es = eids[indptr[v]:indptr[v + 1]]
        for e in es:
            w = int(G.head[e]) if int(G.tail[e]) == v else int(G.tail[e])
            yield int(e), w, float(G.cap[e])

    picked: list[int] = []

    def build(active: set[int]):
        if len(active) <= 1:
            return
        center = int(rng.choice(sorted(active)))
        # Dijkstra over 1/cap lengths restricted to `active`
        dist = {center: 0.0}
        via: dict[int, int] = {}
        heap = [(0.0, center)]
        reach_order = []
        while heap:
            d, v = heapq.heappop(heap)
            if d > dist.get(v, math.inf):
                continue
            reach_order.append(v)
            for e, w, c in neighbors(v):
                if w not in active:
                    continue
                nd = d + 1.0 / c
                if nd < dist.get(w, math.inf) - 1e-15:
                    dist[w] = nd
                    via[w] = e
                    heapq.heappush(heap, (nd, w))
        radius = max(dist.values())
        if radius <= 0:
            cut_r = 0.0
        else:
            cut_r = radius * rng.uniform(0.3, 0.6)
        ball = {v for v in reach_order if dist[v] <= cut_r}
        if len(ball) == len(active) or not ball:
            # degenerate split: keep the whole Dijkstra tree
            for v in active:
                if v != center:
                    picked.append(via[v])
            return
        for v in ball:
            if v != center:
                picked.append(via[v])
        rest = active - ball
        # split the remainder into connected pieces, wire each to the ball
        remaining = set(rest)
        while remaining:
            start = min(remaining)
            comp = {start}
            stack = [start]
            connector = None
            while stack:
                v = stack.pop()
                for e, w, c in neighbors(v):
                    if w in ball and connector is None:
                        connector = e
                    if w in remaining and w not in comp:
                        comp.add(w)
                        stack.append(w)
            assert connector is not None, "remainder piece lost contact with ball"
            picked.append(connector)
            remaining -= comp
            build(comp)

    build(set(range(G.n)))
    tree = np.asarray(sorted(set(picked)), dtype=np.int64)
    if tree.size != G.n - 1:
        raise AssertionError("ball growing failed to produce a spanning tree")
    return tree


def stretch_profile(G: Graph, strategy: str = "max_capacity", seed: int = 0):
    """Tree edge ids, per-off-tree-edge capacity stretch, and their sum.

    ``stretch_e = u_e / bottleneck(tree path between endpoints)``; it is
    the sampling weight used by :func:`ultra_sparsify` and the quantity a
    caller needs to pick ``kappa`` for a target edge budget.
    """
    tree = spanning_tree(G, strategy, seed)
    idx = TreeIndex(G, tree)
    off = np.setdiff1d(np.arange(G.m), tree)
    if off.size == 0:
        return tree, off, np.zeros(0), 0.0
    bott = idx.bottlenecks(G.tail[off], G.head[off])
    stretch = G.cap[off] / bott
    return tree, off, stretch, float(stretch.sum())


def ultra_sparsify(
    G: Graph,
    kappa: float,
    seed: int = 0,
    oversample: float = DEFAULT_OVERSAMPLE,
    tree_strategy: str = "max_capacity",
) -> UltraSparsifier:
    """Sample a cut sparsifier built around a spanning tree.

    Off-tree edge ``e`` is kept with probability
    ``p_e = min(1, oversample * stretch_e / kappa)`` at capacity
    ``u_e / p_e``; the tree itself is always kept at original capacity.
    The expected off-tree count is at most ``oversample * sum(stretch) /
    kappa`` and the returned edge count is asserted against the budget
    ``oversample * m * log2(n)^2 / kappa``.
    """
    if kappa <= 1.0:
        raise ValueError("kappa must exceed 1")
    if not G.is_connected():
        raise ValueError("ultra_sparsify requires a connected graph")
    tree, off, stretch, stretch_sum = stretch_profile(G, tree_strategy, seed)
    rng = np.random.default_rng(seed)
    tails = list(G.tail[tree])
    heads = list(G.head[tree])
    caps = list(G.cap[tree] * KAPPA_TREE)
    kept = 0
    if off.size:
        p = np.minimum(1.0, oversample * stretch / kappa)
        keep = rng.random(off.size) < p
        kept = int(keep.sum())
        tails.extend(G.tail[off[keep]])
        heads.extend(G.head[off[keep]])
        caps.extend(G.cap[off[keep]] / p[keep])
    H = Graph(G.n, tails, heads, caps)
    budget = oversample * G.m * max(1.0, math.log2(max(2, G.n))) ** 2 / kappa
    if kept > math.ceil(budget):
        raise AssertionError(
            f"sampled {kept} off-tree edges, budget allows {math.ceil(budget)}"
        )
    return UltraSparsifier(
        H=H,
        tree_edges=np.arange(G.n - 1, dtype=np.int64),
        kappa_target=float(kappa),
        off_tree_count=kept,
        stretch_sum=stretch_sum,
        seed=seed,
    )


def measure_cut_distortion(G: Graph, H: Graph) -> float:
    """Best ``kappa`` such that ``u_H(S)`` is within a ``kappa`` spread of
    ``u_G(S)`` over every proper cut (ratio of extreme ratios, so uniform
    rescaling of all capacities measures as 1).  Exhaustive; ``n <= 20``.
    """
    if G.n != H.n:
        raise ValueError("graphs must share a vertex set")
    if G.n > 20:
        raise ValueError("cut distortion measurement limited to n <= 20")
    n = G.n
    k = n - 1
    codes = np.arange(1 << k, dtype=np.uint64)
    members = ((codes[:, None] >> np.arange(k, dtype=np.uint64)) & 1).astype(bool)
    in_s = np.concatenate([np.ones((codes.size, 1), dtype=bool), members], axis=1)
    in_s = in_s[:-1]  # drop the full set; vertex 0 is always inside
    ug = (in_s[:, G.tail] != in_s[:, G.head]) @ G.cap if G.m else np.zeros(len(in_s))
    uh = (in_s[:, H.tail] != in_s[:, H.head]) @ H.cap if H.m else np.zeros(len(in_s))
    if np.any(ug <= 0) or np.any(uh <= 0):
        return math.inf
    ratios = uh / ug
    return float(ratios.max() / ratios.min())
