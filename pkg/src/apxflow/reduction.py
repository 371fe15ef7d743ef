"""Tree-like vertex elimination and the lifting of congestion approximators.

``reduce_graph`` repeatedly removes degree-1 vertices and splices degree-2
vertices until the remaining graph has minimum degree 3 (a pendant vertex
whose edges all lead to one neighbour counts as degree 1 here, so cycles
collapse completely).  Every elimination is logged, which lets
``convert`` turn an approximator for the reduced graph into one for the
original: eliminated demand is pushed to the surviving representative and
one explicit cut row per elimination accounts for the congestion on the
collapsed piece.

Two bookkeeping choices make the lift exact rather than merely O(alpha):

* a degree-2 splice absorbs the vertex across its *larger*-capacity edge,
  so the replacement edge's capacity ``min(c1, c2)`` equals the true
  boundary capacity between the merged classes, and by induction every cut
  of the reduced graph has exactly the capacity of its preimage cut;
* each emitted row divides by the true boundary capacity of the collapsed
  vertex class, so row values are genuine cut ratios of the input graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from heapq import heappush, heappop

import numpy as np

from .graph import CutSet, Graph
from .hierarchy import CongestionApproximatorOp, IntervalCutRows
from .sparsify import DEFAULT_OVERSAMPLE, UltraSparsifier, ultra_sparsify

__all__ = [
    "ComposedMap",
    "ConvertedApproximator",
    "Degree1",
    "Degree2",
    "ReductionMap",
    "convert",
    "convert_composed",
    "reduce_graph",
    "replay",
    "ultra_sparsify_and_reduce",
]


@dataclass
class Degree1:
    """Pendant collapse: every incident edge of ``vertex`` leads to
    ``kept_neighbor``; ``edge_capacity`` is their total (and the true
    boundary capacity of the collapsed class)."""

    vertex: int
    kept_neighbor: int
    edge_capacity: float


@dataclass
class Degree2:
    """Series splice: ``vertex`` had the two edges ``original_capacities``
    to ``neighbors = (kept, other)`` and is absorbed into ``kept`` (the
    larger-capacity side); the replacement edge gets
    ``merged_edge_capacity = min`` of the pair."""

    vertex: int
    neighbors: tuple[int, int]
    merged_edge_capacity: float
    original_capacities: tuple[float, float]


@dataclass
class ReductionMap:
    """Replayable elimination log plus the vertex surjection it induces."""

    eliminated: list
    vertex_map: np.ndarray      # original vertex -> surviving representative
    surviving: np.ndarray       # sorted surviving vertex ids
    relabel: np.ndarray         # original vertex -> reduced-graph index (-1 if gone)
    reduced: Graph

    @property
    def n_records(self) -> int:
        return len(self.eliminated)


@dataclass
class ComposedMap:
    ultra: UltraSparsifier
    reduction: ReductionMap
    kappa: float


class _WorkGraph:
    """Mutable multigraph used while eliminating; edges never renumber."""

    def __init__(self, G: Graph):
        self.n = G.n
        self.tail = list(int(v) for v in G.tail)
        self.head = list(int(v) for v in G.head)
        self.cap = list(float(c) for c in G.cap)
        self.alive_edge = [True] * G.m
        self.alive_vertex = [True] * G.n
        self.incident: list[set[int]] = [set() for _ in range(G.n)]
        for e in range(G.m):
            self.incident[self.tail[e]].add(e)
            self.incident[self.head[e]].add(e)

    def degree(self, v: int) -> int:
        return len(self.incident[v])

    def edges_of(self, v: int):
        for e in sorted(self.incident[v]):
            w = self.head[e] if self.tail[e] == v else self.tail[e]
            yield e, w, self.cap[e]

    def kill_edge(self, e: int):
        self.alive_edge[e] = False
        self.incident[self.tail[e]].discard(e)
        self.incident[self.head[e]].discard(e)

    def add_edge(self, u: int, v: int, c: float) -> int:
        e = len(self.tail)
        self.tail.append(u)
        self.head.append(v)
        self.cap.append(c)
        self.alive_edge.append(True)
        self.incident[u].add(e)
        self.incident[v].add(e)
        return e

    def kill_vertex(self, v: int):
        self.alive_vertex[v] = False

    def to_graph(self) -> tuple[Graph, np.ndarray, np.ndarray]:
        surviving = np.asarray(
            [v for v in range(self.n) if self.alive_vertex[v]], dtype=np.int64
        )
        relabel = -np.ones(self.n, dtype=np.int64)
        relabel[surviving] = np.arange(surviving.size)
        tails, heads, caps = [], [], []
        for e in range(len(self.tail)):
            if self.alive_edge[e]:
                tails.append(int(relabel[self.tail[e]]))
                heads.append(int(relabel[self.head[e]]))
                caps.append(self.cap[e])
        return Graph(max(1, surviving.size), tails, heads, caps), surviving, relabel


def _eliminate(work: _WorkGraph, record_sink: list, parent: np.ndarray) -> None:
    """Drain all degree <= 2 vertices, lowest id first."""
    queue: list[int] = []
    for v in range(work.n):
        if work.degree(v) <= 2:
            heappush(queue, v)
    while queue:
        v = heappop(queue)
        if not work.alive_vertex[v]:
            continue
        deg = work.degree(v)
        if deg > 2:
            continue
        if deg == 0:
            continue  # isolated survivor, nothing to record
        edges = list(work.edges_of(v))
        neighbors = {w for _, w, _ in edges}
        if len(neighbors) == 1:
            # pendant (one edge, or a parallel pair to the same neighbour)
            w = neighbors.pop()
            total = sum(c for _, _, c in edges)
            record_sink.append(Degree1(v, w, total))
            for e, _, _ in edges:
                work.kill_edge(e)
            work.kill_vertex(v)
            parent[v] = w
            if work.degree(w) <= 2:
                heappush(queue, w)
            continue
        # genuine degree-2 splice between two distinct neighbours
        (e1, y, c1), (e2, z, c2) = edges
        if c1 > c2 or (c1 == c2 and y <= z):
            kept, other = y, z
            cap_kept, cap_other = c1, c2
        else:
            kept, other = z, y
            cap_kept, cap_other = c2, c1
        record_sink.append(
            Degree2(v, (kept, other), min(c1, c2), (cap_kept, cap_other))
        )
        work.kill_edge(e1)
        work.kill_edge(e2)
        work.add_edge(kept, other, min(c1, c2))
        work.kill_vertex(v)
        parent[v] = kept
        for w in (kept, other):
            if work.degree(w) <= 2:
                heappush(queue, w)


def reduce_graph(H: Graph) -> tuple[Graph, ReductionMap]:
    """Collapse all tree-like structure of connected ``H``.

    Returns the reduced graph (minimum degree 3, or a single vertex when
    everything collapses) and the replayable :class:`ReductionMap`.  The
    edge count of the output is asserted against ``4 m'`` where
    ``m' = |E_H| - (n - 1)``.
    """
    if not H.is_connected():
        raise ValueError("reduce requires a connected graph")
    work = _WorkGraph(H)
    records: list = []
    parent = -np.ones(H.n, dtype=np.int64)
    _eliminate(work, records, parent)
    reduced, surviving, relabel = work.to_graph()

    vertex_map = np.arange(H.n, dtype=np.int64)
    for rec in records:  # elimination order: each hop targets a live vertex
        vertex_map[rec.vertex] = rec.kept_neighbor if isinstance(rec, Degree1) \
            else rec.neighbors[0]
    # path-compress to the surviving representative
    for v in range(H.n):
        r = v
        while parent[r] >= 0:
            r = int(parent[r])
        vertex_map[v] = r

    excess = H.m - (H.n - 1)
    if reduced.m > max(0, 4 * excess):
        raise AssertionError(
            f"reduced graph keeps {reduced.m} edges, bound is {4 * excess}"
        )
    return reduced, ReductionMap(records, vertex_map, surviving, relabel, reduced)


def replay(rmap: ReductionMap, H: Graph) -> Graph:
    """Re-run the elimination log against ``H`` and return the result.

    Each record is validated against the current state before being
    applied, so a successful replay certifies the log is faithful; the
    output must equal ``rmap.reduced`` bit for bit.
    """
    work = _WorkGraph(H)
    for rec in rmap.eliminated:
        if isinstance(rec, Degree1):
            edges = list(work.edges_of(rec.vertex))
            if not edges or any(w != rec.kept_neighbor for _, w, _ in edges):
                raise AssertionError(f"replay mismatch at {rec}")
            if sum(c for _, _, c in edges) != rec.edge_capacity:
                raise AssertionError(f"replay capacity mismatch at {rec}")
            for e, _, _ in edges:
                work.kill_edge(e)
            work.kill_vertex(rec.vertex)
        else:
            edges = list(work.edges_of(rec.vertex))
            if len(edges) != 2:
                raise AssertionError(f"replay mismatch at {rec}")
            by_nbr = {w: c for _, w, c in edges}
            kept, other = rec.neighbors
            if set(by_nbr) != {kept, other} or (
                by_nbr[kept],
                by_nbr[other],
            ) != rec.original_capacities:
                raise AssertionError(f"replay mismatch at {rec}")
            for e, _, _ in edges:
                work.kill_edge(e)
            work.add_edge(kept, other, rec.merged_edge_capacity)
            work.kill_vertex(rec.vertex)
    rebuilt, _, _ = work.to_graph()
    return rebuilt


# ---------------------------------------------------------------------------
# approximator lifting


class ConvertedApproximator(CongestionApproximatorOp):
    """Approximator for the pre-reduction graph, wrapping one for the
    reduced graph.

    Row layout: one row per elimination record (in elimination order),
    then the inner operator's rows on the pushed demand.  Record rows are
    interval sums over an Euler tour of the absorption forest, so an
    application costs O(n) plus one inner application.
    """

    def __init__(self, rmap: ReductionMap, inner: CongestionApproximatorOp,
                 H: Graph, quality: float | None = None):
        self.rmap = rmap
        self.inner = inner
        self.H = H
        n = H.n

        # absorption forest: eliminated vertex -> absorber
        children: list[list[int]] = [[] for _ in range(n)]
        absorber = {}
        for rec in rmap.eliminated:
            a = rec.kept_neighbor if isinstance(rec, Degree1) else rec.neighbors[0]
            children[a].append(rec.vertex)
            absorber[rec.vertex] = a
        order = np.empty(n, dtype=np.int64)
        lo = np.empty(n, dtype=np.int64)
        hi = np.empty(n, dtype=np.int64)
        clock = 0
        roots = [int(v) for v in rmap.surviving]
        for root in roots:
            stack = [(root, False)]
            while stack:
                v, done = stack.pop()
                if done:
                    hi[v] = clock
                    continue
                lo[v] = clock
                order[clock] = v
                clock += 1
                stack.append((v, True))
                for ch in reversed(children[v]):
                    stack.append((ch, False))
        assert clock == n

        denom = np.array([
            rec.edge_capacity if isinstance(rec, Degree1)
            else sum(rec.original_capacities)
            for rec in rmap.eliminated
        ])
        elim = np.array([rec.vertex for rec in rmap.eliminated], dtype=np.int64)
        if elim.size:
            self.kernel = IntervalCutRows(order, lo[elim], hi[elim], denom)
        else:
            self.kernel = IntervalCutRows(order, np.zeros(0, np.int64),
                                          np.zeros(0, np.int64), np.zeros(0))
        # push map: original vertex -> reduced-graph index
        self.push = rmap.relabel[rmap.vertex_map]
        assert (self.push >= 0).all()
        self.n_reduced = rmap.reduced.n
        self.quality = float(inner.quality if quality is None else quality)

    @property
    def n_rows(self) -> int:
        return self.kernel.n_rows + self.inner.n_rows

    def apply(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        rec_rows = self.kernel.apply(b)
        pushed = np.bincount(self.push, weights=b, minlength=self.n_reduced)
        return np.concatenate([rec_rows, self.inner.apply(pushed)])

    def transpose_apply(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        k = self.kernel.n_rows
        out = self.kernel.transpose(y[:k])
        if self.inner.n_rows:
            inner_t = self.inner.transpose_apply(y[k:])
            out = out + inner_t[self.push]
        return out

    def row_cuts(self):
        for i in range(self.kernel.n_rows):
            yield CutSet(self.kernel.row_members(i))
        for i in range(self.inner.n_rows):
            yield self._lift_inner_cut(self.inner.row_cut(i))

    def _lift_inner_cut(self, cut: CutSet) -> CutSet:
        sel = np.zeros(self.n_reduced, dtype=bool)
        sel[list(cut.vertices)] = True
        return CutSet(np.flatnonzero(sel[self.push]))

    def row_cut(self, i: int) -> CutSet:
        k = self.kernel.n_rows
        if i < k:
            return CutSet(self.kernel.row_members(i))
        return self._lift_inner_cut(self.inner.row_cut(i - k))

    def op_count(self) -> int:
        return 2 * self.H.n + self.kernel.op_count() + self.inner.op_count()


def convert(rmap: ReductionMap, R_reduced: CongestionApproximatorOp, H: Graph,
            lift_constant: float = 1.0) -> ConvertedApproximator:
    """Lift an approximator of the reduced graph back to ``H``.

    Every emitted row is an exact cut ratio of ``H`` (see the module
    docstring), so the lift preserves the lower-bound soundness of the
    inner operator; the recorded quality is scaled by ``lift_constant``.
    """
    return ConvertedApproximator(rmap, R_reduced, H,
                                 quality=R_reduced.quality * lift_constant)


def ultra_sparsify_and_reduce(
    G: Graph,
    kappa: float,
    seed: int = 0,
    oversample: float = DEFAULT_OVERSAMPLE,
    tree_strategy: str = "max_capacity",
) -> tuple[Graph, ComposedMap]:
    """Sparsify then eliminate: the two size reductions composed."""
    us = ultra_sparsify(G, kappa, seed=seed, oversample=oversample,
                        tree_strategy=tree_strategy)
    reduced, rmap = reduce_graph(us.H)
    return reduced, ComposedMap(ultra=us, reduction=rmap, kappa=float(kappa))


def convert_composed(cmap: ComposedMap, R_reduced: CongestionApproximatorOp,
                     G: Graph, lift_constant: float = 1.0) -> ConvertedApproximator:
    """Lift through both reductions back to ``G``'s vertex set.

    The sparsifier shares ``G``'s vertices, so the lifted operator applies
    to demands on ``G`` unchanged; its rows are exact cut ratios of the
    sparsifier ``H`` and the recorded quality picks up the sparsification
    factor ``kappa``.
    """
    if G.n != cmap.ultra.H.n:
        raise ValueError("composed map does not match this graph")
    op = ConvertedApproximator(cmap.reduction, R_reduced, cmap.ultra.H)
    op.quality = cmap.kappa * R_reduced.quality * lift_constant
    return op
