"""Hierarchical cut decomposition and the linear congestion approximator.

A :class:`DecompositionTree` is a laminar family of vertex clusters built by
recursive partitioning with a cut-matching game, refined to singleton
leaves.  Its non-root clusters are the rows of a linear operator ``R``:
``(R b)_S = b(S) / u(S)``, evaluated in O(n) per application by turning
cluster memberships into contiguous intervals of the leaf order.  The
infinity norm ``|R b|`` then lower-bounds the optimum congestion of ``b``
because every row is a true cut ratio.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix

from .graph import CutSet, Graph, InfeasibleDemandError, cut_capacity

log = logging.getLogger(__name__)

__all__ = [
    "CongestionApproximatorOp",
    "CutMatchingState",
    "DecompositionTree",
    "ExpanderCertificate",
    "HierarchyParams",
    "IntervalCutRows",
    "SparseCut",
    "TreeApproximator",
    "build_hierarchy",
    "cut_matching_game",
    "default_round_cap",
    "empirical_quality",
    "materialize",
]


# ---------------------------------------------------------------------------
# linear-operator kernel


class IntervalCutRows:
    """Rows of the form ``b(S) / denom`` where each S is a contiguous
    interval of a fixed vertex ordering.

    ``apply`` is one permutation plus one prefix sum; ``transpose`` is a
    difference-array range add.  Both cost O(n + rows).
    """

    def __init__(self, order: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                 denom: np.ndarray):
        self.order = np.asarray(order, dtype=np.int64)
        self.lo = np.asarray(lo, dtype=np.int64)
        self.hi = np.asarray(hi, dtype=np.int64)
        self.denom = np.asarray(denom, dtype=np.float64)
        self.n = self.order.size
        self.pos = np.empty(self.n, dtype=np.int64)
        self.pos[self.order] = np.arange(self.n)
        if np.any(self.denom <= 0):
            raise ValueError("row denominators must be positive")

    @property
    def n_rows(self) -> int:
        return self.lo.size

    def apply(self, b: np.ndarray) -> np.ndarray:
        pref = np.concatenate([[0.0], np.cumsum(b[self.order])])
        return (pref[self.hi] - pref[self.lo]) / self.denom

    def transpose(self, y: np.ndarray) -> np.ndarray:
        w = y / self.denom
        d = np.zeros(self.n + 1)
        np.add.at(d, self.lo, w)
        np.add.at(d, self.hi, -w)
        acc = np.cumsum(d[:-1])
        out = np.empty(self.n)
        out[self.order] = acc
        return out

    def row_members(self, i: int) -> np.ndarray:
        return self.order[self.lo[i]:self.hi[i]]

    def op_count(self) -> int:
        return self.n + 2 * self.n_rows


class CongestionApproximatorOp:
    """Linear operator whose row maxima track the optimum congestion.

    Subclasses provide ``apply`` / ``transpose_apply`` plus row-cut
    introspection; ``quality`` is the tracked approximation factor
    (an estimate at desk scale, bookkeeping for composed operators).
    """

    quality: float = 1.0

    def apply(self, b: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def transpose_apply(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def n_rows(self) -> int:
        raise NotImplementedError

    def row_cuts(self):
        """Yield the explicit vertex set behind every row, in row order."""
        raise NotImplementedError

    def row_cut(self, i: int) -> CutSet:
        for j, cut in enumerate(self.row_cuts()):
            if j == i:
                return cut
        raise IndexError(i)

    def op_count(self) -> int:
        raise NotImplementedError


def materialize(R: CongestionApproximatorOp, n: int) -> np.ndarray:
    """Dense matrix of ``R`` obtained by applying it to the basis."""
    cols = [R.apply(e) for e in np.eye(n)]
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# decomposition tree


@dataclass
class DecompositionTree:
    """Laminar cluster family; node 0 is the root cluster (all vertices)."""

    n: int
    parent: np.ndarray                 # -1 for the root
    children: list[list[int]]
    members: list[np.ndarray]          # original vertex ids per node
    boundary_capacity: np.ndarray
    level: np.ndarray
    leaf_of: np.ndarray                # vertex -> singleton leaf node
    order: np.ndarray                  # vertices in leaf DFS order
    node_lo: np.ndarray                # node interval in that order
    node_hi: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.parent.size

    @property
    def depth(self) -> int:
        """Number of levels, root level included."""
        return int(self.level.max()) + 1

    @property
    def member_count(self) -> np.ndarray:
        return self.node_hi - self.node_lo

    def audit_partitions(self) -> bool:
        """Check that every level slice partitions the vertex set."""
        for lev in range(self.depth):
            seen = np.zeros(self.n, dtype=bool)
            for node in range(self.n_nodes):
                is_leaf = not self.children[node]
                if self.level[node] == lev or (is_leaf and self.level[node] < lev):
                    mem = self.members[node]
                    if seen[mem].any():
                        return False
                    seen[mem] = True
            if not seen.all():
                return False
        return True

    def audit_boundaries(self, G: Graph) -> bool:
        for node in range(1, self.n_nodes):
            expect = cut_capacity(G, self.members[node]) \
                if len(self.members[node]) < self.n else 0.0
            if abs(expect - self.boundary_capacity[node]) > 1e-9 * max(1.0, expect):
                return False
        return True

    def export_text(self) -> str:
        """Line format: ``t <node> <parent> <boundary_capacity> <members>``
        then ``l <vertex> <leaf_node>`` with 1-based vertex ids."""
        lines = []
        counts = self.member_count
        for node in range(self.n_nodes):
            lines.append(
                f"t {node} {int(self.parent[node])} "
                f"{float(self.boundary_capacity[node])!r} {int(counts[node])}"
            )
        for v in range(self.n):
            lines.append(f"l {v + 1} {int(self.leaf_of[v])}")
        return "\n".join(lines) + "\n"


class TreeApproximator(CongestionApproximatorOp):
    """Congestion approximator whose rows are the non-root cluster cuts."""

    def __init__(self, tree: DecompositionTree, G: Graph, quality: float | None = None):
        if tree.n != G.n:
            raise ValueError("tree and graph sizes differ")
        self.tree = tree
        self.G = G
        nodes = np.arange(1, tree.n_nodes)
        denom = tree.boundary_capacity[nodes]
        feasible = denom > 0
        self._dropped = nodes[~feasible]
        self.rows_nodes = nodes[feasible]
        self.kernel = IntervalCutRows(
            tree.order, tree.node_lo[self.rows_nodes], tree.node_hi[self.rows_nodes],
            denom[feasible],
        )
        if quality is None:
            quality = default_quality(G.n)
        self.quality = float(quality)

    @property
    def n_rows(self) -> int:
        return self.kernel.n_rows

    def _check_disconnection(self, b):
        for node in self._dropped:
            mem = self.tree.members[node]
            if abs(float(np.sum(b[mem]))) > 1e-12:
                raise InfeasibleDemandError(
                    "demand crosses a zero-capacity cluster boundary",
                    cut=CutSet(mem),
                )

    def apply(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if self._dropped.size:
            self._check_disconnection(b)
        return self.kernel.apply(b)

    def transpose_apply(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return self.kernel.transpose(y)

    def row_cuts(self):
        for i in range(self.n_rows):
            yield CutSet(self.kernel.row_members(i))

    def row_cut(self, i: int) -> CutSet:
        return CutSet(self.kernel.row_members(i))

    def op_count(self) -> int:
        return self.kernel.op_count()


def default_quality(n: int, scale: float = 2.0) -> float:
    """Desk-scale quality estimate recorded on hierarchy-built operators."""
    return max(1.0, scale * math.log2(max(2, n)))


# ---------------------------------------------------------------------------
# cut-matching game


@dataclass
class CutMatchingState:
    round: int
    matchings: list
    potential_vector: np.ndarray


@dataclass
class SparseCut:
    cut: CutSet          # cluster-graph vertex ids
    conductance: float
    state: CutMatchingState


@dataclass
class ExpanderCertificate:
    matchings: list
    rounds: int
    state: CutMatchingState


def default_round_cap(cluster_size: int) -> int:
    return int(math.ceil(10.0 * math.log2(max(2, cluster_size)) ** 2))


def _decompose_transfers(G: Graph, f: np.ndarray, b: np.ndarray, tol: float):
    """Greedy path decomposition of a conserving flow into source-to-sink
    transfers ``(src, dst, amount)``; cycles in the flow are cancelled."""
    rem = np.array(f, dtype=np.float64)
    excess = np.array(b, dtype=np.float64)
    indptr, eids, signs = G.adjacency
    transfers: list[tuple[int, int, float]] = []
    sources = [int(v) for v in np.flatnonzero(excess > tol)]
    guard = 8 * (G.m + G.n + 4) * max(1, len(sources))
    for src in sources:
        while excess[src] > tol and guard > 0:
            path_e: list[int] = []
            path_s: list[float] = []
            onpath = {src: 0}
            seq = [src]
            v = src
            delivered = False
            while guard > 0:
                guard -= 1
                best_e, best_s, best_f = -1, 0.0, tol
                for idx in range(indptr[v], indptr[v + 1]):
                    e = int(eids[idx])
                    s = float(signs[idx])
                    out = rem[e] * s
                    if out > best_f:
                        best_e, best_s, best_f = e, s, out
                if best_e < 0:
                    excess[src] = 0.0  # numerical leftovers, drop them
                    break
                w = int(G.head[best_e]) if best_s > 0 else int(G.tail[best_e])
                if w in onpath:
                    # cancel the cycle w .. v -> w
                    k = onpath[w]
                    cyc_e = path_e[k:] + [best_e]
                    cyc_s = path_s[k:] + [best_s]
                    amt = min(rem[e] * s for e, s in zip(cyc_e, cyc_s))
                    for e, s in zip(cyc_e, cyc_s):
                        rem[e] -= amt * s
                    for vv in seq[k + 1:]:
                        del onpath[vv]
                    del path_e[k:], path_s[k:], seq[k + 1:]
                    v = w
                    continue
                path_e.append(best_e)
                path_s.append(best_s)
                onpath[w] = len(seq)
                seq.append(w)
                v = w
                if excess[v] < -tol:
                    amt = min(excess[src], -excess[v],
                              min(rem[e] * s for e, s in zip(path_e, path_s)))
                    for e, s in zip(path_e, path_s):
                        rem[e] -= amt * s
                    excess[src] -= amt
                    excess[v] += amt
                    transfers.append((src, v, amt))
                    delivered = True
                    break
            if not delivered and excess[src] > tol:
                excess[src] = 0.0
    return transfers


def _matching_operator(transfers, act: np.ndarray, n_cluster: int):
    """Row-stochastic averaging operator over active-vertex positions."""
    k = act.size
    pos = -np.ones(n_cluster, dtype=np.int64)
    pos[act] = np.arange(k)
    rows, cols, vals = [], [], []
    outgoing = np.zeros(k)
    for src, dst, amt in transfers:
        i, j = int(pos[src]), int(pos[dst])
        if i < 0 or j < 0:
            continue
        rows.extend((i, j))
        cols.extend((j, i))
        vals.extend((amt, amt))
        outgoing[i] += amt
        outgoing[j] += amt
    unmatched = outgoing <= 0
    norm = np.where(unmatched, 1.0, outgoing)
    vals = [v / norm[r] for v, r in zip(vals, rows)]
    for i in np.flatnonzero(unmatched):
        rows.append(int(i))
        cols.append(int(i))
        vals.append(1.0)
    return csr_matrix((vals, (rows, cols)), shape=(k, k))


def cut_matching_game(
    G_cluster: Graph,
    flow_solver,
    round_cap: int | None = None,
    seed: int = 0,
    *,
    active: np.ndarray | None = None,
    conductance_target: float = 0.2,
    inner_epsilon: float = 0.1,
    balance_target: float = 0.5,
    mix_tol: float = 0.05,
):
    """Either find a cut of conductance below the target or certify
    expansion by exhausting the matching rounds.

    Per round: a random unit vector orthogonal to all-ones is walked
    through the accumulated matchings, the active vertices are bisected by
    the walked value, and ``flow_solver`` routes the bisection demand.  A
    returned cut with demand/capacity ratio at least
    ``1 / conductance_target`` certifies a sparse cut; otherwise the routed
    flow's path decomposition joins the matchings.  The game also ends
    early when the walked vector has mixed to almost uniform, which is the
    exhausted-potential outcome.
    """
    if active is None:
        act = np.arange(G_cluster.n, dtype=np.int64)
    else:
        act = np.asarray(active, dtype=np.int64)
    if act.size < 2:
        raise ValueError("cut-matching needs at least two active vertices")
    if round_cap is None:
        round_cap = default_round_cap(act.size)
    rng = np.random.default_rng(seed)
    w = G_cluster.degree_capacity[act]
    matchings: list = []
    state = CutMatchingState(round=0, matchings=matchings,
                             potential_vector=np.zeros(act.size))
    threshold = 1.0 / conductance_target
    deg_all = G_cluster.degree_capacity
    total_vol = float(deg_all.sum())

    for rnd in range(round_cap):
        r = rng.standard_normal(act.size)
        r -= r.mean()
        nrm = np.linalg.norm(r)
        if nrm < 1e-12:
            continue
        r /= nrm
        walked = r.copy()
        for M in matchings:
            walked = 0.5 * walked + 0.5 * (M @ walked)
        walked -= walked.mean()
        state.potential_vector = walked
        if matchings and float(np.linalg.norm(walked)) <= mix_tol:
            log.debug("cut-matching: mixed after %d rounds", rnd)
            return ExpanderCertificate(matchings, rounds=rnd, state=state)

        order = np.lexsort((act, -walked))
        cumw = np.cumsum(w[order])
        k = int(np.searchsorted(cumw, balance_target * cumw[-1])) + 1
        k = min(max(k, 1), act.size - 1)
        side_a, side_b = order[:k], order[k:]
        vol_a, vol_b = float(w[side_a].sum()), float(w[side_b].sum())
        d_total = min(vol_a, vol_b)
        b = np.zeros(G_cluster.n)
        b[act[side_a]] = w[side_a] * (d_total / vol_a)
        b[act[side_b]] = -w[side_b] * (d_total / vol_b)

        sol = flow_solver(G_cluster, b, inner_epsilon)
        state.round = rnd + 1

        if sol.cut_ratio >= threshold:
            actset = set(int(v) for v in act)
            s_set = set(int(v) for v in sol.cut)
            if s_set - actset:
                # the certified side contains the contracted outside vertex;
                # its complement has the same demand, capacity, and ratio
                s_set = set(range(G_cluster.n)) - s_set
            s_set &= actset
            if 0 < len(s_set) < act.size:
                cap = cut_capacity(G_cluster, CutSet(s_set))
                vol_s = float(deg_all[list(s_set)].sum())
                cond = cap / min(vol_s, total_vol - vol_s)
                if cond < conductance_target:
                    return SparseCut(CutSet(s_set), cond, state)

        tol = 1e-9 * max(1.0, float(np.abs(b).max()))
        transfers = _decompose_transfers(G_cluster, sol.flow, b, tol)
        matchings.append(_matching_operator(transfers, act, G_cluster.n))

    log.debug("cut-matching: round cap %d reached, declaring expander", round_cap)
    return ExpanderCertificate(matchings, rounds=round_cap, state=state)


# ---------------------------------------------------------------------------
# hierarchy construction


@dataclass
class HierarchyParams:
    round_cap: int | None = None        # None: ceil(10 * log2(cluster)^2)
    min_cluster: int = 10
    balance_target: float = 0.5
    conductance: float = 0.2
    inner_epsilon: float = 0.1
    mix_tol: float = 0.05
    depth_cap_factor: int = 4
    quality_scale: float = 2.0


def _cluster_graph(G: Graph, members: np.ndarray):
    """Induced subgraph plus one contracted vertex holding boundary edges.

    Returns ``(Gc, contracted)`` where ``contracted`` is the extra vertex id
    or ``None`` when the cluster has no boundary.
    """
    k = members.size
    pos = -np.ones(G.n, dtype=np.int64)
    pos[members] = np.arange(k)
    pt, ph = pos[G.tail], pos[G.head]
    internal = (pt >= 0) & (ph >= 0)
    cross = (pt >= 0) ^ (ph >= 0)
    tails = list(pt[internal])
    heads = list(ph[internal])
    caps = list(G.cap[internal])
    if not cross.any():
        if k == 1:
            return Graph(1, [], [], []), None
        return Graph(k, tails, heads, caps), None
    contracted = k
    for e in np.flatnonzero(cross):
        inside = pt[e] if pt[e] >= 0 else ph[e]
        tails.append(int(inside))
        heads.append(contracted)
        caps.append(float(G.cap[e]))
    return Graph(k + 1, tails, heads, caps), contracted


def build_hierarchy(
    G: Graph,
    flow_solver,
    params: HierarchyParams | None = None,
    seed: int = 0,
) -> DecompositionTree:
    """Recursively partition ``G`` into a laminar cluster hierarchy.

    Each cluster plays the cut-matching game on its induced graph (with
    boundary edges attached to a contracted outside vertex).  Sparse cuts
    split the cluster; expander certificates, small clusters, and the depth
    cap all refine directly to singleton leaves, so the final level is
    always the singleton partition.
    """
    if not G.is_connected():
        raise ValueError("hierarchy construction requires a connected graph")
    params = params or HierarchyParams()
    ss = np.random.SeedSequence(seed)

    parent = [-1]
    children: list[list[int]] = [[]]
    members: list[np.ndarray] = [np.arange(G.n, dtype=np.int64)]
    level = [0]
    depth_cap = params.depth_cap_factor * max(1, math.ceil(math.log2(max(2, G.n))))
    level_edge_volume: dict[int, int] = {}

    stack = [(0, ss.spawn(1)[0])]
    while stack:
        node, node_ss = stack.pop()
        mem = members[node]
        lev = level[node]
        if mem.size == 1:
            continue
        if mem.size <= params.min_cluster or lev >= depth_cap:
            split_sets = [np.array([v]) for v in mem]
        else:
            Gc, contracted = _cluster_graph(G, mem)
            level_edge_volume[lev] = level_edge_volume.get(lev, 0) + Gc.m
            act = np.arange(mem.size, dtype=np.int64)
            cap_rounds = params.round_cap or default_round_cap(mem.size)
            result = cut_matching_game(
                Gc,
                flow_solver,
                round_cap=cap_rounds,
                seed=int(node_ss.generate_state(1)[0]),
                active=act,
                conductance_target=params.conductance,
                inner_epsilon=params.inner_epsilon,
                balance_target=params.balance_target,
                mix_tol=params.mix_tol,
            )
            if isinstance(result, SparseCut):
                inside = np.asarray(sorted(result.cut), dtype=np.int64)
                mask = np.zeros(mem.size, dtype=bool)
                mask[inside] = True
                split_sets = [mem[mask], mem[~mask]]
            else:
                split_sets = [np.array([v]) for v in mem]
        subseeds = node_ss.spawn(len(split_sets))
        for part, sub in zip(split_sets, subseeds):
            nid = len(parent)
            parent.append(node)
            children.append([])
            members.append(np.asarray(part, dtype=np.int64))
            level.append(lev + 1)
            children[node].append(nid)
            stack.append((nid, sub))

    m_total = G.m
    for lev, vol in level_edge_volume.items():
        if vol > 2 * m_total:
            raise AssertionError(
                f"level {lev} game volume {vol} exceeds 2m = {2 * m_total}"
            )

    n_nodes = len(parent)
    parent_arr = np.asarray(parent, dtype=np.int64)
    level_arr = np.asarray(level, dtype=np.int64)

    # leaf DFS order gives every cluster a contiguous vertex interval
    order = np.empty(G.n, dtype=np.int64)
    node_lo = np.zeros(n_nodes, dtype=np.int64)
    node_hi = np.zeros(n_nodes, dtype=np.int64)
    leaf_of = np.empty(G.n, dtype=np.int64)
    clock = 0
    dfs = [(0, False)]
    while dfs:
        node, done = dfs.pop()
        if done:
            node_hi[node] = clock
            continue
        node_lo[node] = clock
        dfs.append((node, True))
        if children[node]:
            for ch in reversed(children[node]):
                dfs.append((ch, False))
        else:
            for v in members[node]:
                order[clock] = v
                leaf_of[v] = node
                clock += 1
    assert clock == G.n

    boundary = np.zeros(n_nodes)
    ind = np.zeros(G.n, dtype=bool)
    for node in range(1, n_nodes):
        mem = members[node]
        ind[:] = False
        ind[mem] = True
        boundary[node] = float(G.cap[ind[G.tail] != ind[G.head]].sum()) if G.m else 0.0

    return DecompositionTree(
        n=G.n,
        parent=parent_arr,
        children=children,
        members=members,
        boundary_capacity=boundary,
        level=level_arr,
        leaf_of=leaf_of,
        order=order,
        node_lo=node_lo,
        node_hi=node_hi,
    )


# ---------------------------------------------------------------------------
# empirical quality


def empirical_quality(
    R: CongestionApproximatorOp,
    G: Graph,
    oracle=None,
    trials: int = 64,
    seed: int = 0,
) -> float:
    """Measured approximation factor of ``R`` against an exact oracle.

    Samples zero-sum demands (random +-1 pairs and centred Gaussians),
    rescales so the lower side ``|R b| <= opt(b)`` holds with constant 1 on
    the sample, and returns the worst remaining overestimate of ``opt``.
    """
    if oracle is None:
        from .oracle import exact_opt_congestion

        oracle = lambda g, b: exact_opt_congestion(g, b).value
    rng = np.random.default_rng(seed)
    ratios = []
    for trial in range(trials):
        if trial % 2 == 0 and G.n >= 2:
            u, v = rng.choice(G.n, size=2, replace=False)
            b = np.zeros(G.n)
            b[u], b[v] = 1.0, -1.0
        else:
            b = rng.standard_normal(G.n)
            b -= b.mean()
        norm = float(np.abs(R.apply(b)).max()) if R.n_rows else 0.0
        opt = float(oracle(G, b))
        if norm <= 1e-12 or not math.isfinite(opt):
            continue
        ratios.append(opt / norm)
    if not ratios:
        return 1.0
    return float(max(ratios) / min(ratios))
