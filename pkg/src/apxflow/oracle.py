"""Ground-truth solvers for desk-scale verification.

Everything here favours correctness over speed: a blocking-flow max flow on
the bidirected interpretation of an undirected graph, a bisection solver for
the exact minimum congestion of a demand, and an exhaustive minimum-ratio
cut search for tiny graphs.  None of it is called from the recursive
pipeline except as the base-case solver and in tests.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .graph import (
    CutSet,
    Graph,
    InfeasibleDemandError,
    check_zero_sum,
    demand_component_sums,
)

__all__ = [
    "OracleResult",
    "brute_force_min_ratio_cut",
    "exact_max_flow_st",
    "exact_opt_congestion",
]

#: maximum vertex count accepted by the exhaustive cut enumeration
BRUTE_FORCE_LIMIT = 20

#: fixed bisection depth for :func:`exact_opt_congestion`
BISECTION_STEPS = 60


@dataclass
class OracleResult:
    """Exact value with a witness flow and a witness cut."""

    value: float
    witness_flow: np.ndarray
    witness_cut: CutSet


class _Dinic:
    """Blocking-flow max flow over an explicit arc list.

    Arcs are stored in pairs; arc ``2i`` and ``2i + 1`` are each other's
    reverse.  An undirected edge is modelled by giving both arcs of a pair
    capacity ``u`` (net-flow semantics), a directed arc by giving the
    reverse capacity 0.
    """

    def __init__(self, n: int):
        self.n = n
        self.to: list[int] = []
        self.cap: list[float] = []
        self.head = [-1] * n  # per-vertex first arc
        self.nxt: list[int] = []

    def add_pair(self, u: int, v: int, cap_uv: float, cap_vu: float) -> int:
        a = len(self.to)
        self.to.append(v)
        self.cap.append(cap_uv)
        self.nxt.append(self.head[u])
        self.head[u] = a
        self.to.append(u)
        self.cap.append(cap_vu)
        self.nxt.append(self.head[v])
        self.head[v] = a + 1
        return a

    def _bfs(self, s: int, t: int, eps: float) -> bool:
        self.level = [-1] * self.n
        self.level[s] = 0
        q = deque([s])
        to, cap, nxt, level = self.to, self.cap, self.nxt, self.level
        while q:
            u = q.popleft()
            a = self.head[u]
            while a != -1:
                v = to[a]
                if cap[a] > eps and level[v] < 0:
                    level[v] = level[u] + 1
                    q.append(v)
                a = nxt[a]
        return self.level[t] >= 0

    def _dfs(self, s: int, t: int, eps: float) -> float:
        # iterative blocking-flow walk with current-arc pointers
        to, cap, nxt, level, it = self.to, self.cap, self.nxt, self.level, self.it
        total = 0.0
        while True:
            path: list[int] = []
            u = s
            while u != t:
                a = it[u]
                advanced = False
                while a != -1:
                    v = to[a]
                    if cap[a] > eps and level[v] == level[u] + 1:
                        path.append(a)
                        u = v
                        advanced = True
                        break
                    a = nxt[a]
                    it[u] = a
                if not advanced:
                    if not path:
                        return total
                    level[u] = -1  # dead end, retire the vertex
                    u = to[path[-1] ^ 1]
                    path.pop()
            push = min(cap[a] for a in path)
            for a in path:
                cap[a] -= push
                cap[a ^ 1] += push
            total += push
            # restart from s; current-arc pointers keep this near-linear
            u = s

    def max_flow(self, s: int, t: int, eps: float = 1e-12) -> float:
        flow = 0.0
        while self._bfs(s, t, eps):
            self.it = list(self.head)
            flow += self._dfs(s, t, eps)
        return flow

    def reachable(self, s: int, eps: float = 1e-12) -> np.ndarray:
        seen = np.zeros(self.n, dtype=bool)
        seen[s] = True
        q = deque([s])
        to, cap, nxt = self.to, self.cap, self.nxt
        while q:
            u = q.popleft()
            a = self.head[u]
            while a != -1:
                v = to[a]
                if cap[a] > eps and not seen[v]:
                    seen[v] = True
                    q.append(v)
                a = nxt[a]
        return seen


def exact_max_flow_st(G: Graph, s: int, t: int) -> OracleResult:
    """Exact max s-t flow on the bidirected interpretation of ``G``.

    Each undirected edge can carry up to its capacity in either direction
    (net-flow semantics).  The witness flow is signed against the fixed
    edge orientation; the witness cut is the residual-reachable side of
    the source.
    """
    if not (0 <= s < G.n and 0 <= t < G.n):
        raise ValueError("s or t out of range")
    if s == t:
        raise ValueError("s and t must differ")
    din = _Dinic(G.n)
    arcs = [din.add_pair(int(u), int(v), float(c), float(c))
            for u, v, c in zip(G.tail, G.head, G.cap)]
    value = din.max_flow(s, t)
    flow = np.array([G.cap[e] - din.cap[arcs[e]] for e in range(G.m)])
    seen = din.reachable(s)
    if seen.all():
        # t unreachable only through saturated arcs; with positive caps this
        # means s,t are disconnected and value is 0 with cut = component of s
        seen = G.component_labels == G.component_labels[s]
    cut = CutSet(np.flatnonzero(seen))
    return OracleResult(value, flow, cut)


def _feasibility(G: Graph, b: np.ndarray, t_scale: float):
    """Try to route ``b`` in ``G`` with capacities ``t_scale * u``.

    Returns ``(feasible, flow, source_side)`` where ``flow`` is per-edge
    signed and ``source_side`` is the residual-reachable original-vertex
    set (a witness cut when infeasible).
    """
    pos = np.flatnonzero(b > 0)
    neg = np.flatnonzero(b < 0)
    supply = float(b[pos].sum())
    din = _Dinic(G.n + 2)
    src, snk = G.n, G.n + 1
    arcs = [din.add_pair(int(u), int(v), t_scale * float(c), t_scale * float(c))
            for u, v, c in zip(G.tail, G.head, G.cap)]
    for v in pos:
        din.add_pair(src, int(v), float(b[v]), 0.0)
    for v in neg:
        din.add_pair(int(v), snk, float(-b[v]), 0.0)
    routed = din.max_flow(src, snk)
    feasible = routed >= supply - 1e-9 * max(1.0, supply)
    flow = np.array([t_scale * G.cap[e] - din.cap[arcs[e]] for e in range(G.m)])
    side = din.reachable(src)[: G.n]
    return feasible, flow, side


def exact_opt_congestion(G: Graph, b: np.ndarray) -> OracleResult:
    """Exact minimum congestion ``opt(b)`` by bisection on the congestion.

    Feasibility of routing ``b`` with capacities ``t * u`` is decided by a
    max flow on the super-source/super-sink augmentation; 60 bisection
    steps pin the value to far better than 1e-7 relative.  The witness cut
    comes from the residual of the last infeasible probe.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (G.n,):
        raise ValueError("demand length does not match vertex count")
    sums = demand_component_sums(G, b)
    bad = np.flatnonzero(np.abs(sums) > 1e-9)
    if bad.size:
        members = np.flatnonzero(G.component_labels == int(bad[0]))
        cut = CutSet(members) if members.size < G.n else CutSet([0])
        return OracleResult(math.inf, np.zeros(G.m), cut)
    total = float(np.abs(b).sum())
    if total <= 1e-15 or G.m == 0:
        return OracleResult(0.0, np.zeros(G.m), CutSet([0]))

    hi = G.n * total / (2.0 * float(G.cap.min()))
    feasible, flow_hi, _ = _feasibility(G, b, hi)
    if not feasible:  # cannot happen for zero-sum demands on components
        raise AssertionError("upper congestion bound was infeasible")
    lo = 0.0
    witness_cut = None
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if mid <= 0.0 or mid == lo or mid == hi:
            break
        feasible, flow, side = _feasibility(G, b, mid)
        if feasible:
            hi, flow_hi = mid, flow
        else:
            lo = mid
            k = int(side.sum())
            if 0 < k < G.n:
                witness_cut = CutSet(np.flatnonzero(side))
    if witness_cut is None:
        # opt was far below the first midpoint; probe just under the value
        for shrink in (1.0 - 1e-9, 0.5, 0.25):
            feasible, _, side = _feasibility(G, b, hi * shrink)
            k = int(side.sum())
            if not feasible and 0 < k < G.n:
                witness_cut = CutSet(np.flatnonzero(side))
                break
    if witness_cut is None:
        witness_cut = CutSet([0])
    return OracleResult(hi, flow_hi, witness_cut)


def brute_force_min_ratio_cut(G: Graph, b: np.ndarray) -> tuple[CutSet, float]:
    """Maximize ``|b(S)| / u(S)`` over every proper cut by enumeration.

    Only cuts containing vertex 0 are enumerated (the objective is
    complement-symmetric for zero-sum demands, and the lexicographic
    winner always contains vertex 0).  Ties go to the lexicographically
    smallest canonical cut.  Requires ``n <= 20``.
    """
    if G.n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force cut search limited to n <= {BRUTE_FORCE_LIMIT}")
    if G.n < 2:
        raise ValueError("need at least two vertices for a proper cut")
    b = np.asarray(b, dtype=np.float64)
    n, m = G.n, G.m
    k = n - 1
    best_ratio = -1.0
    best_cut: CutSet | None = None
    chunk = 1 << 16
    masks_total = 1 << k
    for start in range(0, masks_total, chunk):
        stop = min(start + chunk, masks_total)
        codes = np.arange(start, stop, dtype=np.uint64)
        # column j = membership of vertex j + 1; vertex 0 always in S
        members = ((codes[:, None] >> np.arange(k, dtype=np.uint64)) & 1).astype(bool)
        in_s = np.concatenate([np.ones((codes.size, 1), dtype=bool), members], axis=1)
        if stop == masks_total:
            in_s = in_s[:-1]  # drop the full vertex set
            codes = codes[:-1]
        if codes.size == 0:
            continue
        b_s = np.abs(in_s @ b)
        if m:
            crossing = in_s[:, G.tail] != in_s[:, G.head]
            u_s = crossing @ G.cap
        else:
            u_s = np.zeros(codes.size)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(u_s > 0, b_s / np.where(u_s > 0, u_s, 1.0),
                             np.where(b_s > 1e-12, np.inf, 0.0))
        top = float(ratio.max()) if ratio.size else 0.0
        if top < best_ratio * (1.0 - 1e-12):
            continue
        near = np.flatnonzero(ratio >= top * (1.0 - 1e-12)) if top > 0 else \
            np.flatnonzero(ratio == top)
        for i in near:
            cut = CutSet(np.flatnonzero(in_s[i]))
            if top > best_ratio * (1.0 + 1e-12) or best_cut is None:
                best_ratio, best_cut = top, cut
            elif top >= best_ratio * (1.0 - 1e-12) and cut < best_cut:
                best_cut = cut
    if best_ratio <= 1e-12:
        # zero demand: every cut scores 0; return the lexicographic minimum
        return CutSet([0]), 0.0
    return best_cut, best_ratio
