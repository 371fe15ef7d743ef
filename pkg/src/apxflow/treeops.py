"""Rooted spanning-tree bookkeeping shared by several stages.

A :class:`TreeIndex` wraps a spanning tree of a connected graph with the
derived structure that the rest of the package keeps needing: Euler-tour
intervals (so subtree sums become prefix sums), binary-lifting tables for
lowest common ancestors and bottleneck-capacity path queries, exact demand
routing along the tree, and true boundary capacities of all subtrees.
"""

from __future__ import annotations

import numpy as np

from .graph import Graph

__all__ = ["TreeIndex"]


class TreeIndex:
    """Derived structure for a spanning tree given by graph edge ids."""

    def __init__(self, G: Graph, tree_edges):
        tree_edges = np.asarray(sorted(int(e) for e in set(tree_edges)), dtype=np.int64)
        if tree_edges.size != G.n - 1:
            raise ValueError("a spanning tree needs exactly n - 1 edges")
        self.G = G
        self.tree_edges = tree_edges

        n = G.n
        # adjacency restricted to tree edges
        t_tail = G.tail[tree_edges]
        t_head = G.head[tree_edges]
        t_cap = G.cap[tree_edges]
        nbr_v = np.concatenate([t_head, t_tail])
        nbr_e = np.concatenate([tree_edges, tree_edges])
        nbr_c = np.concatenate([t_cap, t_cap])
        base = np.concatenate([t_tail, t_head])
        order = np.argsort(base, kind="stable")
        nbr_v, nbr_e, nbr_c, base = nbr_v[order], nbr_e[order], nbr_c[order], base[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, base + 1, 1)
        np.cumsum(indptr, out=indptr)

        parent = np.full(n, -1, dtype=np.int64)
        parent_edge = np.full(n, -1, dtype=np.int64)
        parent_cap = np.zeros(n)
        depth = np.zeros(n, dtype=np.int64)
        order_out = np.empty(n, dtype=np.int64)
        tour_l = np.empty(n, dtype=np.int64)
        tour_r = np.empty(n, dtype=np.int64)

        # iterative DFS from vertex 0
        visited = np.zeros(n, dtype=bool)
        stack = [(0, False)]
        visited[0] = True
        clock = 0
        count = 0
        while stack:
            v, done = stack.pop()
            if done:
                tour_r[v] = clock
                continue
            tour_l[v] = clock
            clock += 1
            order_out[count] = v
            count += 1
            stack.append((v, True))
            for i in range(indptr[v], indptr[v + 1]):
                w = int(nbr_v[i])
                if not visited[w]:
                    visited[w] = True
                    parent[w] = v
                    parent_edge[w] = nbr_e[i]
                    parent_cap[w] = nbr_c[i]
                    depth[w] = depth[v] + 1
                    stack.append((w, False))
        if count != n:
            raise ValueError("tree edges do not span the graph")

        self.parent = parent
        self.parent_edge = parent_edge
        self.parent_cap = parent_cap
        self.depth = depth
        self.dfs_order = order_out          # parents precede children
        self.tour_l = tour_l                # subtree of v = positions [l, r)
        self.tour_r = tour_r
        self.pos = tour_l                   # vertex -> tour position

        # binary lifting tables for LCA and path bottleneck capacity
        levels = max(1, int(np.ceil(np.log2(max(2, n)))))
        up = np.full((levels, n), 0, dtype=np.int64)
        upmin = np.full((levels, n), np.inf)
        up[0] = np.where(parent >= 0, parent, 0)
        upmin[0] = np.where(parent >= 0, parent_cap, np.inf)
        for k in range(1, levels):
            up[k] = up[k - 1][up[k - 1]]
            upmin[k] = np.minimum(upmin[k - 1], upmin[k - 1][up[k - 1]])
        self._up = up
        self._upmin = upmin

    # -- queries ----------------------------------------------------------

    def bottleneck(self, u: int, v: int) -> float:
        """Minimum tree-edge capacity on the path between ``u`` and ``v``."""
        if u == v:
            return np.inf
        up, upmin, depth = self._up, self._upmin, self.depth
        best = np.inf
        du, dv = int(depth[u]), int(depth[v])
        if du < dv:
            u, v = v, u
            du, dv = dv, du
        diff = du - dv
        k = 0
        while diff:
            if diff & 1:
                best = min(best, upmin[k][u])
                u = up[k][u]
            diff >>= 1
            k += 1
        if u == v:
            return best
        for k in range(up.shape[0] - 1, -1, -1):
            if up[k][u] != up[k][v]:
                best = min(best, upmin[k][u], upmin[k][v])
                u, v = up[k][u], up[k][v]
        return min(best, upmin[0][u], upmin[0][v])

    def bottlenecks(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        return np.array([self.bottleneck(int(u), int(v)) for u, v in zip(us, vs)])

    def lca(self, u: int, v: int) -> int:
        up, depth = self._up, self.depth
        du, dv = int(depth[u]), int(depth[v])
        if du < dv:
            u, v = v, u
            du, dv = dv, du
        diff = du - dv
        k = 0
        while diff:
            if diff & 1:
                u = up[k][u]
            diff >>= 1
            k += 1
        if u == v:
            return int(u)
        for k in range(up.shape[0] - 1, -1, -1):
            if up[k][u] != up[k][v]:
                u, v = up[k][u], up[k][v]
        return int(up[0][u])

    def subtree_sums(self, values: np.ndarray) -> np.ndarray:
        """For every vertex, the sum of ``values`` over its subtree."""
        permuted = values[self.dfs_order]
        pref = np.concatenate([[0.0], np.cumsum(permuted)])
        return pref[self.tour_r] - pref[self.tour_l]

    def route(self, b: np.ndarray) -> np.ndarray:
        """Exact flow routing demand ``b`` using only tree edges.

        Edge ``parent_edge[v]`` carries the whole surplus of v's subtree;
        signs follow the graph's fixed edge orientation.  Returns a
        length-``m`` flow vector supported on the tree edges.
        """
        carry = self.subtree_sums(np.asarray(b, dtype=np.float64))
        f = np.zeros(self.G.m)
        has_parent = self.parent >= 0
        vs = np.flatnonzero(has_parent)
        eids = self.parent_edge[vs]
        # +carry if the edge is oriented child -> parent
        sign = np.where(self.G.tail[eids] == vs, 1.0, -1.0)
        f[eids] = sign * carry[vs]
        return f

    def route_congestion(self, b: np.ndarray) -> float:
        f = self.route(b)
        if self.G.m == 0:
            return 0.0
        return float(np.max(np.abs(f) / self.G.cap))

    def subtree_boundary_caps(self) -> np.ndarray:
        """True graph boundary capacity ``u_G(subtree(v))`` for every v.

        Each graph edge (a, b) contributes its capacity to exactly the
        subtrees lying strictly on the tree path between a and b, which is
        the classic difference-on-tree trick.
        """
        G = self.G
        diff = np.zeros(G.n)
        np.add.at(diff, G.tail, G.cap)
        np.add.at(diff, G.head, G.cap)
        for a, bb, c in zip(G.tail, G.head, G.cap):
            diff[self.lca(int(a), int(bb))] -= 2.0 * float(c)
        return self.subtree_sums(diff)
