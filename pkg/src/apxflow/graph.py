"""Undirected capacitated multigraphs: core types, text I/O, generators.

Conventions used throughout the package:

* vertices are 0-based ints ``0 .. n-1`` (the text format below is 1-based),
* every edge carries a fixed orientation ``tail -> head`` taken from input
  order; a flow value is positive when it runs along that orientation and
  all congestion formulas use ``|f_e| / u_e``,
* demand vectors and flows are plain float ndarrays (length n resp. m),
* all graph objects are immutable after construction and safe to share
  between threads.

The text format is DIMACS-flavoured::

    c comment
    p max <n> <m>
    a <u> <v> <capacity>     (1-based endpoints, decimal capacity)

and demand files consist of lines ``d <v> <value>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "CutSet",
    "FlowCutSolution",
    "FlowReport",
    "Graph",
    "InfeasibleDemandError",
    "ParseError",
    "cut_capacity",
    "cut_demand",
    "demand_component_sums",
    "check_zero_sum",
    "generate",
    "load_demands",
    "load_graph",
    "serialize_demands",
    "serialize_graph",
    "validate_flow",
]

#: absolute tolerance for "demands sum to zero" checks
ZERO_SUM_TOL = 1e-9


class ParseError(ValueError):
    """Malformed instance text; carries the offending 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class InfeasibleDemandError(ValueError):
    """A demand cannot be routed; ``cut`` witnesses the disconnection."""

    def __init__(self, message: str, cut: "CutSet | None" = None):
        super().__init__(message)
        self.cut = cut


class CutSet:
    """A set of vertices defining a cut, canonically a sorted tuple of ids.

    Instances order lexicographically on the canonical tuple, which is the
    tie-break rule used by the exhaustive cut searches.
    """

    __slots__ = ("vertices",)

    def __init__(self, vertices: Iterable[int]):
        vs = tuple(sorted({int(v) for v in vertices}))
        if not vs:
            raise ValueError("cut set must be non-empty")
        if vs[0] < 0:
            raise ValueError("vertex ids must be non-negative")
        self.vertices = vs

    def indicator(self, n: int) -> np.ndarray:
        if self.vertices[-1] >= n:
            raise ValueError(f"vertex {self.vertices[-1]} out of range for n={n}")
        ind = np.zeros(n, dtype=bool)
        ind[list(self.vertices)] = True
        return ind

    def complement(self, n: int) -> "CutSet":
        return CutSet(set(range(n)) - set(self.vertices))

    def __len__(self) -> int:
        return len(self.vertices)

    def __iter__(self) -> Iterator[int]:
        return iter(self.vertices)

    def __contains__(self, v: int) -> bool:
        return v in set(self.vertices) if len(self.vertices) > 8 else v in self.vertices

    def __eq__(self, other) -> bool:
        return isinstance(other, CutSet) and self.vertices == other.vertices

    def __lt__(self, other: "CutSet") -> bool:
        return self.vertices < other.vertices

    def __hash__(self) -> int:
        return hash(self.vertices)

    def __repr__(self) -> str:
        return f"CutSet({list(self.vertices)})"


class Graph:
    """Immutable undirected multigraph with strictly positive capacities.

    Parallel edges are kept distinct; self-loops are rejected.  The arrays
    ``tail``, ``head`` and ``cap`` all have length ``m`` and are read-only.
    """

    def __init__(self, n: int, tail, head, cap):
        if n < 1:
            raise ValueError("graph needs at least one vertex")
        tail = np.ascontiguousarray(tail, dtype=np.int64)
        head = np.ascontiguousarray(head, dtype=np.int64)
        cap = np.ascontiguousarray(cap, dtype=np.float64)
        if not (tail.shape == head.shape == cap.shape) or tail.ndim != 1:
            raise ValueError("tail/head/cap must be 1-d arrays of equal length")
        if tail.size:
            if tail.min() < 0 or head.min() < 0 or max(tail.max(), head.max()) >= n:
                raise ValueError("edge endpoint out of range")
            if np.any(tail == head):
                bad = int(np.flatnonzero(tail == head)[0])
                raise ValueError(f"self-loop at edge {bad}")
            if not np.all(np.isfinite(cap)) or cap.min() <= 0.0:
                raise ValueError("capacities must be strictly positive and finite")
        for arr in (tail, head, cap):
            arr.setflags(write=False)
        self.n = int(n)
        self.tail = tail
        self.head = head
        self.cap = cap

    @property
    def m(self) -> int:
        return self.tail.size

    @cached_property
    def adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR-style incidence index ``(indptr, edge_ids, signs)``.

        ``signs`` is +1 where the vertex is the tail of the edge, -1 where
        it is the head.
        """
        return self._build_adjacency()

    def _build_adjacency(self):
        verts = np.concatenate([self.tail, self.head])
        eids = np.concatenate([np.arange(self.m), np.arange(self.m)])
        signs = np.concatenate([np.ones(self.m, dtype=np.int8),
                                -np.ones(self.m, dtype=np.int8)])
        order = np.lexsort((eids, verts))
        verts, eids, signs = verts[order], eids[order], signs[order]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, verts + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, eids, signs

    def audit_adjacency(self) -> bool:
        """Rebuild the incidence index from the edge list and compare."""
        fresh = self._build_adjacency()
        cached = self.adjacency
        return all(np.array_equal(a, b) for a, b in zip(fresh, cached))

    def incident(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        indptr, eids, signs = self.adjacency
        return eids[indptr[v]:indptr[v + 1]], signs[indptr[v]:indptr[v + 1]]

    @cached_property
    def degree_capacity(self) -> np.ndarray:
        """Per-vertex total incident capacity (parallel edges counted)."""
        d = np.bincount(self.tail, weights=self.cap, minlength=self.n)
        d += np.bincount(self.head, weights=self.cap, minlength=self.n)
        d.setflags(write=False)
        return d

    @cached_property
    def degree(self) -> np.ndarray:
        d = np.bincount(self.tail, minlength=self.n) + np.bincount(self.head, minlength=self.n)
        d.setflags(write=False)
        return d

    @cached_property
    def component_labels(self) -> np.ndarray:
        if self.m == 0:
            lab = np.arange(self.n)
        else:
            mat = coo_matrix(
                (np.ones(self.m), (self.tail, self.head)), shape=(self.n, self.n)
            )
            _, lab = connected_components(mat, directed=False)
        lab.setflags(write=False)
        return lab

    @property
    def n_components(self) -> int:
        return int(self.component_labels.max()) + 1 if self.n else 0

    def components(self) -> list[np.ndarray]:
        lab = self.component_labels
        return [np.flatnonzero(lab == c) for c in range(self.n_components)]

    def is_connected(self) -> bool:
        return self.n_components == 1

    def divergence(self, f: np.ndarray) -> np.ndarray:
        """Net outflow per vertex; a flow ``f`` meets demands ``b`` iff
        ``divergence(f) == b``."""
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (self.m,):
            raise ValueError("flow length does not match edge count")
        out = np.bincount(self.tail, weights=f, minlength=self.n)
        out -= np.bincount(self.head, weights=f, minlength=self.n)
        return out

    def potential_drop(self, phi: np.ndarray) -> np.ndarray:
        """Per-edge difference ``phi[tail] - phi[head]`` (adjoint of divergence)."""
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (self.n,):
            raise ValueError("potential length does not match vertex count")
        return phi[self.tail] - phi[self.head]

    def induced(self, vertices) -> tuple["Graph", np.ndarray, np.ndarray]:
        """Subgraph on ``vertices``; returns ``(sub, vertex_ids, edge_ids)``.

        ``vertex_ids[i]`` is the original id of sub-vertex ``i`` and
        ``edge_ids[j]`` the original id of sub-edge ``j``.
        """
        vertices = np.asarray(sorted(set(int(v) for v in vertices)), dtype=np.int64)
        pos = -np.ones(self.n, dtype=np.int64)
        pos[vertices] = np.arange(vertices.size)
        keep = (pos[self.tail] >= 0) & (pos[self.head] >= 0)
        eids = np.flatnonzero(keep)
        sub = Graph(vertices.size, pos[self.tail[eids]], pos[self.head[eids]],
                    self.cap[eids])
        return sub, vertices, eids

    def with_capacities(self, cap) -> "Graph":
        return Graph(self.n, self.tail, self.head, cap)

    def serialize(self) -> str:
        return serialize_graph(self)

    def structurally_equal(self, other: "Graph") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.tail, other.tail)
            and np.array_equal(self.head, other.head)
            and np.array_equal(self.cap, other.cap)
        )

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.m})"


@dataclass
class FlowReport:
    """Result of :func:`validate_flow`; purely informational."""

    max_conservation_residual: float
    congestion: float


@dataclass
class FlowCutSolution:
    """Paired flow and cut certificate.

    ``cut_ratio = |b(S)| / u(S)`` is a lower bound on the optimum congestion
    and ``flow_congestion`` an upper bound; when ``converged`` the two are
    within a factor ``1 + epsilon_achieved``.
    """

    flow: np.ndarray
    cut: CutSet
    flow_congestion: float
    cut_ratio: float
    epsilon_achieved: float
    converged: bool = True


def cut_capacity(G: Graph, S) -> float:
    """Total capacity of edges with exactly one endpoint in ``S``."""
    if not isinstance(S, CutSet):
        S = CutSet(S)
    ind = S.indicator(G.n)
    k = int(ind.sum())
    if k == 0 or k == G.n:
        raise ValueError("cut must be a proper non-empty subset of the vertices")
    crossing = ind[G.tail] != ind[G.head]
    return float(G.cap[crossing].sum())


def cut_demand(b: np.ndarray, S) -> float:
    """Total demand of the vertices in ``S``."""
    if not isinstance(S, CutSet):
        S = CutSet(S)
    b = np.asarray(b, dtype=np.float64)
    return float(b[list(S.vertices)].sum())


def validate_flow(G: Graph, f: np.ndarray, b: np.ndarray) -> FlowReport:
    """Report the worst conservation residual and the congestion of ``f``."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (G.n,):
        raise ValueError("demand length does not match vertex count")
    resid = np.abs(b - G.divergence(f))
    f = np.asarray(f, dtype=np.float64)
    congestion = 0.0
    if G.m:
        congestion = float(np.max(np.abs(f) / G.cap))
    return FlowReport(float(resid.max()) if resid.size else 0.0, congestion)


def demand_component_sums(G: Graph, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return np.bincount(G.component_labels, weights=b, minlength=G.n_components)


def check_zero_sum(G: Graph, b: np.ndarray, tol: float = ZERO_SUM_TOL) -> None:
    """Raise :class:`InfeasibleDemandError` if a component's demand is unbalanced."""
    sums = demand_component_sums(G, b)
    bad = np.flatnonzero(np.abs(sums) > tol)
    if bad.size:
        comp = int(bad[0])
        members = np.flatnonzero(G.component_labels == comp)
        cut = None
        if members.size < G.n:
            cut = CutSet(members)
        raise InfeasibleDemandError(
            f"component {comp} has net demand {sums[comp]:.3g}", cut=cut
        )


# ---------------------------------------------------------------------------
# text format


def load_graph(text: str) -> Graph:
    """Parse a DIMACS-style max-flow document into a :class:`Graph`."""
    n = m_declared = None
    tails: list[int] = []
    heads: list[int] = []
    caps: list[float] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        parts = line.split()
        if parts[0] == "p":
            if n is not None:
                raise ParseError("duplicate problem line", line_no)
            if len(parts) != 4 or parts[1] != "max":
                raise ParseError("problem line must read 'p max <n> <m>'", line_no)
            try:
                n, m_declared = int(parts[2]), int(parts[3])
            except ValueError:
                raise ParseError("problem line counts must be integers", line_no)
            if n < 1 or m_declared < 0:
                raise ParseError("problem line counts out of range", line_no)
        elif parts[0] == "a":
            if n is None:
                raise ParseError("edge before problem line", line_no)
            if len(parts) != 4:
                raise ParseError("edge line must read 'a <u> <v> <cap>'", line_no)
            try:
                u, v, c = int(parts[1]), int(parts[2]), float(parts[3])
            except ValueError:
                raise ParseError("malformed edge fields", line_no)
            if not (1 <= u <= n and 1 <= v <= n):
                raise ParseError(f"vertex id out of range 1..{n}", line_no)
            if u == v:
                raise ParseError("self-loops are not allowed", line_no)
            if not np.isfinite(c) or c <= 0.0:
                raise ParseError("capacity must be strictly positive", line_no)
            tails.append(u - 1)
            heads.append(v - 1)
            caps.append(c)
        else:
            raise ParseError(f"unknown line type {parts[0]!r}", line_no)
    if n is None:
        raise ParseError("missing problem line")
    if m_declared is not None and m_declared != len(tails):
        raise ParseError(
            f"problem line declares {m_declared} edges, found {len(tails)}"
        )
    return Graph(n, tails, heads, caps)


def serialize_graph(G: Graph) -> str:
    lines = [f"p max {G.n} {G.m}"]
    for t, h, c in zip(G.tail, G.head, G.cap):
        lines.append(f"a {t + 1} {h + 1} {float(c)!r}")
    return "\n".join(lines) + "\n"


def load_demands(text: str, n: int) -> np.ndarray:
    """Parse ``d <v> <value>`` lines into a length-``n`` demand vector."""
    b = np.zeros(n)
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        parts = line.split()
        if parts[0] != "d" or len(parts) != 3:
            raise ParseError("demand line must read 'd <v> <value>'", line_no)
        try:
            v, val = int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError("malformed demand fields", line_no)
        if not (1 <= v <= n):
            raise ParseError(f"vertex id out of range 1..{n}", line_no)
        b[v - 1] += val
    return b


def serialize_demands(b: np.ndarray) -> str:
    lines = [f"d {v + 1} {float(val)!r}" for v, val in enumerate(b) if val != 0.0]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# generators


def generate(family: str, params: dict | None = None, seed: int = 0, **kw) -> Graph:
    """Deterministic instance generator.

    Families: ``path`` (n, caps), ``grid2d`` (rows, cols, cap),
    ``random_gnm`` (n, m, cap_range), ``expander_like`` (n, degree,
    cap_range), ``tree_plus_noise`` (n, extra, cap_range).  Output is always
    connected; random families resample or augment until they are.
    """
    params = dict(params or {})
    params.update(kw)
    rng = np.random.default_rng(seed)
    try:
        builder = _FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown family {family!r}; choose from {sorted(_FAMILIES)}")
    G = builder(params, rng)
    if not G.is_connected():
        raise AssertionError(f"generator {family} produced a disconnected graph")
    return G


def _caps_from_range(rng, size, cap_range):
    lo, hi = cap_range
    if not (0 < lo <= hi):
        raise ValueError("cap_range must satisfy 0 < lo <= hi")
    if lo == hi:
        return np.full(size, float(lo))
    return rng.uniform(lo, hi, size=size)


def _gen_path(params, rng):
    n = int(params.get("n", 0))
    if n < 2:
        raise ValueError("path needs n >= 2")
    caps = params.get("caps")
    if caps is None:
        caps = np.ones(n - 1)
    else:
        caps = np.asarray(caps, dtype=np.float64)
        if caps.size != n - 1:
            raise ValueError("path caps must have length n - 1")
    return Graph(n, np.arange(n - 1), np.arange(1, n), caps)


def _gen_grid2d(params, rng):
    rows = int(params.get("rows", 0))
    cols = int(params.get("cols", rows))
    if rows < 2 or cols < 2:
        raise ValueError("grid2d needs rows, cols >= 2")
    cap = float(params.get("cap", 1.0))
    if cap <= 0:
        raise ValueError("grid cap must be positive")
    vid = lambda r, c: r * cols + c
    tails, heads = [], []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                tails.append(vid(r, c))
                heads.append(vid(r, c + 1))
            if r + 1 < rows:
                tails.append(vid(r, c))
                heads.append(vid(r + 1, c))
    return Graph(rows * cols, tails, heads, np.full(len(tails), cap))


def _gen_random_gnm(params, rng):
    n = int(params.get("n", 0))
    m = int(params.get("m", 0))
    if n < 2 or m < n - 1:
        raise ValueError("random_gnm needs n >= 2 and m >= n - 1")
    cap_range = params.get("cap_range", (1.0, 1.0))
    for _ in range(64):
        tails = rng.integers(0, n, size=m)
        heads = rng.integers(0, n - 1, size=m)
        heads = np.where(heads >= tails, heads + 1, heads)  # no self-loops
        G = Graph(n, tails, heads, _caps_from_range(rng, m, cap_range))
        if G.is_connected():
            return G
    # stubborn draw: keep the edges but rewire one per extra component
    lab = G.component_labels
    tails, heads = list(G.tail), list(G.head)
    reps = [int(np.flatnonzero(lab == c)[0]) for c in range(G.n_components)]
    for i in range(1, len(reps)):
        tails[i - 1], heads[i - 1] = reps[0], reps[i]
    return Graph(n, tails, heads, _caps_from_range(rng, m, cap_range))


def _gen_expander_like(params, rng):
    n = int(params.get("n", 0))
    if n < 3:
        raise ValueError("expander_like needs n >= 3")
    degree = int(params.get("degree", 3))
    if degree < 2:
        raise ValueError("expander_like needs degree >= 2")
    cap_range = params.get("cap_range", (1.0, 1.0))
    tails, heads = [], []
    # a random ring guarantees connectivity, random matchings add expansion
    ring = rng.permutation(n)
    for i in range(n):
        tails.append(int(ring[i]))
        heads.append(int(ring[(i + 1) % n]))
    for _ in range(degree - 2):
        perm = rng.permutation(n)
        for i in range(0, n - 1, 2):
            tails.append(int(perm[i]))
            heads.append(int(perm[i + 1]))
    return Graph(n, tails, heads, _caps_from_range(rng, len(tails), cap_range))


def _gen_tree_plus_noise(params, rng):
    n = int(params.get("n", 0))
    if n < 2:
        raise ValueError("tree_plus_noise needs n >= 2")
    extra = int(params.get("extra", max(1, n // 8)))
    cap_range = params.get("cap_range", (1.0, 1.0))
    tails = list(rng.integers(0, np.arange(1, n)))  # random attachment tree
    heads = list(range(1, n))
    for _ in range(extra):
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n - 1))
        if v >= u:
            v += 1
        tails.append(u)
        heads.append(v)
    return Graph(n, tails, heads, _caps_from_range(rng, len(tails), cap_range))


_FAMILIES = {
    "path": _gen_path,
    "grid2d": _gen_grid2d,
    "random_gnm": _gen_random_gnm,
    "expander_like": _gen_expander_like,
    "tree_plus_noise": _gen_tree_plus_noise,
}
