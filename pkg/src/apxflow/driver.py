"""End-to-end recursive solver: shrink, approximate, convert, descend.

``recursive_approx_max_flow`` realizes the recursive scheme: sparsify and
eliminate down to a much smaller graph, build a cut hierarchy for it (whose
own flow subproblems are recursive calls of this very routine), lift the
resulting approximator back, and hand it to the descent solver.  Small
instances short-circuit to a base-case solver.  ``max_flow_value`` wraps
the decision routine in the standard binary search over the flow value.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .graph import (
    CutSet,
    FlowCutSolution,
    Graph,
    InfeasibleDemandError,
    check_zero_sum,
    cut_capacity,
)
from .hierarchy import (
    CongestionApproximatorOp,
    HierarchyParams,
    IntervalCutRows,
    TreeApproximator,
    build_hierarchy,
    default_quality,
)
from .oracle import _feasibility
from .reduction import convert_composed, ultra_sparsify_and_reduce
from .solver import SolverParams, approximator_max_flow, extract_sweep_cut
from .sparsify import spanning_tree, stretch_profile
from .treeops import TreeIndex

__all__ = [
    "RecursionConfig",
    "RecursionStats",
    "max_flow_value",
    "recursive_approx_max_flow",
    "tree_approximator_for",
]


@dataclass
class RecursionConfig:
    """Knobs for the recursive pipeline.

    ``kappa_rule(n, m, stretch_sum)`` picks the sparsification parameter;
    the default targets a reduced size of ``m / max(rho, C/4 * log2(n)^2)``
    using the measured stretch sum, which keeps the per-level shrink
    promise ``|E'| <= m / rho`` and the total recursed volume geometric.
    """

    seed: int = 0
    rho: float = 8.0
    C: float = 1.0
    base_case_edges: int = 300
    inner_epsilon: float = 0.1
    max_depth: int = 20
    oversample: float = 4.0
    tree_strategy: str = "max_capacity"
    kappa_rule: object = None
    kappa_min: float = 1.5
    min_cluster: int = 8
    conductance: float = 0.2
    balance_target: float = 0.5
    round_cap: int | None = None
    mix_tol: float = 0.05
    base_case_method: str = "bisect"      # "bisect" or "tree"
    solver_max_iters: int = 20000
    alpha_cap: float = 4.0
    quality_scale: float = 2.0
    lift_constant: float = 1.0
    shrink_safety: float = 1.6
    resample_attempts: int = 3

    def __post_init__(self):
        if self.rho <= 2.0:
            raise ValueError("rho must exceed 2 for a geometric recursion")
        if self.base_case_edges < 1:
            raise ValueError("base_case_edges must be at least 1")
        if self.base_case_method not in ("bisect", "tree"):
            raise ValueError("base_case_method must be 'bisect' or 'tree'")

    def kappa_for(self, n: int, m: int, stretch_sum: float) -> float:
        if self.kappa_rule is not None:
            return max(self.kappa_min, float(self.kappa_rule(n, m, stretch_sum)))
        shrink = max(self.rho, 0.25 * self.C * math.log2(max(4, n)) ** 2)
        target_edges = max(1.0, m / (shrink * self.shrink_safety))
        kappa = 3.0 * self.oversample * max(stretch_sum, 1.0) / target_edges
        return max(self.kappa_min, kappa)

    def hierarchy_params(self) -> HierarchyParams:
        return HierarchyParams(
            round_cap=self.round_cap,
            min_cluster=self.min_cluster,
            balance_target=self.balance_target,
            conductance=self.conductance,
            inner_epsilon=self.inner_epsilon,
            mix_tol=self.mix_tol,
            quality_scale=self.quality_scale,
        )


@dataclass
class RecursionStats:
    """Accounting across the recursion tree."""

    instances: list = field(default_factory=list)
    per_depth_edges: dict = field(default_factory=dict)
    per_depth_count: dict = field(default_factory=dict)
    solver_iterations: int = 0
    resamples: int = 0
    shrink_violations: int = 0
    converged_all: bool = True
    wall_time: float = 0.0
    top_n: int = 0
    top_m: int = 0

    def record_instance(self, depth: int, G: Graph, kind: str) -> None:
        self.instances.append({"depth": depth, "n": G.n, "m": G.m, "kind": kind})
        self.per_depth_edges[depth] = self.per_depth_edges.get(depth, 0) + G.m
        self.per_depth_count[depth] = self.per_depth_count.get(depth, 0) + 1

    @property
    def max_depth_seen(self) -> int:
        return max(self.per_depth_edges, default=0)

    def total_recursed_edges(self) -> int:
        return sum(v for d, v in self.per_depth_edges.items() if d >= 1)

    def halving_ok(self) -> bool:
        for d in range(self.max_depth_seen):
            here = self.per_depth_edges.get(d, 0)
            below = self.per_depth_edges.get(d + 1, 0)
            if below > here / 2:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "per_depth_edges": {str(k): v for k, v in sorted(self.per_depth_edges.items())},
            "per_depth_count": {str(k): v for k, v in sorted(self.per_depth_count.items())},
            "instances": len(self.instances),
            "total_recursed_edges": self.total_recursed_edges(),
            "solver_iterations": self.solver_iterations,
            "resamples": self.resamples,
            "shrink_violations": self.shrink_violations,
            "halving_ok": self.halving_ok(),
            "converged_all": self.converged_all,
            "max_depth_seen": self.max_depth_seen,
            "wall_time": self.wall_time,
            "top_n": self.top_n,
            "top_m": self.top_m,
        }


# ---------------------------------------------------------------------------
# base-case solvers


class _TrivialTreeApproximator(CongestionApproximatorOp):
    """Singleton cuts plus the subtree cuts of a max-capacity spanning tree."""

    def __init__(self, G: Graph, quality: float):
        self.G = G
        idx = TreeIndex(G, spanning_tree(G, "max_capacity"))
        order = idx.dfs_order
        pos = np.empty(G.n, dtype=np.int64)
        pos[order] = np.arange(G.n)
        sub_caps = idx.subtree_boundary_caps()
        lo = [int(pos[v]) for v in range(G.n)]
        hi = [int(pos[v]) + 1 for v in range(G.n)]
        denom = list(G.degree_capacity)
        for v in range(G.n):
            if idx.parent[v] >= 0 and sub_caps[v] > 0:
                lo.append(int(idx.tour_l[v]))
                hi.append(int(idx.tour_r[v]))
                denom.append(float(sub_caps[v]))
        self.kernel = IntervalCutRows(order, np.asarray(lo), np.asarray(hi),
                                      np.asarray(denom))
        self.quality = float(quality)

    @property
    def n_rows(self) -> int:
        return self.kernel.n_rows

    def apply(self, b):
        return self.kernel.apply(np.asarray(b, dtype=np.float64))

    def transpose_apply(self, y):
        return self.kernel.transpose(np.asarray(y, dtype=np.float64))

    def row_cuts(self):
        for i in range(self.n_rows):
            yield CutSet(self.kernel.row_members(i))

    def row_cut(self, i):
        return CutSet(self.kernel.row_members(i))

    def op_count(self) -> int:
        return self.kernel.op_count()


def tree_approximator_for(G: Graph, quality_scale: float = 2.0):
    """The base-case approximator: all singleton cut rows plus the subtree
    cut rows of a max-capacity spanning tree, with true boundary capacities."""
    return _TrivialTreeApproximator(G, default_quality(G.n, quality_scale))


def _bisection_solve(G: Graph, b: np.ndarray, eps: float,
                     max_steps: int = 60) -> FlowCutSolution:
    """Base case: bisection on the congestion with an exact feasibility
    max-flow per probe, stopping when flow and cut agree within 1 + eps."""
    b = np.asarray(b, dtype=np.float64)
    check_zero_sum(G, b)
    if float(np.abs(b).max(initial=0.0)) <= 1e-15 or G.m == 0:
        return FlowCutSolution(np.zeros(G.m), CutSet([0]), 0.0, 0.0, 0.0)
    tree = TreeIndex(G, spanning_tree(G, "max_capacity"))
    hi = tree.route_congestion(b)
    flow = tree.route(b)
    singles = np.abs(b) / G.degree_capacity
    v0 = int(np.argmax(singles))
    best_cut, best_ratio = CutSet([v0]), float(singles[v0])
    lo = best_ratio
    for _ in range(max_steps):
        if hi <= best_ratio * (1.0 + eps) * (1.0 + 1e-12):
            break
        mid = math.sqrt(max(lo, 1e-300) * hi)
        feasible, f_mid, side = _feasibility(G, b, mid)
        if feasible:
            hi, flow = mid, f_mid
        else:
            lo = mid
            k = int(side.sum())
            if 0 < k < G.n:
                cand = CutSet(np.flatnonzero(side))
                ratio = abs(float(b[side].sum())) / cut_capacity(G, cand)
                if ratio > best_ratio:
                    best_cut, best_ratio = cand, ratio
    # exact conservation: push the tiny feasibility leftovers onto the tree
    flow = flow + tree.route(b - G.divergence(flow))
    cong = float(np.max(np.abs(flow) / G.cap))
    epsf = cong / best_ratio - 1.0 if best_ratio > 0 else math.inf
    return FlowCutSolution(flow, best_cut, cong, best_ratio, epsf,
                           converged=epsf <= eps * (1.0 + 1e-9))


# ---------------------------------------------------------------------------
# the recursion


def recursive_approx_max_flow(
    G: Graph,
    epsilon: float,
    b: np.ndarray,
    config: RecursionConfig | None = None,
    trace: list | None = None,
) -> tuple[FlowCutSolution, RecursionStats]:
    """Route ``b`` within ``1 + epsilon`` of optimal, recursively.

    Demands must sum to zero on every connected component (otherwise an
    :class:`InfeasibleDemandError` carrying the witness cut is raised).
    Statistics for every instance touched by the recursion are returned
    alongside the solution.
    """
    config = config or RecursionConfig()
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (G.n,):
        raise ValueError("demand length does not match vertex count")
    check_zero_sum(G, b)
    stats = RecursionStats(top_n=G.n, top_m=G.m)
    started = time.perf_counter()
    ss = np.random.SeedSequence(config.seed)
    sol = _solve(G, float(epsilon), b, config, stats, 0, ss, "top", trace)
    stats.wall_time = time.perf_counter() - started
    return sol, stats


def _solve(G, eps, b, cfg, stats, depth, ss, kind, trace=None) -> FlowCutSolution:
    stats.record_instance(depth, G, kind)
    if G.n_components > 1:
        return _solve_components(G, eps, b, cfg, stats, depth, ss, trace)
    return _solve_connected(G, eps, b, cfg, stats, depth, ss, trace)


def _solve_components(G, eps, b, cfg, stats, depth, ss, trace):
    flow = np.zeros(G.m)
    best_cut, best_ratio = None, -1.0
    worst_cong = 0.0
    converged = True
    for comp, sub_ss in zip(G.components(), ss.spawn(max(1, G.n_components))):
        sub, verts, eids = G.induced(comp)
        bsub = b[verts]
        if float(np.abs(bsub).max(initial=0.0)) <= 1e-15 or sub.m == 0:
            continue
        sol = _solve_connected(sub, eps, bsub, cfg, stats, depth, sub_ss, trace)
        flow[eids] = sol.flow
        worst_cong = max(worst_cong, sol.flow_congestion)
        converged = converged and sol.converged
        if sol.cut_ratio > best_ratio:
            best_ratio = sol.cut_ratio
            best_cut = CutSet(verts[list(sol.cut.vertices)])
    if best_cut is None:
        return FlowCutSolution(np.zeros(G.m), CutSet([0]), 0.0, 0.0, 0.0)
    epsf = worst_cong / best_ratio - 1.0 if best_ratio > 0 else math.inf
    return FlowCutSolution(flow, best_cut, worst_cong, best_ratio, epsf, converged)


def _solve_connected(G, eps, b, cfg, stats, depth, ss, trace=None):
    if G.m <= cfg.base_case_edges or depth >= cfg.max_depth:
        sol = _base_case(G, eps, b, cfg, stats, trace)
        stats.converged_all = stats.converged_all and sol.converged
        return sol

    # shrink: pick kappa from the measured stretch, resample on a miss
    _, _, _, stretch_sum = stretch_profile(G, cfg.tree_strategy,
                                           seed=int(ss.generate_state(1)[0]))
    kappa = cfg.kappa_for(G.n, G.m, stretch_sum)
    reduced = None
    for attempt, sub_ss in enumerate(ss.spawn(cfg.resample_attempts)):
        seed = int(sub_ss.generate_state(1)[0])
        cand, cand_map = ultra_sparsify_and_reduce(
            G, kappa, seed=seed, oversample=cfg.oversample,
            tree_strategy=cfg.tree_strategy,
        )
        if cand.m <= G.m / cfg.rho:
            reduced, cmap = cand, cand_map
            break
        stats.resamples += 1
    if reduced is None:
        stats.shrink_violations += 1
        reduced, cmap = cand, cand_map

    hier_ss, solver_ss = ss.spawn(2)
    spawner = {"ss": hier_ss}

    def game_solver(Gc, bc, ec):
        child = spawner["ss"].spawn(1)[0]
        return _solve(Gc, ec, bc, cfg, stats, depth + 1, child, "game")

    tree = build_hierarchy(
        reduced, game_solver, cfg.hierarchy_params(),
        seed=int(hier_ss.generate_state(1)[0]),
    )
    R_reduced = TreeApproximator(tree, reduced,
                                 quality=default_quality(reduced.n, cfg.quality_scale))
    R_G = convert_composed(cmap, R_reduced, G, lift_constant=cfg.lift_constant)

    params = SolverParams(epsilon=eps, max_iters=cfg.solver_max_iters,
                          alpha_cap=cfg.alpha_cap)
    sol = approximator_max_flow(G, R_G, params, b, trace=trace)
    stats.solver_iterations += getattr(sol, "iterations", 0)
    stats.converged_all = stats.converged_all and sol.converged
    return sol


def _base_case(G, eps, b, cfg, stats, trace=None) -> FlowCutSolution:
    if cfg.base_case_method == "tree":
        R = tree_approximator_for(G, cfg.quality_scale)
        params = SolverParams(epsilon=eps, max_iters=cfg.solver_max_iters,
                              alpha_cap=cfg.alpha_cap)
        sol = approximator_max_flow(G, R, params, b, trace=trace)
        stats.solver_iterations += getattr(sol, "iterations", 0)
        if sol.converged:
            return sol
        # fall through to the exact bisection when the descent stalls
    return _bisection_solve(G, b, eps)


# ---------------------------------------------------------------------------
# binary-search value wrapper


def max_flow_value(
    G: Graph,
    s: int,
    t: int,
    epsilon: float,
    config: RecursionConfig | None = None,
    stats: RecursionStats | None = None,
) -> tuple[float, FlowCutSolution]:
    """Approximate the s-t max flow value by binary search on the value.

    Invariant per step: ``lo`` is a value whose demand provably routes with
    congestion at most ``1 + epsilon`` (witness flow in hand) and ``hi``
    cannot route below congestion 1 (witness cut in hand).  Because
    congestion scales linearly in the routed value, every probe tightens
    both sides at once, so the loop usually exits after one solve; 60
    steps are allowed.  Warm bounds come from the best single-vertex cut
    and a spanning-tree path.
    """
    config = config or RecursionConfig()
    if not (0 <= s < G.n and 0 <= t < G.n):
        raise ValueError("s or t out of range")
    if s == t:
        raise ValueError("s and t must differ")
    if G.component_labels[s] != G.component_labels[t]:
        members = np.flatnonzero(G.component_labels == G.component_labels[s])
        cut = CutSet(members)
        sol = FlowCutSolution(np.zeros(G.m), cut, 0.0, math.inf, 0.0)
        return 0.0, sol

    comp = np.flatnonzero(G.component_labels == G.component_labels[s])
    sub, verts, eids = G.induced(comp)
    pos = {int(v): i for i, v in enumerate(verts)}
    ssub, tsub = pos[s], pos[t]

    idx = TreeIndex(sub, spanning_tree(sub, "max_capacity"))
    lo_warm = idx.bottleneck(ssub, tsub)         # routable along the tree path
    hi_warm = float(min(sub.degree_capacity[ssub], sub.degree_capacity[tsub]))

    unit = np.zeros(sub.n)
    unit[ssub], unit[tsub] = 1.0, -1.0
    q_lo, q_hi = 1.0 / hi_warm, 1.0 / lo_warm    # bounds on opt(unit demand)
    best = None
    agg_stats = stats if stats is not None else RecursionStats()
    cfg = config
    for step in range(60):
        if q_hi <= (1.0 + epsilon) * q_lo * (1.0 + 1e-12):
            break
        probe_cfg = cfg if step == 0 else _reseeded(cfg, step)
        sol, st = recursive_approx_max_flow(sub, epsilon, unit, probe_cfg)
        _merge_stats(agg_stats, st)
        if best is None or sol.flow_congestion < best.flow_congestion:
            best = sol
        q_hi = min(q_hi, sol.flow_congestion)
        q_lo = max(q_lo, sol.cut_ratio)
    value = 1.0 / q_hi
    if best is None:  # warm bounds alone were already within 1 + epsilon
        sol, st = recursive_approx_max_flow(sub, epsilon, unit, cfg)
        _merge_stats(agg_stats, st)
        best = sol
        q_hi = min(q_hi, best.flow_congestion)
        q_lo = max(q_lo, best.cut_ratio)
        value = 1.0 / q_hi

    flow = np.zeros(G.m)
    flow[eids] = best.flow * value
    cut = CutSet(verts[list(best.cut.vertices)])
    cong = best.flow_congestion * value
    ratio = best.cut_ratio * value
    epsf = cong / ratio - 1.0 if ratio > 0 else math.inf
    scaled = FlowCutSolution(flow, cut, cong, ratio, epsf, best.converged)
    return value, scaled


def _reseeded(cfg: RecursionConfig, step: int) -> RecursionConfig:
    import dataclasses

    return dataclasses.replace(cfg, seed=cfg.seed + 7919 * step)


def _merge_stats(into: RecursionStats, other: RecursionStats) -> None:
    into.instances.extend(other.instances)
    for d, v in other.per_depth_edges.items():
        into.per_depth_edges[d] = into.per_depth_edges.get(d, 0) + v
    for d, v in other.per_depth_count.items():
        into.per_depth_count[d] = into.per_depth_count.get(d, 0) + v
    into.solver_iterations += other.solver_iterations
    into.resamples += other.resamples
    into.shrink_violations += other.shrink_violations
    into.converged_all = into.converged_all and other.converged_all
    into.wall_time += other.wall_time
    into.top_n = max(into.top_n, other.top_n)
    into.top_m = max(into.top_m, other.top_m)
