"""Approximate maximum flow on undirected graphs via congestion approximators.

The package builds cut-based congestion approximators by recursive graph
shrinking (capacity-preserving sparsification plus degree-1/2 elimination)
and a cut-matching hierarchy, then drives a smoothed potential descent that
returns a flow and a cut certificate within a factor ``1 + eps`` of each
other.  Exact oracles for small instances back every randomized stage.
"""

from .graph import (
    CutSet,
    FlowCutSolution,
    FlowReport,
    Graph,
    InfeasibleDemandError,
    ParseError,
    cut_capacity,
    cut_demand,
    generate,
    load_demands,
    load_graph,
    serialize_demands,
    serialize_graph,
    validate_flow,
)

__version__ = "0.1.0"
