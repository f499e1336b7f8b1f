"""Iterative graph processing on MapReduce, map-side-join MapReduce and BSP engines."""

from .engines import ENGINES, RunResult, bsp_run, mr2_run, mr_run, run_engine
from .graph import (
    Edge,
    Graph,
    GraphStats,
    generate_power_law_graph,
    graph_stats,
    hash_partition,
    load_edge_list,
    load_seed_labels,
)
from .programs import INFINITY, RipProgram, SsspProgram, VertexState, sequential_oracle

__version__ = "0.1.0"
