"""Plumbing shared by the engines: run bookkeeping, partitioning, DFS lifecycle."""

from __future__ import annotations

import contextlib
import os
import shutil
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ..cluster import CostModel, SimulatedDfs
from ..errors import ConfigError, EngineFault
from ..graph import Graph, hash_partition
from ..metrics import IterationMetrics, RunMetrics, Stopwatch
from ..programs import StateTable, VertexProgram
from ..records import MessageBatch, VertexBatch, fits_packed_key, packed_key

DFS_ROOT_ENV = "ITERGRAPH_DFS_ROOT"
DENSE_SPAN = 64


@dataclass
class RunResult:
    states: StateTable
    metrics: RunMetrics
    supersteps: list = field(default_factory=list)


def check_run_args(graph: Graph, program: VertexProgram, iterations, workers):
    if iterations < 1:
        raise ConfigError("iterations must be at least 1")
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    if graph.num_nodes == 0:
        raise ConfigError("graph has no vertices")
    program.prepare(graph)


def partition_graph(graph: Graph, program: VertexProgram, num_partitions) -> list[VertexBatch]:
    """Full vertex records (initial state + adjacency) per hash partition, sorted by id."""
    flags, values = program.init_batch(graph.ids)
    full = VertexBatch(graph.ids, flags, values, graph.indptr, graph.targets, graph.weights)
    part = hash_partition(graph.ids, num_partitions)
    return [full.take(part == p) for p in range(num_partitions)]


def message_rows(ids, dst, where):
    """Row of each destination in ``dst`` within the sorted ``ids``; faults on strangers."""
    if len(dst) == 0:
        return np.empty(0, dtype=np.int64)
    if len(ids) and int(ids[-1]) - int(ids[0]) < DENSE_SPAN * len(ids) + 1024:
        # compact id range (hash partitions are): a direct table beats binary search
        lo = int(ids[0])
        table = np.full(int(ids[-1]) - lo + 1, -1, dtype=np.int64)
        table[ids - lo] = np.arange(len(ids))
        off = dst - lo
        inside = (off >= 0) & (off < len(table))
        rows = np.full(len(dst), -1, dtype=np.int64)
        rows[inside] = table[off[inside]]
        bad = rows < 0
    else:
        rows = np.searchsorted(ids, dst)
        bad = rows >= len(ids)
        bad[~bad] = ids[rows[~bad]] != dst[~bad]
    if bad.any():
        v = int(dst[np.flatnonzero(bad)[0]])
        raise EngineFault(f"{where}: message for unknown vertex {v}")
    return rows


def merge_sorted_messages(batches, program: VertexProgram, names=None) -> MessageBatch:
    """Merge runs in canonical order into one batch in canonical order.

    With ``names`` (one per run) every run is checked first, and a run out of
    order raises :class:`EngineFault` naming it.
    """
    merged = MessageBatch.concat(batches, program.payload_width, program.payload_dtype)
    if len(merged) < 2:
        return merged
    if not fits_packed_key(merged.dst, merged.src):
        for name, run in zip(names or (), batches):
            if not run.is_sorted():
                raise EngineFault(f"unsorted message run in {name}")
        return merged.sorted(runs=True)
    # one key serves both the check and the merge
    key = packed_key(merged.dst, merged.src)
    drops = np.flatnonzero(key[1:] < key[:-1]) + 1
    if names is not None and len(drops):
        starts = np.cumsum([len(b) for b in batches])
        inside = drops[~np.isin(drops, starts)]
        if len(inside):
            run = int(np.searchsorted(starts, inside[0], side="right"))
            raise EngineFault(f"unsorted message run in {names[run]}")
    if len(drops) == 0:
        return merged
    return merged.take(np.argsort(key, kind="stable"))


def iteration_dir(run, k):
    return f"{run}/{k:04d}"


@contextlib.contextmanager
def dfs_session(dfs, cost_model, keep_files):
    """Yield a DFS, creating (and afterwards deleting) a temporary root if needed."""
    if dfs is not None:
        yield dfs
        return
    root = os.environ.get(DFS_ROOT_ENV) or None
    if root:
        os.makedirs(root, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix="itergraph-dfs-", dir=root)
    try:
        yield SimulatedDfs(tmp, cost_model or CostModel())
    finally:
        if not keep_files:
            shutil.rmtree(tmp, ignore_errors=True)


class IterationRecorder:
    """Builds IterationMetrics rows from ledgers and DFS counter deltas."""

    def __init__(self, metrics: RunMetrics, dfs=None):
        self.metrics = metrics
        self.dfs = dfs
        self.clock = Stopwatch()
        self._total = Stopwatch()
        self._dfs_mark = dfs.counters() if dfs is not None else (0, 0)
        self._pending = IterationMetrics(iteration=0)

    def add(self, ledger):
        self._pending.msg_count += ledger.msg_count
        self._pending.msg_bytes += ledger.msg_bytes
        self._pending.structure_bytes += ledger.structure_bytes

    def close_iteration(self, active_vertices):
        row = self._pending
        row.wall_ms = self.clock.lap_ms()
        row.active_vertices = int(active_vertices)
        if self.dfs is not None:
            r, w = self.dfs.counters()
            row.dfs_read_bytes = r - self._dfs_mark[0]
            row.dfs_write_bytes = w - self._dfs_mark[1]
            self._dfs_mark = (r, w)
        self.metrics.iterations.append(row)
        self._pending = IterationMetrics(iteration=len(self.metrics.iterations))
        return row

    def finish(self):
        self.metrics.total_wall_ms = self._total.elapsed_ms()
        return self.metrics


ENGINES = {}


def register(name):
    def wrap(fn):
        ENGINES[name] = fn
        return fn
    return wrap


def run_engine(name, graph, program, iterations, workers, **kwargs) -> RunResult:
    try:
        fn = ENGINES[name]
    except KeyError:
        raise ConfigError(f"unknown engine {name!r}") from None
    return fn(graph, program, iterations, workers, **kwargs)
