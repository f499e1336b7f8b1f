"""MapReduce with a map-side join.

The graph structure and the vertex state live in two identically partitioned,
id-sorted file sets.  Mappers merge-join a structure file with the matching
state file and emit only messages; reducers merge the incoming messages with
the previous state file and write only the new state.  Structure files are
written once per run and never shuffled.

DFS layout per run::

    <run>/structure/structure-<p>.bin    adjacency, written once
    <run>/0000/state-<p>.bin             initial state
    <run>/<k>/spill-m<m>-<r>.bin         mapper m's message run for reducer r
    <run>/<k>/state-<r>.bin              state after iteration k
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass

import numpy as np

from ..cluster import CostModel, TransferLedger, WorkerPool, partition_messages
from ..errors import EngineFault
from ..metrics import RunMetrics
from ..programs import StateTable
from ..records import FLAG_ACTIVE, MessageBatch, VertexBatch, decode_blocks
from .common import (
    IterationRecorder,
    RunResult,
    check_run_args,
    dfs_session,
    iteration_dir,
    merge_sorted_messages,
    message_rows,
    partition_graph,
    register,
)


@dataclass
class SplitInput:
    run: str
    num_partitions: int
    structure_bytes: int = 0

    def structure_file(self, p):
        return f"{self.run}/structure/structure-{p}.bin"

    def state_file(self, k, p):
        return f"{iteration_dir(self.run, k)}/state-{p}.bin"

    def spill(self, k, mapper, reducer):
        return f"{iteration_dir(self.run, k)}/spill-m{mapper}-{reducer}.bin"


def _read_vertices(dfs, name):
    blocks = dfs.read_records(name)
    if len(blocks) != 1 or not isinstance(blocks[0], VertexBatch):
        raise EngineFault(f"{name}: expected a single vertex block")
    return blocks[0]


def mr2_split_inputs(dfs, run, graph, program, num_partitions, pool=None) -> SplitInput:
    """Write the one-time structure files and the initial state files."""
    split = SplitInput(run, num_partitions)
    parts = partition_graph(graph, program, num_partitions)

    def write(p, ctx):
        dfs.write_records(split.structure_file(p), parts[p].structure_half())
        dfs.write_records(split.state_file(0, p), parts[p].state_half())
        ctx.ledger.structure_bytes += parts[p].structure_nbytes

    pool = pool or WorkerPool(1)
    _, ledger = pool.run_phase(range(num_partitions), write)
    split.structure_bytes = ledger.structure_bytes
    return split


def mr2_map_join(structure: VertexBatch, state: VertexBatch, program, combiner=False) -> MessageBatch:
    """Merge-join one structure run with one state run and emit messages only."""
    if len(structure) != len(state) or not np.array_equal(structure.ids, state.ids):
        n = min(len(structure), len(state))
        diff = np.flatnonzero(structure.ids[:n] != state.ids[:n])
        if len(diff):
            i = int(diff[0])
            v = f"{int(structure.ids[i])} (structure) vs {int(state.ids[i])} (state)"
        else:
            longer = structure if len(structure) > n else state
            v = str(int(longer.ids[n]))
        raise EngineFault(f"map-side join id mismatch at vertex {v}: partitioning drift")
    joined = VertexBatch(state.ids, state.flags, state.values,
                         structure.indptr, structure.targets, structure.weights)
    messages = program.emit_batch(joined)
    if combiner and program.has_combiner:
        messages = program.combine_batch(messages.sorted())
    return messages


def mr2_reduce(previous: VertexBatch, messages: MessageBatch, program, where="reducer"):
    """Apply sorted messages onto the previous state stream; message-less vertices carry forward."""
    rows = message_rows(previous.ids, messages.dst, where)
    flags, values = program.apply_batch(previous.flags, previous.values, rows, messages)
    return VertexBatch(previous.ids, flags, values)


def _map_phase(pool, dfs, split, k, program, combiner, cost_model):
    R = split.num_partitions

    def map_task(m, ctx):
        data = dfs.read(split.structure_file(m))
        cost_model.network_delay(len(data))  # structure is the remote side of the join
        structure = decode_blocks(data)[0]
        state = _read_vertices(dfs, split.state_file(k - 1, m))
        messages = mr2_map_join(structure, state, program, combiner)
        for r, part in enumerate(partition_messages(messages, R)):
            dfs.write_records(split.spill(k, m, r), part)
        ctx.ledger.msg_count += len(messages)
        ctx.ledger.msg_bytes += messages.nbytes

    _, ledger = pool.run_phase(range(R), map_task)
    return ledger


def _shuffle_phase(pool, dfs, split, k, program, cost_model):
    M = split.num_partitions

    def shuffle_task(r, ctx):
        runs, names = [], []
        for m in range(M):
            name = split.spill(k, m, r)
            data = dfs.read(name)
            cost_model.network_delay(len(data))
            for block in decode_blocks(data):
                if not isinstance(block, MessageBatch):
                    raise EngineFault(f"{name}: vertex record in a message-only shuffle")
                runs.append(block)
                names.append(name)
        return merge_sorted_messages(runs, program, names)

    groups, _ = pool.run_phase(range(M), shuffle_task)
    return groups


def mr2_reduce_phase(pool, dfs, split, k, groups, program):
    """Write iteration-``k`` state files; return the activated vertex count."""

    def reduce_task(r, ctx):
        previous = _read_vertices(dfs, split.state_file(k - 1, r))
        nxt = mr2_reduce(previous, groups[r], program, f"reducer {r}")
        dfs.write_records(split.state_file(k, r), nxt)
        return int(np.count_nonzero(nxt.flags & FLAG_ACTIVE))

    counts, _ = pool.run_phase(range(split.num_partitions), reduce_task)
    return sum(counts)


@register("mr2")
def mr2_run(graph, program, iterations, workers, combiner=False, dfs=None, cost_model=None,
            keep_files=False, dataset="", audit=None) -> RunResult:
    """Split once, then run ``iterations`` join-map / shuffle / reduce rounds."""
    check_run_args(graph, program, iterations, workers)
    metrics = RunMetrics("mr2", program.name, dataset, workers)
    run = f"mr2-{uuid.uuid4().hex[:8]}"
    with dfs_session(dfs, cost_model, keep_files) as fs, \
            WorkerPool(workers, clear_local_at_barrier=True) as pool:
        cost = cost_model or fs.cost_model or CostModel()
        if audit is not None:
            pool.barrier_hooks.append(audit)
        rec = IterationRecorder(metrics, fs)
        split = mr2_split_inputs(fs, run, graph, program, workers, pool)
        metrics.setup_structure_bytes = split.structure_bytes
        rec.add(TransferLedger(structure_bytes=split.structure_bytes))
        for k in range(1, iterations + 1):
            rec.add(_map_phase(pool, fs, split, k, program, combiner, cost))
            groups = _shuffle_phase(pool, fs, split, k, program, cost)
            active = mr2_reduce_phase(pool, fs, split, k, groups, program)
            del groups
            rec.close_iteration(active)
            if not keep_files:
                fs.remove(iteration_dir(run, k - 1))
        final = [_read_vertices(fs, split.state_file(iterations, p)) for p in range(workers)]
        if not keep_files:
            fs.remove(run)
        metrics.run_id = run
        return RunResult(StateTable.from_batches(program, final), rec.finish())
