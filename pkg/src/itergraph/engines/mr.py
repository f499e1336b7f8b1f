"""Classic MapReduce engine.

Every iteration is one map-shuffle-reduce job over DFS files.  Mappers emit
the program's messages *and* the vertex itself (state plus adjacency) so the
stateless reducers can rebuild it; the structure therefore crosses the
shuffle on every iteration.

DFS layout per run::

    <run>/0000/vertices-<p>.bin          initial vertex records
    <run>/<k>/spill-m<m>-<r>.bin         mapper m's sorted run for reducer r
    <run>/<k>/vertices-<r>.bin           vertex records after iteration k
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass

import numpy as np

from ..cluster import CostModel, WorkerPool, partition_messages
from ..errors import EngineFault
from ..graph import hash_partition
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
class MrIterationPlan:
    run: str
    iteration: int
    num_partitions: int

    @property
    def input_files(self):
        prev = iteration_dir(self.run, self.iteration - 1)
        return [f"{prev}/vertices-{p}.bin" for p in range(self.num_partitions)]

    def spill(self, mapper, reducer):
        return f"{iteration_dir(self.run, self.iteration)}/spill-m{mapper}-{reducer}.bin"

    def output(self, reducer):
        return f"{iteration_dir(self.run, self.iteration)}/vertices-{reducer}.bin"


@dataclass
class ReduceInput:
    """One reducer's merged input: vertex records and messages, both sorted by key."""

    reducer: int
    vertices: VertexBatch
    messages: MessageBatch

    def groups(self):
        """Yield ``(key, vertex_record_index, payload_rows)`` per key, in key order."""
        keys = np.union1d(self.vertices.ids, self.messages.dst)
        lo = np.searchsorted(self.messages.dst, keys, side="left")
        hi = np.searchsorted(self.messages.dst, keys, side="right")
        pos = np.searchsorted(self.vertices.ids, keys)
        for key, a, b, i in zip(keys.tolist(), lo, hi, pos):
            has_vertex = i < len(self.vertices) and self.vertices.ids[i] == key
            yield key, (int(i) if has_vertex else None), self.messages.payload[a:b]


def _read_single(dfs, name, kind):
    blocks = dfs.read_records(name)
    batches = [b for b in blocks if isinstance(b, kind)]
    if len(batches) != 1:
        raise EngineFault(f"{name}: expected one {kind.__name__} block, found {len(batches)}")
    return batches[0]


def mr_map_phase(pool: WorkerPool, dfs, plan: MrIterationPlan, program, combiner=False):
    """Run all mappers; spill sorted per-reducer runs to the DFS.  Returns the ledger."""
    R = plan.num_partitions

    def map_task(m, ctx):
        name = plan.input_files[m]
        if not dfs.exists(name):
            raise EngineFault(f"iteration {plan.iteration}: missing input for partition {m} ({name})")
        vertices = _read_single(dfs, name, VertexBatch)
        ctx.local["input"] = vertices
        messages = program.emit_batch(vertices)
        if combiner and program.has_combiner:
            messages = program.combine_batch(messages.sorted())
        msg_parts = partition_messages(messages, R)
        owner = hash_partition(vertices.ids, R)
        for r in range(R):
            own = vertices.take(owner == r)
            dfs.write_records(plan.spill(m, r), [own, msg_parts[r]])
            ctx.ledger.structure_bytes += own.structure_nbytes
        ctx.ledger.msg_count += len(messages)
        ctx.ledger.msg_bytes += messages.nbytes

    _, ledger = pool.run_phase(range(plan.num_partitions), map_task)
    return ledger


def mr_shuffle(pool: WorkerPool, dfs, plan: MrIterationPlan, program, cost_model=None):
    """Fetch and merge every mapper's run for each reducer."""
    cost_model = cost_model or CostModel()
    M = plan.num_partitions

    def shuffle_task(r, ctx):
        vertex_runs, message_runs, names = [], [], []
        for m in range(M):
            name = plan.spill(m, r)
            data = dfs.read(name)
            cost_model.network_delay(len(data))
            blocks = decode_blocks(data)
            for block in blocks:
                if isinstance(block, VertexBatch):
                    if len(block) > 1 and np.any(np.diff(block.ids) <= 0):
                        raise EngineFault(f"unsorted vertex run in {name}")
                    vertex_runs.append(block)
                else:
                    message_runs.append(block)
                    names.append(name)
        vertices = VertexBatch.concat(vertex_runs)
        if len(vertex_runs) > 1:
            vertices = vertices.take(np.argsort(vertices.ids, kind="stable"))
        messages = merge_sorted_messages(message_runs, program, names)
        return ReduceInput(r, vertices, messages)

    inputs, _ = pool.run_phase(range(plan.num_partitions), shuffle_task)
    return inputs


def mr_reduce_phase(pool: WorkerPool, dfs, plan: MrIterationPlan, inputs, program):
    """Apply the program per key and write the next iteration's vertex files.

    Returns the number of vertices activated in this iteration.
    """

    def reduce_task(inp: ReduceInput, ctx):
        vertices = inp.vertices
        if len(vertices) > 1 and np.any(np.diff(vertices.ids) == 0):
            v = int(vertices.ids[np.flatnonzero(np.diff(vertices.ids) == 0)[0]])
            raise EngineFault(f"vertex {v} self-emitted more than once")
        try:
            rows = message_rows(vertices.ids, inp.messages.dst, f"reducer {inp.reducer}")
        except EngineFault as exc:
            raise EngineFault(f"{exc} (vertex record lost: structure missing)") from None
        flags, values = program.apply_batch(vertices.flags, vertices.values, rows, inp.messages)
        dfs.write_records(plan.output(inp.reducer), vertices.with_state(flags, values))
        return int(np.count_nonzero(flags & FLAG_ACTIVE))

    counts, _ = pool.run_phase(inputs, reduce_task)
    return sum(counts)


@register("mr")
def mr_run(graph, program, iterations, workers, combiner=False, dfs=None, cost_model=None,
           keep_files=False, dataset="", audit=None) -> RunResult:
    """Run ``iterations`` MapReduce jobs; return final states and metrics.

    ``audit``, if given, is installed as a barrier hook on the worker pool.
    """
    check_run_args(graph, program, iterations, workers)
    metrics = RunMetrics("mr", program.name, dataset, workers)
    run = f"mr-{uuid.uuid4().hex[:8]}"
    with dfs_session(dfs, cost_model, keep_files) as fs, \
            WorkerPool(workers, clear_local_at_barrier=True) as pool:
        cost = cost_model or fs.cost_model
        if audit is not None:
            pool.barrier_hooks.append(audit)
        rec = IterationRecorder(metrics, fs)
        initial = partition_graph(graph, program, workers)

        def write_initial(p, ctx):
            fs.write_records(f"{iteration_dir(run, 0)}/vertices-{p}.bin", initial[p])
            ctx.ledger.structure_bytes += initial[p].structure_nbytes

        _, setup = pool.run_phase(range(workers), write_initial)
        del initial
        metrics.setup_structure_bytes = setup.structure_bytes
        rec.add(setup)
        for k in range(1, iterations + 1):
            plan = MrIterationPlan(run, k, workers)
            ledger = mr_map_phase(pool, fs, plan, program, combiner)
            rec.add(ledger)
            inputs = mr_shuffle(pool, fs, plan, program, cost)
            active = mr_reduce_phase(pool, fs, plan, inputs, program)
            del inputs
            rec.close_iteration(active)
            if not keep_files:
                fs.remove(iteration_dir(run, k - 1))
        final = [_read_single(fs, MrIterationPlan(run, iterations + 1, workers).input_files[p], VertexBatch)
                 for p in range(workers)]
        if not keep_files:
            fs.remove(run)
        metrics.run_id = run
        return RunResult(StateTable.from_batches(program, final), rec.finish())

