"""Pregel-style Bulk Synchronous Parallel engine.

The graph is partitioned and shipped to the workers once; vertex state and
adjacency then stay resident.  Each superstep applies the inbox, emits, and
exchanges messages only at the barrier.  Superstep 0 emits from the initial
state without applying anything, so after superstep ``k`` the states equal
those of ``k`` MapReduce iterations.

Metric rows: row 0 covers the load, superstep 0 and superstep 1; row ``k``
covers superstep ``k + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cluster import CostModel, WorkerPool
from ..errors import CapacityError, EngineFault
from ..graph import Graph, hash_partition
from ..metrics import RunMetrics
from ..programs import EdgePlan, StateTable, VertexProgram
from ..records import (
    FLAG_ACTIVE,
    MessageBatch,
    VertexBatch,
    adjacency_nbytes,
    decode_blocks,
    expand_ranges,
    source_order,
)
from .common import (
    IterationRecorder,
    RunResult,
    check_run_args,
    message_rows,
    partition_graph,
    register,
)

INBOX_HEADROOM = 2


@dataclass
class BspPartition:
    """Worker-resident partition.

    ``plan`` walks the partition's out-edges by destination partition, then
    in canonical source order.  It is built once at load, so every outbox
    comes out in canonical order per destination.  ``inbox`` is a list of
    ``(rows, messages)`` runs ready for :meth:`VertexProgram.apply_runs`.
    """

    pid: int
    vertices: VertexBatch
    inbox: list
    halted: np.ndarray
    plan: EdgePlan = None
    merge_cache: tuple = None
    route_cache: tuple = None

    def route(self, messages, num_partitions, ledger):
        """Split a partition-grouped outbox by destination partition and count the traffic.

        Every source here is owned by this partition, so the remote messages
        are exactly those addressed elsewhere.
        """
        cache = self.route_cache
        if cache is None or not (_same(cache[0], messages.dst) and _same(cache[1], messages.src)):
            counts = np.bincount(hash_partition(messages.dst, num_partitions), minlength=num_partitions)
            bounds = np.concatenate(([0], np.cumsum(counts)))
            spans = list(zip(bounds[:-1], bounds[1:]))
            # hand out the same slice objects while the addresses repeat
            addresses = [(messages.dst[lo:hi], messages.src[lo:hi]) for lo, hi in spans]
            cache = self.route_cache = (messages.dst, messages.src, spans, addresses)
        parts = [MessageBatch(dst, src, messages.payload[lo:hi])
                 for (lo, hi), (dst, src) in zip(cache[2], cache[3])]
        ledger.msg_count += len(messages)
        ledger.msg_bytes += (len(messages) - len(parts[self.pid])) * messages.record_size
        return parts

    def deliver(self, runs, program):
        """Turn the runs received from every sender into the inbox.

        With a power-of-two partition count each sender owns one contiguous
        block of the canonical source order, so its run is applied as is,
        senders taken in that order.  Otherwise the runs are merged into
        canonical order.  Row lookups and the merge permutation are remembered
        while the senders keep producing the same addresses, as RIP does.
        """
        P = len(runs)
        cache = self.merge_cache
        if not (cache is not None and len(cache[0]) == P
                and all(_same(a, r.dst) and _same(b, r.src) for (a, b), r in zip(cache[0], runs))):
            where = f"partition {self.pid}"
            if P & (P - 1) == 0:
                senders = source_order(np.arange(P)).tolist()
                rows = [message_rows(self.vertices.ids, runs[q].dst, where) for q in senders]
                plan = (senders, rows, None)
            else:
                merged = MessageBatch.concat(runs, program.payload_width, program.payload_dtype)
                order = merged.sort_order(runs=True)
                plan = (None, [message_rows(self.vertices.ids, merged.dst[order], where)], order)
            cache = self.merge_cache = ([(r.dst, r.src) for r in runs], plan)
        senders, rows, order = cache[1]
        if order is None:
            self.inbox = [(r, runs[q]) for r, q in zip(rows, senders) if len(r)]
        else:
            merged = MessageBatch.concat(runs, program.payload_width, program.payload_dtype)
            self.inbox = [(rows[0], merged.take(order))]

    def index_edges(self, num_partitions):
        v = self.vertices
        t = v.targets
        order = None
        if len(t):
            # edges in canonical source order, CSR order within a source
            rows = source_order(v.ids)
            order = expand_ranges(v.indptr[rows], np.diff(v.indptr)[rows])
            part = hash_partition(t[order], num_partitions)
            # a stable sort on a narrow key is a radix sort
            order = order[np.argsort(part.astype(np.int16 if num_partitions < (1 << 15) else np.int64),
                                     kind="stable")]
        self.plan = EdgePlan(v, order)


def _same(a, b):
    return a is b or np.array_equal(a, b)


@dataclass(frozen=True)
class SuperstepOutcome:
    """``active_vertices`` counts vertices left un-halted after the superstep;
    ``computed_vertices`` those that ran in it."""

    superstep: int
    active_vertices: int
    messages_sent: int
    halted: bool
    computed_vertices: int = 0


def estimate_resident_bytes(graph: Graph, program: VertexProgram) -> int:
    """Vertex records plus adjacency plus inbox headroom for one message per edge."""
    vertex_bytes = graph.num_nodes * (8 + 1 + 8 * program.value_width)
    structure = adjacency_nbytes(graph.degrees)
    inbox = INBOX_HEADROOM * graph.num_edges * (16 + 8 * program.payload_width)
    return vertex_bytes + structure + inbox


def bsp_load(graph, program, num_workers, memory_budget=None, pool=None, cost_model=None):
    """Partition the graph and ship each partition to its worker.

    Returns ``(partitions, ledger)``; the ledger's ``structure_bytes`` is the
    adjacency volume moved by this single transfer.  Raises
    :class:`CapacityError` before anything is shipped if the estimate exceeds
    ``memory_budget``.
    """
    if memory_budget is not None:
        estimate = estimate_resident_bytes(graph, program)
        if estimate > memory_budget:
            raise CapacityError(estimate, memory_budget)
    cost_model = cost_model or CostModel()
    wire = [b.encode() for b in partition_graph(graph, program, num_workers)]

    def receive(p, ctx):
        cost_model.network_delay(len(wire[p]))
        (vertices,) = decode_blocks(wire[p])
        if np.any(hash_partition(vertices.ids, num_workers) != p):
            raise EngineFault(f"partition {p} received a vertex it does not own")
        ctx.ledger.structure_bytes += vertices.structure_nbytes
        part = BspPartition(p, vertices, [], np.zeros(len(vertices), dtype=bool))
        part.index_edges(num_workers)
        return part

    pool = pool or WorkerPool(1)
    partitions, ledger = pool.run_phase(range(num_workers), receive)
    return partitions, ledger


def bsp_superstep(pool: WorkerPool, partitions, program, superstep, combiner=False, cost_model=None,
                  emit=True):
    """Run one superstep over all partitions and deliver its messages.

    With ``emit`` false the superstep only applies its inbox; the run uses
    this for the last superstep, whose messages nobody would read.
    Returns ``(outcome, ledger, activated_count)``.
    """
    P = len(partitions)
    cost_model = cost_model or CostModel()

    def compute(part: BspPartition, ctx):
        v = part.vertices
        if superstep == 0:
            computed = int(len(v)) if program.always_active else int(np.count_nonzero(v.flags & FLAG_ACTIVE))
        else:
            computable = ~part.halted
            for rows, _ in part.inbox:
                computable[rows] = True
            computed = int(np.count_nonzero(computable))
            flags, values = program.apply_runs(v.flags, v.values, part.inbox)
            v = part.vertices = v.with_state(flags, values)
        part.inbox = []
        activated = (v.flags & FLAG_ACTIVE).astype(bool)
        messages = program.emit_batch(v, part.plan) if emit else program.empty_messages()
        if combiner and program.has_combiner and len(messages):
            # group by destination within each partition; lexsort is stable
            messages = messages.take(np.lexsort((messages.dst, hash_partition(messages.dst, P))))
            messages = program.combine_batch(messages)
        if not program.always_active:
            # every vertex votes to halt once it has emitted; messages re-awaken
            part.halted = np.ones(len(v), dtype=bool)
        outboxes = part.route(messages, P, ctx.ledger)
        return outboxes, computed, int(np.count_nonzero(activated))

    results, ledger = pool.run_phase(partitions, compute)
    # barrier: exchange outboxes single-threaded
    cost_model.network_delay(ledger.msg_bytes)
    for q, part in enumerate(partitions):
        part.deliver([out[q] for out, _, _ in results], program)
    in_flight = ledger.msg_count
    awake = sum(len(p.vertices) for p in partitions) if program.always_active else \
        sum(int(np.count_nonzero(~p.halted)) for p in partitions)
    outcome = SuperstepOutcome(
        superstep=superstep,
        active_vertices=awake,
        messages_sent=in_flight,
        halted=awake == 0 and in_flight == 0,
        computed_vertices=sum(c for _, c, _ in results),
    )
    return outcome, ledger, sum(a for _, _, a in results)


@register("bsp")
def bsp_run(graph, program, iterations, workers, combiner=False, memory_budget=None,
            cost_model=None, dataset="", audit=None, dfs=None, keep_files=False) -> RunResult:
    """Load once, then run supersteps 0..``iterations`` or until halted.

    ``dfs`` and ``keep_files`` are accepted for signature parity with the
    MapReduce engines and ignored: partitions are memory resident.
    """
    check_run_args(graph, program, iterations, workers)
    metrics = RunMetrics("bsp", program.name, dataset, workers)
    cost_model = cost_model or CostModel()
    outcomes = []
    with WorkerPool(workers) as pool:
        if audit is not None:
            pool.barrier_hooks.append(audit)
        rec = IterationRecorder(metrics)
        partitions, load = bsp_load(graph, program, workers, memory_budget, pool, cost_model)
        metrics.setup_structure_bytes = load.structure_bytes
        rec.add(load)
        owner = {p.pid: p.vertices.ids.copy() for p in partitions}
        for step in range(iterations + 1):
            outcome, ledger, activated = bsp_superstep(pool, partitions, program, step, combiner, cost_model,
                                                       emit=step < iterations)
            outcomes.append(outcome)
            rec.add(ledger)
            for p in partitions:
                if not np.array_equal(owner[p.pid], p.vertices.ids):
                    raise EngineFault(f"vertex residence changed in partition {p.pid}")
            if step >= 1:
                rec.close_iteration(activated)
            if outcome.halted:
                if step == 0:
                    rec.close_iteration(activated)
                break
        metrics.run_id = f"bsp-{id(partitions):x}"
        states = StateTable.from_batches(program, [p.vertices for p in partitions])
        return RunResult(states, rec.finish(), outcomes)


def structure_bytes_after_load(run: RunResult):
    """Structure bytes recorded in every row beyond the load; all zero by design."""
    ms = run.metrics
    rows = [it.structure_bytes for it in ms.iterations]
    if rows:
        rows[0] -= ms.setup_structure_bytes
    return rows

