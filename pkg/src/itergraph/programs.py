"""Engine-neutral vertex programs: SSSP and relational influence propagation.

Each program exposes two faces:

* scalar functions (``sssp_apply``, ``rip_emit``, ...) operating on one vertex
  with plain Python values; :func:`sequential_oracle` is built only on these.
* batch methods on the :class:`VertexProgram` subclasses, operating on whole
  partitions of numpy columns; the engines use only these.

Floating-point sums are folded one message at a time, and every engine
presents the messages of one destination in canonical source order (see
:class:`~itergraph.records.MessageBatch`).  The oracle visits sources in that
same order, so all of them round identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigError
from .graph import Edge, Graph
from .records import FLAG_ACTIVE, FLAG_SEED, MessageBatch, VertexBatch, source_order

INFINITY = int(np.iinfo(np.int64).max)


@dataclass(frozen=True)
class VertexState:
    value: object
    active: bool


@dataclass(frozen=True)
class RipState:
    likelihood: tuple
    is_seed: bool = False


# -- SSSP, scalar ----------------------------------------------------------------


def sssp_init(v, source) -> VertexState:
    if v == source:
        return VertexState(0, True)
    return VertexState(INFINITY, False)


def sssp_apply(distance, messages):
    """Return ``(new_distance, activated)``; ties do not activate."""
    best = min(messages, default=INFINITY)
    if best < distance:
        return best, True
    return distance, False


def sssp_emit(v, distance, adjacency):
    if distance == INFINITY:
        return []
    return [(e.target, distance + 1) for e in adjacency]


def sssp_combine(a, b):
    return a if a <= b else b


# -- RIP, scalar -----------------------------------------------------------------


def rip_init(v, seeds, num_classes) -> VertexState:
    if num_classes < 2:
        raise ConfigError("num_classes must be at least 2")
    if v in seeds:
        return VertexState(RipState(tuple(float(p) for p in seeds[v]), True), True)
    return VertexState(RipState((1.0 / num_classes,) * num_classes, False), True)


def rip_apply(state: RipState, messages, clamp_seeds=True):
    """Weighted mean of the incoming label vectors.

    ``messages`` is a sequence of ``(vector, weight)``.  Without messages, or
    for a clamped seed, the state is returned unchanged.  RIP vertices are
    always re-activated.
    """
    if not messages or (clamp_seeds and state.is_seed):
        return state, True
    sums = [0.0] * len(state.likelihood)
    total = 0.0
    for vec, weight in messages:
        for c, p in enumerate(vec):
            sums[c] += p * weight
        total += weight
    return RipState(tuple(s / total for s in sums), state.is_seed), True


def rip_emit(v, state: RipState, adjacency):
    # zero-weight edges carry no influence and would break the weight > 0 rule
    return [(e.target, (state.likelihood, e.weight)) for e in adjacency if e.weight > 0]


def rip_combine(a, b):
    (va, wa), (vb, wb) = a, b
    total = wa + wb
    return tuple((x * wa + y * wb) / total for x, y in zip(va, vb)), total


# -- program objects ---------------------------------------------------------------


class VertexProgram:
    """Algorithm abstraction executed identically by every engine.

    Vertex state is stored as a ``flags`` byte (``FLAG_ACTIVE``,
    ``FLAG_SEED``) plus a row of ``value_width`` numbers of ``value_dtype``.
    Message payloads are rows of ``payload_width`` numbers of ``payload_dtype``.
    """

    name = "abstract"
    always_active = False
    value_dtype = np.int64
    payload_dtype = np.int64
    value_width = 1
    payload_width = 1
    has_combiner = False

    def prepare(self, graph: Graph):
        """Validate the program against ``graph``; raises ConfigError."""

    # scalar face
    def init(self, v) -> VertexState:
        raise NotImplementedError

    def apply(self, state: VertexState, messages):
        raise NotImplementedError

    def emit(self, v, state: VertexState, adjacency):
        raise NotImplementedError

    def combine(self, a, b):
        raise NotImplementedError

    # batch face
    def init_batch(self, ids):
        """Return ``(flags, values)`` for the sorted id array ``ids``."""
        raise NotImplementedError

    def emit_batch(self, vertices: VertexBatch, plan: EdgePlan = None) -> MessageBatch:
        """Messages from every vertex that should emit.

        Messages follow CSR (source, target) order, or the order of ``plan``.
        """
        raise NotImplementedError

    def apply_batch(self, flags, values, index, messages: MessageBatch):
        """Apply ``messages``; ``index[i]`` is the row of ``messages.dst[i]``.

        Returns ``(flags, values)`` for the next iteration; the active bit
        carries the ``activated`` result.
        """
        return self.apply_runs(flags, values, [(index, messages)])

    def apply_runs(self, flags, values, runs):
        """Like ``apply_batch`` for a list of ``(index, messages)`` runs.

        The result equals applying the runs' concatenation: per destination,
        messages are folded in run order, then in order within a run.
        """
        raise NotImplementedError

    def combine_batch(self, messages: MessageBatch) -> MessageBatch:
        """Collapse messages sharing a destination; input grouped by destination."""
        raise NotImplementedError

    # conversions
    def state_from_row(self, flags, row) -> VertexState:
        raise NotImplementedError

    def format_value(self, state: VertexState) -> str:
        raise NotImplementedError

    def empty_messages(self):
        return MessageBatch.empty(self.payload_width, self.payload_dtype)

    def emitting(self, vertices: VertexBatch):
        if self.always_active:
            return np.ones(len(vertices), dtype=bool)
        return (vertices.flags & FLAG_ACTIVE).astype(bool)


class EdgePlan:
    """A fixed traversal order over the out-edges of resident vertices.

    The per-edge source row, target, source id and weight are gathered once,
    so repeated emission from the same adjacency avoids the gathers and hands
    out the very same address arrays whenever every vertex emits.
    """

    def __init__(self, vertices: VertexBatch, edge_order=None):
        rows = np.repeat(np.arange(len(vertices)), vertices.degrees)
        edges = np.arange(len(rows)) if edge_order is None else np.asarray(edge_order)
        self.rows = np.take(rows, edges)
        self.targets = np.take(vertices.targets, edges)
        self.sources = np.take(vertices.ids, self.rows)
        self.weights = np.take(vertices.weights, edges)

    def __len__(self):
        return len(self.rows)


def _edges(vertices: VertexBatch, mask, plan=None):
    """``(rows, targets, sources, weights)`` of the edges leaving the rows selected by ``mask``.

    Without a plan, edges come out in CSR order.
    """
    if plan is not None:
        if mask.all():
            return plan.rows, plan.targets, plan.sources, plan.weights
        keep = np.take(mask, plan.rows)
        return plan.rows[keep], plan.targets[keep], plan.sources[keep], plan.weights[keep]
    deg = vertices.degrees
    if mask.all():
        rows, edges = np.repeat(np.arange(len(vertices)), deg), np.arange(len(vertices.targets))
    else:
        picked = np.flatnonzero(mask)
        counts = deg[picked]
        rows = np.repeat(picked, counts)
        offsets = np.arange(len(rows), dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
        edges = np.repeat(vertices.indptr[picked], counts) + offsets
    return rows, np.take(vertices.targets, edges), np.take(vertices.ids, rows), np.take(vertices.weights, edges)


def _group_starts(dst):
    if len(dst) == 0:
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero(np.concatenate(([True], dst[1:] != dst[:-1])))


class SsspProgram(VertexProgram):
    """Unweighted single-source shortest paths (hop counts)."""

    name = "sssp"
    has_combiner = True

    def __init__(self, source):
        self.source = int(source)

    def prepare(self, graph):
        if not graph.contains(self.source):
            raise ConfigError(f"source vertex {self.source} is not in the graph")

    def init(self, v):
        return sssp_init(v, self.source)

    def apply(self, state, messages):
        distance, activated = sssp_apply(state.value, messages)
        return VertexState(distance, activated), activated

    def emit(self, v, state, adjacency):
        return sssp_emit(v, state.value, adjacency)

    def combine(self, a, b):
        return sssp_combine(a, b)

    def init_batch(self, ids):
        values = np.full((len(ids), 1), INFINITY, dtype=np.int64)
        flags = np.zeros(len(ids), dtype=np.uint8)
        hit = ids == self.source
        values[hit, 0] = 0
        flags[hit] = FLAG_ACTIVE
        return flags, values

    def emit_batch(self, vertices, plan=None):
        mask = self.emitting(vertices) & (vertices.values[:, 0] != INFINITY)
        rows, targets, sources, _ = _edges(vertices, mask, plan)
        return MessageBatch(targets, sources, (np.take(vertices.values[:, 0], rows) + 1).reshape(-1, 1))

    def apply_runs(self, flags, values, runs):
        old = values[:, 0]
        best = np.full(len(old), INFINITY, dtype=np.int64)
        for index, messages in runs:
            if len(messages):
                np.minimum.at(best, index, messages.payload[:, 0])
        new = np.minimum(old, best)
        activated = new < old
        new_flags = (flags & ~np.uint8(FLAG_ACTIVE)) | activated.astype(np.uint8) * FLAG_ACTIVE
        return new_flags.astype(np.uint8), new.reshape(-1, 1)

    def combine_batch(self, messages):
        if len(messages) < 2:
            return messages
        starts = _group_starts(messages.dst)
        return MessageBatch(
            messages.dst[starts],
            messages.src[starts],
            np.minimum.reduceat(messages.payload[:, 0], starts).reshape(-1, 1),
        )

    def state_from_row(self, flags, row):
        return VertexState(int(row[0]), bool(flags & FLAG_ACTIVE))

    def format_value(self, state):
        return "inf" if state.value == INFINITY else str(state.value)


class RipProgram(VertexProgram):
    """Relational influence propagation over ``num_classes`` label likelihoods.

    ``seeds`` maps vertex id to a label vector.  With ``clamp_seeds`` the seed
    vertices keep their labels; otherwise they are averaged like any vertex.
    """

    name = "rip"
    always_active = True
    value_dtype = np.float64
    payload_dtype = np.float64
    has_combiner = True

    def __init__(self, seeds, num_classes=2, clamp_seeds=True):
        if num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        self.seeds = {int(v): tuple(float(p) for p in vec) for v, vec in seeds.items()}
        for v, vec in self.seeds.items():
            if len(vec) != num_classes:
                raise ConfigError(f"seed label of vertex {v} has {len(vec)} classes, expected {num_classes}")
        self.num_classes = num_classes
        self.clamp_seeds = clamp_seeds
        self.value_width = num_classes
        self.payload_width = num_classes + 1

    def prepare(self, graph):
        pass

    def init(self, v):
        return rip_init(v, self.seeds, self.num_classes)

    def apply(self, state, messages):
        new, activated = rip_apply(state.value, messages, self.clamp_seeds)
        return VertexState(new, activated), activated

    def emit(self, v, state, adjacency):
        return rip_emit(v, state.value, adjacency)

    def combine(self, a, b):
        return rip_combine(a, b)

    def init_batch(self, ids):
        values = np.full((len(ids), self.num_classes), 1.0 / self.num_classes)
        flags = np.full(len(ids), FLAG_ACTIVE, dtype=np.uint8)
        if self.seeds:
            seed_ids = np.fromiter(self.seeds, dtype=np.int64, count=len(self.seeds))
            pos = np.searchsorted(ids, seed_ids)
            ok = pos < len(ids)
            ok[ok] &= ids[pos[ok]] == seed_ids[ok]
            table = np.array(list(self.seeds.values()), dtype=np.float64)
            values[pos[ok]] = table[ok]
            flags[pos[ok]] |= FLAG_SEED
        return flags, values

    def emit_batch(self, vertices, plan=None):
        rows, targets, sources, w = _edges(vertices, self.emitting(vertices), plan)
        keep = w > 0
        if not keep.all():
            rows, targets, sources, w = rows[keep], targets[keep], sources[keep], w[keep]
        payload = np.empty((len(rows), self.payload_width))
        payload[:, :-1] = np.take(vertices.values, rows, axis=0)
        payload[:, -1] = w
        return MessageBatch(targets, sources, payload)

    def apply_runs(self, flags, values, runs):
        n, C = values.shape
        new = values.copy()
        runs = [(index, m) for index, m in runs if len(m)]
        if runs:
            total = np.zeros(n)
            sums = np.zeros((C, n))
            received = np.zeros(n, dtype=bool)
            for index, messages in runs:
                # both accumulate left to right from 0.0, so they continue one fold
                w = messages.payload[:, -1]
                received[index] = True
                if index is runs[0][0]:
                    total = np.bincount(index, weights=w, minlength=n)
                    for c in range(C):
                        sums[c] = np.bincount(index, weights=messages.payload[:, c] * w, minlength=n)
                else:
                    np.add.at(total, index, w)
                    for c in range(C):
                        np.add.at(sums[c], index, messages.payload[:, c] * w)
            if self.clamp_seeds:
                received &= (flags & FLAG_SEED) == 0
            rows = np.flatnonzero(received)
            for c in range(C):
                new[rows, c] = sums[c, rows] / total[rows]
        return (flags | FLAG_ACTIVE).astype(np.uint8), new

    def combine_batch(self, messages):
        if len(messages) < 2:
            return messages
        starts = _group_starts(messages.dst)
        w = messages.payload[:, -1]
        total = np.add.reduceat(w, starts)
        payload = np.empty((len(starts), self.payload_width))
        for c in range(self.num_classes):
            payload[:, c] = np.add.reduceat(messages.payload[:, c] * w, starts) / total
        payload[:, -1] = total
        return MessageBatch(messages.dst[starts], messages.src[starts], payload)

    def state_from_row(self, flags, row):
        return VertexState(RipState(tuple(float(x) for x in row), bool(flags & FLAG_SEED)),
                           bool(flags & FLAG_ACTIVE))

    def format_value(self, state):
        vec = state.value.likelihood
        best = max(range(len(vec)), key=vec.__getitem__)
        return ",".join(repr(x) for x in vec) + f"\t{best}"


# -- results ---------------------------------------------------------------------


class StateTable:
    """Final vertex states of a run, as sorted columns."""

    def __init__(self, program: VertexProgram, ids, flags, values):
        self.program = program
        self.ids = ids
        self.flags = flags
        self.values = values

    @classmethod
    def from_batches(cls, program, batches):
        merged = VertexBatch.concat([b.state_half() for b in batches])
        order = np.argsort(merged.ids, kind="stable")
        return cls(program, merged.ids[order], merged.flags[order], merged.values[order])

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, v):
        i = int(np.searchsorted(self.ids, v))
        if i >= len(self.ids) or self.ids[i] != v:
            raise KeyError(v)
        return self.program.state_from_row(self.flags[i], self.values[i])

    def to_dict(self):
        return {int(v): self.program.state_from_row(f, row)
                for v, f, row in zip(self.ids, self.flags, self.values)}

    def to_tsv(self) -> str:
        lines = []
        for v, f, row in zip(self.ids.tolist(), self.flags, self.values):
            lines.append(f"{v}\t{self.program.format_value(self.program.state_from_row(f, row))}\n")
        return "".join(lines)


# -- oracle ----------------------------------------------------------------------


def iterate_oracle(g: Graph, program: VertexProgram) -> Iterator[dict]:
    """Yield the state map after each synchronous iteration, forever.

    Each iteration collects every emission from the previous states, visiting
    sources in canonical order, then applies all vertices.
    """
    program.prepare(g)
    order = g.ids.tolist()
    senders = g.ids[source_order(g.ids)].tolist()
    adjacency = {v: g.adjacency(v) for v in order}
    states = {v: program.init(v) for v in order}
    while True:
        inbox = {}
        for v in senders:
            st = states[v]
            if st.active or program.always_active:
                for dst, payload in program.emit(v, st, adjacency[v]):
                    inbox.setdefault(dst, []).append(payload)
        states = {v: program.apply(states[v], inbox.get(v, ()))[0] for v in order}
        yield states


def sequential_oracle(g: Graph, program: VertexProgram, iterations) -> dict:
    """Single-threaded reference execution; returns vertex id -> VertexState."""
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    if iterations == 0:
        program.prepare(g)
        return {v: program.init(v) for v in g.ids.tolist()}
    for k, states in enumerate(iterate_oracle(g, program), start=1):
        if k == iterations:
            return states


def edges_of(pairs) -> list[Edge]:
    """Convenience: build an adjacency list from ``(target, weight)`` pairs."""
    return [Edge(int(t), float(w)) for t, w in pairs]
