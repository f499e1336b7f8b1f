"""Graph representation, ingestion, synthetic generation and hash partitioning.

A :class:`Graph` is an immutable CSR structure keyed by the original
(possibly sparse) vertex ids.  Adjacency lists are outgoing edges sorted by
target id; duplicate ``(src, dst)`` pairs collapse to the last weight seen.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import ConfigError, GraphFormatError

LABEL_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Edge:
    target: int
    weight: float = 1.0


@dataclass(frozen=True)
class GraphStats:
    num_nodes: int
    num_edges: int
    avg_out_degree: float
    max_in_degree: int


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


class Graph:
    """Directed weighted graph with optional seed label vectors.

    ``ids`` is the sorted array of vertex ids; the outgoing edges of
    ``ids[i]`` are ``targets[indptr[i]:indptr[i + 1]]`` with matching
    ``weights``.  All arrays are read-only.
    """

    def __init__(self, ids, indptr, targets, weights, seed_labels=None, num_classes=None):
        self.ids = _frozen(ids, np.int64)
        self.indptr = _frozen(indptr, np.int64)
        self.targets = _frozen(targets, np.int64)
        self.weights = _frozen(weights, np.float64)
        if len(self.indptr) != len(self.ids) + 1 or self.indptr[-1] != len(self.targets):
            raise ValueError("inconsistent CSR arrays")
        if len(self.targets) != len(self.weights):
            raise ValueError("targets and weights differ in length")
        if len(self.ids) > 1 and np.any(np.diff(self.ids) <= 0):
            raise ValueError("vertex ids must be strictly increasing")
        if len(self.ids) and self.ids[0] < 0:
            raise ValueError("vertex ids must be non-negative")
        if len(self.targets) and not np.all(self.contains(self.targets)):
            raise ValueError("edge target outside the vertex set")
        if np.any(self.weights < 0):
            raise ValueError("edge weights must be non-negative")
        labels = {}
        for v, vec in (seed_labels or {}).items():
            vec = tuple(float(x) for x in vec)
            if not self.contains(v):
                raise ValueError(f"seed label for unknown vertex {v}")
            if num_classes is None:
                num_classes = len(vec)
            if len(vec) != num_classes:
                raise ValueError(f"seed label of vertex {v} has {len(vec)} classes, expected {num_classes}")
            labels[int(v)] = vec
        self._seed_labels = MappingProxyType(labels)
        self.num_classes = num_classes

    @classmethod
    def from_edges(cls, src, dst, weights=None, vertices=None, seed_labels=None, num_classes=None):
        """Build a graph from parallel edge arrays; later duplicates win."""
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if weights is None:
            weights = np.ones(len(src))
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if not (len(src) == len(dst) == len(weights)):
            raise ValueError("edge arrays differ in length")
        parts = [src, dst]
        if vertices is not None:
            parts.append(np.asarray(list(vertices) if not isinstance(vertices, np.ndarray) else vertices, dtype=np.int64))
        ids = np.unique(np.concatenate(parts)) if sum(map(len, parts)) else np.empty(0, np.int64)

        # stable sort by (src, dst); the last occurrence of each pair survives
        order = np.lexsort((dst, src))
        s, d, w = src[order], dst[order], weights[order]
        if len(s):
            last = np.ones(len(s), dtype=bool)
            last[:-1] = (s[1:] != s[:-1]) | (d[1:] != d[:-1])
            s, d, w = s[last], d[last], w[last]
        rows = np.searchsorted(ids, s)
        indptr = np.zeros(len(ids) + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=len(ids)), out=indptr[1:])
        return cls(ids, indptr, d, w, seed_labels=seed_labels, num_classes=num_classes)

    # -- queries ---------------------------------------------------------------

    @property
    def num_nodes(self):
        return len(self.ids)

    @property
    def num_edges(self):
        return len(self.targets)

    @property
    def vertices(self):
        return frozenset(self.ids.tolist())

    @property
    def seed_labels(self) -> Mapping[int, tuple]:
        return self._seed_labels

    @property
    def degrees(self):
        return np.diff(self.indptr)

    def contains(self, v):
        """Membership test; vectorized when ``v`` is an array."""
        v = np.asarray(v, dtype=np.int64)
        pos = np.searchsorted(self.ids, v)
        pos = np.minimum(pos, max(len(self.ids) - 1, 0))
        if len(self.ids) == 0:
            return np.zeros(v.shape, dtype=bool) if v.ndim else False
        hit = self.ids[pos] == v
        return hit if v.ndim else bool(hit)

    def index_of(self, v):
        pos = np.searchsorted(self.ids, np.asarray(v, dtype=np.int64))
        return pos

    def adjacency(self, v) -> list[Edge]:
        if not self.contains(v):
            raise KeyError(v)
        i = int(self.index_of(v))
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return [Edge(int(t), float(w)) for t, w in zip(self.targets[lo:hi], self.weights[lo:hi])]

    def edge_arrays(self):
        """Return ``(src, dst, weight)`` arrays in CSR order."""
        src = np.repeat(self.ids, self.degrees)
        return src, self.targets, self.weights

    def with_seed_labels(self, seed_labels, num_classes=None):
        return Graph(self.ids, self.indptr, self.targets, self.weights,
                     seed_labels=seed_labels, num_classes=num_classes)

    def __repr__(self):
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


# -- ingestion -----------------------------------------------------------------


def _open_lines(source):
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
        source = io.BytesIO(data)
    for raw in source:
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        yield raw


def _parse_id(token, lineno):
    try:
        value = int(token)
    except ValueError:
        raise GraphFormatError(f"vertex id {token!r} is not an integer", lineno) from None
    if value < 0:
        raise GraphFormatError(f"negative vertex id {value}", lineno)
    return value


def load_edge_list(source, default_weight=1.0) -> Graph:
    """Parse ``src dst [weight]`` lines into a :class:`Graph`.

    ``source`` may be a binary/text stream, raw bytes or a path.  Lines
    starting with ``#`` and blank lines are skipped.
    """
    if default_weight < 0:
        raise ValueError("default_weight must be non-negative")
    src, dst, wts = [], [], []
    for lineno, line in enumerate(_open_lines(source), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) not in (2, 3):
            raise GraphFormatError(f"expected 2 or 3 fields, got {len(fields)}", lineno)
        s = _parse_id(fields[0], lineno)
        d = _parse_id(fields[1], lineno)
        if len(fields) == 3:
            try:
                w = float(fields[2])
            except ValueError:
                raise GraphFormatError(f"weight {fields[2]!r} is not a number", lineno) from None
            if not w >= 0 or not np.isfinite(w):
                raise GraphFormatError(f"invalid weight {fields[2]}", lineno)
        else:
            w = default_weight
        src.append(s)
        dst.append(d)
        wts.append(w)
    if not src:
        raise GraphFormatError("edge list contains no edges")
    return Graph.from_edges(src, dst, wts)


def write_edge_list(graph: Graph, sink) -> None:
    """Serialize ``graph`` as an edge list; weights use ``repr`` so they round-trip."""
    src, dst, w = graph.edge_arrays()
    lines = [f"{s} {d} {x!r}\n" for s, d, x in zip(src.tolist(), dst.tolist(), w.tolist())]
    data = "".join(lines)
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w", encoding="utf-8") as fh:
            fh.write(data)
    else:
        try:
            sink.write(data)
        except TypeError:
            sink.write(data.encode("utf-8"))


class SeedLabels(dict):
    """Mapping vertex id -> normalized label vector.

    ``ignored`` counts lines naming vertices outside the graph.
    """

    ignored = 0


def load_seed_labels(source, num_classes, vertices=None) -> SeedLabels:
    """Parse ``vertexId p_0 ... p_{C-1}`` lines.

    Components must lie in [0, 1] and sum to 1 within 1e-6; the stored vector
    is renormalized.  When ``vertices`` (a Graph or a collection of ids) is
    given, lines for unknown vertices are skipped and counted in ``ignored``.
    """
    if num_classes < 2:
        raise ConfigError("num_classes must be at least 2")
    if isinstance(vertices, Graph):
        known = vertices.contains
    elif vertices is not None:
        ids = set(int(v) for v in vertices)
        known = ids.__contains__
    else:
        known = None
    labels = SeedLabels()
    for lineno, line in enumerate(_open_lines(source), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != num_classes + 1:
            raise GraphFormatError(f"expected {num_classes + 1} fields, got {len(fields)}", lineno)
        v = _parse_id(fields[0], lineno)
        try:
            vec = [float(x) for x in fields[1:]]
        except ValueError:
            raise GraphFormatError("label component is not a number", lineno) from None
        if any(not (0.0 <= p <= 1.0) for p in vec):
            raise GraphFormatError("label component outside [0, 1]", lineno)
        total = sum(vec)
        if abs(total - 1.0) > LABEL_SUM_TOLERANCE:
            raise GraphFormatError(f"label components sum to {total}, not 1", lineno)
        if known is not None and not known(v):
            labels.ignored += 1
            continue
        labels[v] = tuple(p / total for p in vec)
    return labels


# -- generation ----------------------------------------------------------------


def _power_law_weights(n, exponent, rng):
    # Chung-Lu expected degrees: w_i ~ i^(-1/(exponent-1)), ranks shuffled
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks ** (-1.0 / (exponent - 1.0))
    w /= w.sum()
    return w[rng.permutation(n)]


def generate_power_law_graph(n, target_avg_degree, exponent, seed) -> Graph:
    """Directed Chung-Lu style graph with power-law in- and out-degrees.

    Exactly ``round(n * target_avg_degree)`` distinct edges without self-loops
    are produced (capped at ``n * (n - 1)``); vertex ids are ``0 .. n-1``.
    """
    if n < 2:
        raise ConfigError("n must be at least 2")
    if target_avg_degree < 1:
        raise ConfigError("target_avg_degree must be at least 1")
    if not exponent > 1:
        raise ConfigError("exponent must be greater than 1")
    rng = np.random.default_rng(seed)
    m = min(int(round(n * target_avg_degree)), n * (n - 1))
    p_out = _power_law_weights(n, exponent, rng)
    p_in = _power_law_weights(n, exponent, rng)
    cdf_out = np.cumsum(p_out)
    cdf_in = np.cumsum(p_in)

    keys = np.empty(0, dtype=np.int64)
    for attempt in range(64):
        need = m - len(keys)
        if need <= 0:
            break
        batch = int(need * 1.2) + 16
        s = np.minimum(np.searchsorted(cdf_out, rng.random(batch)), n - 1)
        d = np.minimum(np.searchsorted(cdf_in, rng.random(batch)), n - 1)
        # dense graphs saturate the skewed sampler; mix in uniform pairs
        if attempt > 8:
            s = rng.integers(0, n, batch)
            d = rng.integers(0, n, batch)
        ok = s != d
        new = s[ok] * n + d[ok]
        # keep first-drawn order so truncation is deterministic
        merged = np.concatenate([keys, new])
        _, first = np.unique(merged, return_index=True)
        keys = merged[np.sort(first)][:m]
    if len(keys) < m:
        raise ConfigError("could not place the requested number of edges")
    src, dst = np.divmod(keys, n)
    return Graph.from_edges(src, dst, np.ones(m), vertices=np.arange(n))


def generate_seed_labels(graph: Graph, num_classes, fraction, seed) -> dict:
    """Seed a random ``fraction`` of the vertices with one-hot labels."""
    if num_classes < 2:
        raise ConfigError("num_classes must be at least 2")
    if not 0 < fraction <= 1:
        raise ConfigError("fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    count = max(1, int(round(fraction * graph.num_nodes)))
    chosen = np.sort(rng.choice(graph.ids, size=count, replace=False))
    classes = rng.integers(0, num_classes, size=count)
    labels = {}
    for v, c in zip(chosen.tolist(), classes.tolist()):
        vec = [0.0] * num_classes
        vec[c] = 1.0
        labels[v] = tuple(vec)
    return labels


# -- partitioning and statistics -------------------------------------------------


def hash_partition(v, num_partitions):
    """Wire-stable partitioner: ``v mod num_partitions``.  Vectorized over arrays."""
    if num_partitions < 1:
        raise ValueError("num_partitions must be at least 1")
    if isinstance(v, np.ndarray):
        return np.mod(v, num_partitions)
    return int(v) % num_partitions


def graph_stats(g: Graph) -> GraphStats:
    in_deg = np.bincount(np.searchsorted(g.ids, g.targets), minlength=g.num_nodes)
    return GraphStats(
        num_nodes=g.num_nodes,
        num_edges=g.num_edges,
        avg_out_degree=g.num_edges / g.num_nodes if g.num_nodes else 0.0,
        max_in_degree=int(in_deg.max()) if g.num_nodes else 0,
    )


def chain_graph(n) -> Graph:
    """``0 -> 1 -> ... -> n-1``; handy for smoke tests and examples."""
    return Graph.from_edges(np.arange(n - 1), np.arange(1, n), vertices=np.arange(n))

