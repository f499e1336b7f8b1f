"""Independent reference computations for the tests.

Everything here works from plain Python edge lists and dictionaries and
shares no code with the package under test.
"""

import math
from collections import defaultdict, deque

INF = float("inf")


def adjacency_from(edges):
    """Last weight wins for duplicate (src, dst), like the loader promises."""
    adj = defaultdict(dict)
    for s, d, w in edges:
        adj[s][d] = w
    return adj


def bfs_distances(vertices, edges, source):
    adj = adjacency_from(edges)
    dist = {v: INF for v in vertices}
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj.get(u, {}):
            if dist[v] == INF:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def diameter_from(vertices, edges, source):
    finite = [d for d in bfs_distances(vertices, edges, source).values() if d != INF]
    return max(finite)


def rip_reference(vertices, edges, seeds, num_classes, iterations, clamp_seeds=True):
    """Synchronous weighted-mean propagation with exact (fsum) accumulation."""
    adj = adjacency_from(edges)
    uniform = tuple([1.0 / num_classes] * num_classes)
    label = {v: tuple(seeds.get(v, uniform)) for v in vertices}
    for _ in range(iterations):
        inbox = defaultdict(list)
        for s, nbrs in adj.items():
            for d, w in nbrs.items():
                if w > 0:
                    inbox[d].append((label[s], w))
        nxt = dict(label)
        for v, msgs in inbox.items():
            if clamp_seeds and v in seeds:
                continue
            total = math.fsum(w for _, w in msgs)
            nxt[v] = tuple(math.fsum(vec[c] * w for vec, w in msgs) / total for c in range(num_classes))
        label = nxt
    return label


def count_unique_edge_lines(text):
    """Line-scan counter: distinct (src, dst) pairs over non-comment lines."""
    pairs = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        a, b = line.split()[:2]
        pairs.add((int(a), int(b)))
    return len(pairs)


def recount_stats(vertices, edges):
    adj = adjacency_from(edges)
    m = sum(len(n) for n in adj.values())
    indeg = defaultdict(int)
    for nbrs in adj.values():
        for d in nbrs:
            indeg[d] += 1
    n = len(vertices)
    return n, m, m / n, max(indeg.values(), default=0)
