import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from itergraph.graph import Graph

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile("thorough", parent=settings.get_profile("default"), max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@st.composite
def edge_lists(draw, max_nodes=12, max_edges=40, weighted=False, sparse_ids=False):
    """Random directed edge lists as ``(src, dst, weight)`` triples."""
    n = draw(st.integers(1, max_nodes))
    if sparse_ids:
        ids = sorted(draw(st.sets(st.integers(0, 10_000), min_size=n, max_size=n)))
    else:
        ids = list(range(n))
    vid = st.sampled_from(ids)
    weight = st.floats(0.01, 10.0, allow_nan=False) if weighted else st.just(1.0)
    edges = draw(st.lists(st.tuples(vid, vid, weight), max_size=max_edges))
    return ids, edges


def graph_from(ids, edges):
    src = [e[0] for e in edges]
    dst = [e[1] for e in edges]
    w = [e[2] for e in edges]
    return Graph.from_edges(src, dst, w, vertices=ids)


@pytest.fixture
def chain4():
    return Graph.from_edges([0, 1, 2], [1, 2, 3])


@pytest.fixture
def small_weighted():
    rng = np.random.default_rng(11)
    n, m = 60, 240
    src = rng.integers(0, n, m)
    dst = rng.integers(0, n, m)
    keep = src != dst
    w = rng.uniform(0.1, 3.0, m)
    return Graph.from_edges(src[keep], dst[keep], w[keep], vertices=range(n))


def edge_triples(g):
    src, dst, w = g.edge_arrays()
    return list(zip(src.tolist(), dst.tolist(), w.tolist()))


def likelihoods(states):
    """``{v: tuple}`` from a StateTable or an oracle state map."""
    items = states.to_dict().items() if hasattr(states, "to_dict") else states.items()
    return {v: tuple(s.value.likelihood) for v, s in items}


def distances(states):
    items = states.to_dict().items() if hasattr(states, "to_dict") else states.items()
    return {v: s.value for v, s in items}


def assert_labels_close(got, expected, tol=1e-9):
    assert got.keys() == expected.keys()
    worst = max((abs(a - b) for v in got for a, b in zip(got[v], expected[v])), default=0.0)
    assert worst <= tol, worst


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
