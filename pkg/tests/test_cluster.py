import os
import threading
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from itergraph.cluster import (
    CostModel,
    SimulatedDfs,
    TransferLedger,
    WorkerPool,
    dfs_read,
    dfs_write,
    partition_messages,
    route_messages,
    run_phase,
)
from itergraph.errors import DfsError, WorkerFailure
from itergraph.graph import generate_power_law_graph, hash_partition
from itergraph.programs import RipProgram, SsspProgram
from itergraph.records import HEADER, MessageBatch
from itergraph.engines import bsp_run, mr2_run, mr_run


# -- worker pool --------------------------------------------------------------------


@pytest.mark.parametrize("threads", [1, 4])
def test_every_task_runs_exactly_once(threads):
    seen = Counter()
    lock = threading.Lock()

    def task(t, ctx):
        with lock:
            seen[t] += 1
        return t * t

    with WorkerPool(4, threads=threads) as pool:
        results, _ = run_phase(pool, range(8), task)
    assert seen == Counter(range(8))
    assert results == [t * t for t in range(8)]


def test_empty_phase_reaches_the_barrier():
    with WorkerPool(3) as pool:
        results, ledger = pool.run_phase([], lambda t, ctx: 1 / 0)
        assert results == [] and ledger == TransferLedger()
        assert pool.generation == 1


def test_tasks_are_assigned_round_robin():
    with WorkerPool(3, threads=3) as pool:
        results, _ = pool.run_phase(range(7), lambda t, ctx: ctx.worker_id)
    assert results == [t % 3 for t in range(7)]


@pytest.mark.parametrize("threads", [1, 4])
def test_failure_identifies_the_task(threads):
    def task(t, ctx):
        if t == 6:
            raise RuntimeError("boom")

    with WorkerPool(4, threads=threads) as pool:
        with pytest.raises(WorkerFailure) as info:
            pool.run_phase(range(8), task)
    assert info.value.task_index == 6
    assert isinstance(info.value.cause, RuntimeError)


def test_simultaneous_failures_report_the_lowest_index():
    gate = threading.Barrier(2, timeout=5)

    def task(t, ctx):
        gate.wait()
        raise RuntimeError(t)

    with WorkerPool(2, threads=2) as pool:
        with pytest.raises(WorkerFailure) as info:
            pool.run_phase([1, 0], task)
    assert info.value.task_index == 0


def test_barrier_hooks_and_local_clearing():
    generations = []
    with WorkerPool(2, clear_local_at_barrier=True) as pool:
        pool.barrier_hooks.append(lambda p: generations.append(p.generation))
        pool.run_phase(range(2), lambda t, ctx: ctx.local.update(x=t))
        assert pool.local == [{}, {}]
        pool.run_phase(range(2), lambda t, ctx: None)
    assert generations == [1, 2]


def test_worker_ledgers_merge_to_single_worker_total():
    def task(t, ctx):
        ctx.ledger.msg_count += t
        ctx.ledger.msg_bytes += 3 * t
        ctx.ledger.structure_bytes += 1

    totals = []
    for workers in (1, 4):
        with WorkerPool(workers) as pool:
            totals.append(pool.run_phase(range(20), task)[1])
    assert totals[0] == totals[1] == TransferLedger(190, 570, 20)


@given(st.lists(st.tuples(st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000)), max_size=8),
       st.randoms())
def test_ledger_merge_is_order_free(counts, rnd):
    ledgers = [TransferLedger(*c) for c in counts]
    shuffled = ledgers[:]
    rnd.shuffle(shuffled)
    assert TransferLedger.merge(ledgers) == TransferLedger.merge(shuffled)


def test_worker_pool_validates_size():
    with pytest.raises(ValueError):
        WorkerPool(0)


# -- simulated DFS ------------------------------------------------------------------


def _batch(n, seed=0):
    rng = np.random.default_rng(seed)
    return MessageBatch(rng.integers(0, 100, n), rng.integers(0, 100, n), rng.random((n, 2)))


def test_dfs_round_trip_of_100_records(tmp_path):
    dfs = SimulatedDfs(tmp_path)
    m = _batch(100)
    n = dfs_write(dfs, "run/0001/msgs-0.bin", m)
    (back,) = dfs_read(dfs, "run/0001/msgs-0.bin")
    assert np.array_equal(back.dst, m.dst) and np.array_equal(back.payload, m.payload)
    assert dfs.counters() == (n, n)
    assert n == os.path.getsize(tmp_path / "run/0001/msgs-0.bin")


def test_dfs_empty_write_costs_only_the_header(tmp_path):
    dfs = SimulatedDfs(tmp_path)
    assert dfs_write(dfs, "e.bin", MessageBatch.empty(1, np.int64)) == HEADER.size
    (back,) = dfs_read(dfs, "e.bin")
    assert len(back) == 0


def test_dfs_missing_file_is_named(tmp_path):
    with pytest.raises(DfsError, match="nope/x.bin"):
        SimulatedDfs(tmp_path).read("nope/x.bin")


def test_dfs_serialization_failure(tmp_path):
    with pytest.raises(DfsError):
        SimulatedDfs(tmp_path).write_records("bad.bin", [object()])


def test_dfs_detects_concurrent_writes_to_one_file(tmp_path):
    dfs = SimulatedDfs(tmp_path)
    started, release = threading.Event(), threading.Event()

    class SlowBytes(bytes):
        def __len__(self):
            started.set()
            release.wait(5)
            return bytes.__len__(self)

    t = threading.Thread(target=dfs.write, args=("same.bin", SlowBytes(b"abc")))
    t.start()
    started.wait(5)
    try:
        with pytest.raises(DfsError, match="concurrent"):
            dfs.write("same.bin", b"xyz")
    finally:
        release.set()
        t.join()
    dfs.write("other.bin", b"ok")


def test_dfs_counters_only_grow(tmp_path):
    dfs = SimulatedDfs(tmp_path)
    marks = [dfs.counters()]
    for i in range(5):
        dfs_write(dfs, f"f{i}.bin", _batch(i))
        dfs_read(dfs, f"f{i}.bin")
        marks.append(dfs.counters())
    assert all(a[0] <= b[0] and a[1] <= b[1] for a, b in zip(marks, marks[1:]))


def test_cost_model_rejects_negative_rates():
    with pytest.raises(ValueError):
        CostModel(network_s_per_mib=-1)


# -- routing ------------------------------------------------------------------------


def test_route_dest_7_of_4_lands_in_3():
    m = MessageBatch(np.array([7]), np.array([0]), np.zeros((1, 1)))
    parts = route_messages(m, 4)
    assert [len(p) for p in parts] == [0, 0, 0, 1]
    assert hash_partition(7, 4) == 3


def test_single_partition_moves_no_bytes():
    ledger = TransferLedger()
    route_messages(_batch(50), 1, ledger)
    assert ledger.msg_count == 50 and ledger.msg_bytes == 0


def test_only_cross_partition_messages_cost_bytes():
    m = MessageBatch(np.array([1, 2, 3, 4]), np.array([3, 2, 0, 1]), np.zeros((4, 1)))
    ledger = TransferLedger()
    route_messages(m, 2, ledger)
    # (1<-3) and (2<-2) stay local, the other two cross
    assert ledger.msg_bytes == 2 * m.record_size


@given(st.integers(0, 300), st.integers(1, 8), st.integers(0, 1000))
def test_route_preserves_the_multiset_and_sorts_each_part(n, parts, seed):
    m = _batch(n, seed)
    out = route_messages(m, parts)
    assert len(out) == parts
    rows = lambda b: Counter(zip(b.dst.tolist(), b.src.tolist(), map(tuple, b.payload.tolist())))
    union = Counter()
    for p, part in enumerate(out):
        assert part.is_sorted()
        assert np.all(hash_partition(part.dst, parts) == p)
        union += rows(part)
    assert union == rows(m)


def test_partition_messages_of_sorted_input():
    m = _batch(200).sorted()
    for p, part in enumerate(partition_messages(m, 3)):
        assert part.is_sorted() and np.all(part.dst % 3 == p)


# -- cross-cutting invariants measured through the engines ------------------------------


def test_cost_model_changes_no_results():
    g = generate_power_law_graph(300, 3, 2.5, 1)
    slow = CostModel(network_s_per_mib=0.01, disk_s_per_mib=0.01)
    program = RipProgram({int(g.ids[0]): (1.0, 0.0)})
    for run in (mr_run, mr2_run, bsp_run):
        plain = run(g, program, 3, 2).states.to_tsv()
        delayed = run(g, program, 3, 2, cost_model=slow).states.to_tsv()
        assert plain == delayed


def test_mr_write_bytes_equal_file_sizes(tmp_path):
    g = generate_power_law_graph(200, 3, 2.5, 2)
    dfs = SimulatedDfs(tmp_path)
    result = mr_run(g, SsspProgram(int(g.ids[0])), 2, 3, dfs=dfs, keep_files=True)
    run = result.metrics.run_id
    iteration_one = tmp_path / run / "0001"
    on_disk = sum(f.stat().st_size for f in iteration_one.iterdir())
    assert result.metrics.iterations[1].dfs_write_bytes == sum(
        f.stat().st_size for f in (tmp_path / run / "0002").iterdir())
    assert result.metrics.iterations[0].dfs_write_bytes == on_disk + sum(
        f.stat().st_size for f in (tmp_path / run / "0000").iterdir())
    total = sum(f.stat().st_size for f in (tmp_path / run).rglob("*.bin"))
    assert dfs.write_bytes == total
