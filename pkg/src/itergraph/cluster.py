"""Simulated cluster substrate: worker pool, local-disk DFS, routing, accounting."""

from __future__ import annotations

import os
import shutil
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .errors import DfsError, WorkerFailure
from .graph import hash_partition
from .records import MessageBatch, fits_packed_key, packed_key, bit_reversed, decode_blocks

MIB = 1 << 20


@dataclass(frozen=True)
class CostModel:
    """Optional injected delays, in seconds per MiB moved.  Zero means off."""

    network_s_per_mib: float = 0.0
    disk_s_per_mib: float = 0.0

    def __post_init__(self):
        if self.network_s_per_mib < 0 or self.disk_s_per_mib < 0:
            raise ValueError("cost model rates must be non-negative")

    def network_delay(self, nbytes):
        if self.network_s_per_mib and nbytes:
            time.sleep(nbytes / MIB * self.network_s_per_mib)

    def disk_delay(self, nbytes):
        if self.disk_s_per_mib and nbytes:
            time.sleep(nbytes / MIB * self.disk_s_per_mib)


@dataclass
class TransferLedger:
    """Monotonic transfer counters; per-worker instances are merged at barriers."""

    msg_count: int = 0
    msg_bytes: int = 0
    structure_bytes: int = 0

    def __add__(self, other):
        return TransferLedger(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def add(self, other):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    @classmethod
    def merge(cls, ledgers):
        total = cls()
        for ledger in ledgers:
            total.add(ledger)
        return total


class SimulatedDfs:
    """Local-disk stand-in for a distributed file system.

    Names are relative paths below ``root``.  ``read_bytes`` and
    ``write_bytes`` count exactly the bytes moved.  Concurrent writes to one
    name raise :class:`DfsError`.
    """

    def __init__(self, root, cost_model=None):
        self.root = os.fspath(root)
        self.cost_model = cost_model or CostModel()
        self.read_bytes = 0
        self.write_bytes = 0
        self._lock = threading.Lock()
        self._writing = set()
        os.makedirs(self.root, exist_ok=True)

    def path(self, name):
        return os.path.join(self.root, name)

    def write(self, name, data) -> int:
        with self._lock:
            if name in self._writing:
                raise DfsError(f"concurrent write to {name}")
            self._writing.add(name)
        try:
            path = self.path(name)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(data)
            n = len(data)
            self.cost_model.disk_delay(n)
            with self._lock:
                self.write_bytes += n
            return n
        finally:
            with self._lock:
                self._writing.discard(name)

    def read(self, name) -> bytes:
        try:
            with open(self.path(name), "rb") as fh:
                data = fh.read()
        except FileNotFoundError:
            raise DfsError(f"missing DFS file {name}") from None
        self.cost_model.disk_delay(len(data))
        with self._lock:
            self.read_bytes += len(data)
        return data

    def write_records(self, name, batches) -> int:
        """Encode one or more record batches into a single file."""
        if not isinstance(batches, (list, tuple)):
            batches = [batches]
        try:
            data = b"".join(b.encode() for b in batches)
        except (AttributeError, TypeError, ValueError) as exc:
            raise DfsError(f"cannot serialize records for {name}: {exc}") from exc
        return self.write(name, data)

    def read_records(self, name) -> list:
        return decode_blocks(self.read(name))

    def exists(self, name):
        return os.path.exists(self.path(name))

    def size(self, name):
        return os.path.getsize(self.path(name))

    def listdir(self, name=""):
        try:
            return sorted(os.listdir(self.path(name)))
        except FileNotFoundError:
            return []

    def remove(self, name):
        path = self.path(name)
        if os.path.isdir(path):
            shutil.rmtree(path, ignore_errors=True)
        elif os.path.exists(path):
            os.remove(path)

    def counters(self):
        with self._lock:
            return self.read_bytes, self.write_bytes


def dfs_write(dfs: SimulatedDfs, name, records) -> int:
    return dfs.write_records(name, records)


def dfs_read(dfs: SimulatedDfs, name) -> list:
    return dfs.read_records(name)


@dataclass
class WorkerContext:
    """Per-worker scratch passed to task functions during one phase."""

    worker_id: int
    local: dict
    ledger: TransferLedger


def usable_cpus():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


class WorkerPool:
    """Fork-join pool.  Task ``i`` of a phase runs on worker ``i % num_workers``.

    Each worker processes its tasks sequentially, so ``ctx.local`` and
    ``ctx.ledger`` are never shared between threads.  ``run_phase`` returns
    only after every worker finished (the barrier).

    Logical workers are multiplexed onto at most ``threads`` OS threads
    (default: the usable CPU count).  With one thread they run inline, which
    avoids pure switching overhead on single-core hosts.
    """

    def __init__(self, num_workers, clear_local_at_barrier=False, threads=None):
        if num_workers < 1:
            raise ValueError("num_workers must be at least 1")
        self.num_workers = num_workers
        self.generation = 0
        self.clear_local_at_barrier = clear_local_at_barrier
        self.local = [dict() for _ in range(num_workers)]
        self.barrier_hooks = []
        if threads is None:
            threads = usable_cpus()
        self.threads = max(1, min(num_workers, threads))
        self._executor = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def run_phase(self, tasks, task_fn):
        """Run ``task_fn(task, ctx)`` for every task; return ``(results, merged_ledger)``."""
        tasks = list(tasks)
        results = [None] * len(tasks)
        ledgers = [TransferLedger() for _ in range(self.num_workers)]
        failure = []
        abort = threading.Event()

        def work(w):
            ctx = WorkerContext(w, self.local[w], ledgers[w])
            for i in range(w, len(tasks), self.num_workers):
                if abort.is_set():
                    return
                try:
                    results[i] = task_fn(tasks[i], ctx)
                except Exception as exc:
                    failure.append((i, exc))
                    abort.set()
                    return

        if self._executor is None or len(tasks) <= 1:
            for w in range(min(self.num_workers, max(len(tasks), 1))):
                work(w)
        else:
            for fut in [self._executor.submit(work, w) for w in range(min(self.num_workers, len(tasks)))]:
                fut.result()
        self.barrier()
        if failure:
            index, exc = min(failure, key=lambda item: item[0])
            raise WorkerFailure(index, exc) from exc
        return results, TransferLedger.merge(ledgers)

    def barrier(self):
        self.generation += 1
        if self.clear_local_at_barrier:
            for store in self.local:
                store.clear()
        for hook in self.barrier_hooks:
            hook(self)


def run_phase(pool: WorkerPool, tasks, task_fn):
    return pool.run_phase(tasks, task_fn)


def partition_messages(messages: MessageBatch, num_partitions, presorted=False):
    """Split ``messages`` by destination partition, each part in canonical order.

    With ``presorted`` the batch is already grouped by partition, each group
    in canonical order.
    """
    return _split(messages, num_partitions, presorted)[0]


def _split(messages, num_partitions, presorted):
    if num_partitions == 1:
        return [messages if presorted else messages.sorted()], None
    if len(messages) == 0:
        return [messages] * num_partitions, None
    part = hash_partition(messages.dst, num_partitions)
    if presorted:
        ordered = messages
    elif messages.is_sorted():
        small = part.astype(np.int16) if num_partitions < (1 << 15) else part
        ordered = messages.take(np.argsort(small, kind="stable"))
    else:
        # partition-major key: (part, dst // P) preserves dst order within a part
        major = part * (int(messages.dst.max()) // num_partitions + 1) + messages.dst // num_partitions
        if fits_packed_key(major, messages.src):
            order = np.argsort(packed_key(major, messages.src))
        else:
            order = np.lexsort((bit_reversed(messages.src), messages.dst, part))
        ordered = messages.take(order)
    bounds = np.zeros(num_partitions + 1, dtype=np.int64)
    np.cumsum(np.bincount(part, minlength=num_partitions), out=bounds[1:])
    return [
        MessageBatch(ordered.dst[lo:hi], ordered.src[lo:hi], ordered.payload[lo:hi])
        for lo, hi in zip(bounds[:-1], bounds[1:])
    ], part


def route_messages(messages: MessageBatch, num_partitions, ledger=None, presorted=False):
    """Route messages to their destination partitions.

    Every message is counted in ``msg_count``; only messages whose source and
    destination partitions differ add to ``msg_bytes``.
    """
    parts, part = _split(messages, num_partitions, presorted)
    if ledger is not None and len(messages):
        if part is None:
            remote = 0
        else:
            remote = np.count_nonzero(part != hash_partition(messages.src, num_partitions))
        ledger.msg_count += len(messages)
        ledger.msg_bytes += int(remote) * messages.record_size
    return parts
