"""Per-iteration measurements, derived statistics and CSV export."""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = (
    "run_id", "engine", "algorithm", "dataset", "workers", "iteration", "wall_ms",
    "msg_count", "msg_bytes", "structure_bytes", "dfs_read_bytes", "dfs_write_bytes",
    "active_vertices", "config_hash",
)
_INT_COLUMNS = ("workers", "iteration", "msg_count", "msg_bytes", "structure_bytes",
                "dfs_read_bytes", "dfs_write_bytes", "active_vertices")


@dataclass
class IterationMetrics:
    iteration: int
    wall_ms: float = 0.0
    msg_count: int = 0
    msg_bytes: int = 0
    structure_bytes: int = 0
    dfs_read_bytes: int = 0
    dfs_write_bytes: int = 0
    active_vertices: int = 0


@dataclass
class RunMetrics:
    """Measurements for one engine run.

    ``iterations[0]`` includes setup work (BSP load, initial DFS write, MR2
    split); the structure bytes moved by that setup are also reported
    separately in ``setup_structure_bytes``.
    """

    engine: str
    algorithm: str
    dataset: str = ""
    num_workers: int = 1
    iterations: list = field(default_factory=list)
    total_wall_ms: float = 0.0
    setup_structure_bytes: int = 0
    run_id: str = ""
    config_hash: str = ""

    @property
    def msg_count(self):
        return sum(it.msg_count for it in self.iterations)

    def column(self, name):
        return [getattr(it, name) for it in self.iterations]


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float
    zero_variance: bool = False


def mean_iteration_time(run: RunMetrics, skip_first=False) -> float:
    """Arithmetic mean of the per-iteration wall times, in milliseconds."""
    times = run.column("wall_ms")
    if skip_first:
        if len(times) < 2:
            raise ValueError("skip_first needs at least 2 iterations")
        times = times[1:]
    if not times:
        raise ValueError("run has no iterations")
    return sum(times) / len(times)


def fit_linear(points) -> LinearFit:
    """Ordinary least squares fit of ``y = slope * x + intercept``.

    A constant ``y`` series is fitted exactly; its R^2 is reported as 1.0 and
    ``zero_variance`` is set.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError("need at least 3 (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.all(x == x[0]):
        raise ValueError("x values are all equal")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    if ss_tot == 0:
        return LinearFit(slope, intercept, 1.0, zero_variance=True)
    r2 = 1.0 - ss_res / ss_tot
    return LinearFit(slope, intercept, min(1.0, max(0.0, r2)))


def _rows(runs):
    for run in runs:
        for it in run.iterations:
            yield [
                run.run_id, run.engine, run.algorithm, run.dataset, run.num_workers,
                it.iteration, repr(float(it.wall_ms)), it.msg_count, it.msg_bytes,
                it.structure_bytes, it.dfs_read_bytes, it.dfs_write_bytes,
                it.active_vertices, run.config_hash,
            ]


def export_csv(runs, sink) -> int:
    """Write a header plus one row per (run, iteration); return bytes written.

    ``sink`` is a path or a text/binary file object.
    """
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(_rows(runs))
    data = buf.getvalue().encode("utf-8")
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        try:
            sink.write(data)
        except TypeError:
            sink.write(data.decode("utf-8"))
    return len(data)


def read_csv(source) -> list[dict]:
    """Parse an exported CSV back into typed row dictionaries."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    rows = []
    for row in csv.DictReader(io.StringIO(text, newline="")):
        for name in _INT_COLUMNS:
            row[name] = int(row[name])
        row["wall_ms"] = float(row["wall_ms"])
        rows.append(row)
    return rows


class Stopwatch:
    """Monotonic millisecond timer."""

    def __init__(self):
        self._clock = time.perf_counter
        self.start = self._clock()

    def elapsed_ms(self):
        return (self._clock() - self.start) * 1000.0

    def lap_ms(self):
        now = self._clock()
        ms = (now - self.start) * 1000.0
        self.start = now
        return ms
