import csv
import io
import statistics

import pytest
from hypothesis import given
from hypothesis import strategies as st

from itergraph.engines import bsp_run, mr2_run, mr_run
from itergraph.graph import generate_power_law_graph
from itergraph.metrics import (
    CSV_COLUMNS,
    IterationMetrics,
    RunMetrics,
    export_csv,
    fit_linear,
    mean_iteration_time,
    read_csv,
)
from itergraph.programs import RipProgram, SsspProgram


def run_with(times, **kw):
    run = RunMetrics("mr", "rip", "toy", 2, run_id="r1", **kw)
    for i, t in enumerate(times):
        run.iterations.append(IterationMetrics(i, t, msg_count=10 * i, msg_bytes=240 * i,
                                               structure_bytes=7, active_vertices=i))
    return run


# -- mean_iteration_time ------------------------------------------------------------


def test_mean_examples():
    assert mean_iteration_time(run_with([100, 100, 100])) == 100
    assert mean_iteration_time(run_with([300, 100, 100]), skip_first=True) == 100
    assert mean_iteration_time(run_with([300, 100, 100])) == pytest.approx(500 / 3)


def test_mean_errors():
    with pytest.raises(ValueError):
        mean_iteration_time(run_with([]))
    with pytest.raises(ValueError):
        mean_iteration_time(run_with([5.0]), skip_first=True)


def test_mean_matches_recomputation_from_csv():
    buf = io.BytesIO()
    run = run_with([12.5, 9.25, 10.0, 11.75])
    export_csv([run], buf)
    rows = list(csv.DictReader(io.StringIO(buf.getvalue().decode())))
    assert statistics.fmean(float(r["wall_ms"]) for r in rows) == mean_iteration_time(run)


# -- fit_linear ---------------------------------------------------------------------


def test_exact_line():
    fit = fit_linear([(1, 10), (2, 20), (3, 30)])
    assert (fit.slope, fit.intercept, fit.r_squared) == (pytest.approx(10), pytest.approx(0, abs=1e-12), 1.0)


def test_constant_series_is_flagged():
    fit = fit_linear([(1, 10), (2, 10), (3, 10)])
    assert (fit.slope, fit.r_squared, fit.zero_variance) == (0, 1.0, True)


@pytest.mark.parametrize("points", [[(1, 1), (2, 2)], [(2, 1), (2, 5), (2, 9)], [1, 2, 3]])
def test_fit_rejects_degenerate_input(points):
    with pytest.raises(ValueError):
        fit_linear(points)


@given(st.lists(st.tuples(st.integers(0, 50), st.floats(-1e3, 1e3)), min_size=3, max_size=12))
def test_r_squared_in_unit_interval(points):
    if len({x for x, _ in points}) < 2:
        return
    fit = fit_linear(points)
    assert 0.0 <= fit.r_squared <= 1.0


def test_fit_against_textbook_formula():
    pts = [(2, 41.0), (4, 79.5), (6, 122.0), (8, 158.0), (10, 201.5)]
    xs, ys = zip(*pts)
    slope, intercept = statistics.linear_regression(xs, ys)
    r = statistics.correlation(xs, ys)
    fit = fit_linear(pts)
    assert fit.slope == pytest.approx(slope)
    assert fit.intercept == pytest.approx(intercept)
    assert fit.r_squared == pytest.approx(r * r)


# -- export ---------------------------------------------------------------------------


def test_export_has_header_plus_one_line_per_iteration(tmp_path):
    path = tmp_path / "m.csv"
    n = export_csv([run_with([1.0] * 10)], path)
    text = path.read_bytes()
    assert n == len(text)
    lines = text.decode().splitlines()
    assert len(lines) == 11
    assert lines[0].split(",")[:13] == list(CSV_COLUMNS[:13])


def test_re_export_is_byte_identical():
    run = run_with([3.14159, 2.0, 1e-3])
    a, b = io.BytesIO(), io.BytesIO()
    export_csv([run], a)
    export_csv([run], b)
    assert a.getvalue() == b.getvalue()


def test_round_trip_recovers_counters():
    run = run_with([0.1, 0.2, 0.30000000000000004])
    run.dataset = 'name, with "quotes"'
    buf = io.StringIO()
    export_csv([run], buf)
    buf.seek(0)
    rows = read_csv(buf)
    for row, it in zip(rows, run.iterations):
        assert row["dataset"] == run.dataset
        assert row["wall_ms"] == it.wall_ms
        for name in ("msg_count", "msg_bytes", "structure_bytes", "dfs_read_bytes",
                     "dfs_write_bytes", "active_vertices", "iteration"):
            assert row[name] == getattr(it, name)


# -- counters recorded by the engines --------------------------------------------------


@pytest.mark.parametrize("engine", [mr_run, mr2_run, bsp_run])
def test_engine_metrics_are_well_formed(engine):
    g = generate_power_law_graph(300, 4, 2.5, 3)
    result = engine(g, RipProgram({}), 5, 3)
    m = result.metrics
    assert [it.iteration for it in m.iterations] == list(range(5))
    for it in m.iterations:
        assert min(it.wall_ms, it.msg_count, it.msg_bytes, it.structure_bytes,
                   it.dfs_read_bytes, it.dfs_write_bytes, it.active_vertices) >= 0
    assert m.total_wall_ms >= 0.95 * sum(m.column("wall_ms"))


@pytest.mark.parametrize("engine", [mr_run, mr2_run, bsp_run])
def test_message_count_conservation(engine):
    g = generate_power_law_graph(300, 4, 2.5, 4)
    result = engine(g, RipProgram({}), 4, 2)
    assert result.metrics.msg_count == sum(result.metrics.column("msg_count"))
    # RIP sends one message per positive-weight edge per iteration
    assert result.metrics.msg_count == 4 * g.num_edges


def test_bsp_outcomes_agree_with_metric_rows():
    g = generate_power_law_graph(300, 4, 2.5, 5)
    result = bsp_run(g, SsspProgram(int(g.ids[0])), 30, 3)
    sent = [o.messages_sent for o in result.supersteps]
    assert result.metrics.msg_count == sum(sent)


def test_structure_ordering_across_engines():
    g = generate_power_law_graph(200, 3, 2.5, 6)
    program = SsspProgram(int(g.ids[0]))
    after_setup = {}
    for name, engine in (("mr", mr_run), ("mr2", mr2_run), ("bsp", bsp_run)):
        m = engine(g, program, 3, 2).metrics
        after_setup[name] = sum(m.column("structure_bytes")) - m.setup_structure_bytes
    assert after_setup["bsp"] == 0 == after_setup["mr2"] < after_setup["mr"]
