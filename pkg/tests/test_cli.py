import csv
import os
import subprocess
import sys

import pytest

from itergraph.cli import RunConfig, main, parse_generator, run_single, run_sweep
from itergraph.errors import ConfigError
from itergraph.metrics import read_csv


@pytest.fixture
def chain_file(tmp_path):
    path = tmp_path / "chain.txt"
    path.write_text("0 1\n1 2\n2 3\n")
    return str(path)


def states(directory):
    with open(os.path.join(directory, "states.tsv"), "rb") as fh:
        return fh.read()


def test_bsp_sssp_chain(tmp_path, chain_file):
    out = tmp_path / "out"
    code = main(["run", "--engine", "bsp", "--algorithm", "sssp", "--input", chain_file,
                 "--source", "0", "--iterations", "10", "--workers", "4", "--output", str(out)])
    assert code == 0
    assert states(out) == b"0\t0\n1\t1\n2\t2\n3\t3\n"
    rows = read_csv(out / "metrics.csv")
    assert rows and all(r["engine"] == "bsp" and r["dataset"] == "chain.txt" for r in rows)


def test_capacity_error_has_its_own_exit_code(tmp_path, chain_file, capsys):
    code = main(["run", "--engine", "bsp", "--algorithm", "sssp", "--input", chain_file,
                 "--source", "0", "--memory-budget", "10", "--output", str(tmp_path / "o")])
    assert code == 3
    assert "CapacityError" in capsys.readouterr().err
    assert not (tmp_path / "o" / "states.tsv").exists()


@pytest.mark.parametrize(
    "args",
    [
        ["--engine", "bsp", "--algorithm", "sssp"],
        ["--engine", "mr", "--algorithm", "rip", "--source", "0"],
        ["--engine", "mr", "--algorithm", "rip", "--classes", "1"],
        ["--engine", "mr", "--algorithm", "sssp", "--source", "0", "--memory-budget", "100"],
        ["--engine", "bsp", "--algorithm", "sssp", "--source", "0", "--iterations", "0"],
        ["--engine", "bsp", "--algorithm", "sssp", "--source", "0", "--workers", "0"],
        ["--engine", "bsp", "--algorithm", "sssp", "--source", "99"],
        ["--engine", "bsp", "--algorithm", "rip", "--seed-fraction", "0"],
    ],
)
def test_configuration_errors_exit_2(tmp_path, chain_file, args):
    out = tmp_path / "o"
    assert main(["run", "--input", chain_file, "--output", str(out), *args]) == 2
    assert not (out / "metrics.csv").exists()


def test_missing_and_malformed_inputs_exit_2(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1\nbroken\n")
    for path in (str(tmp_path / "missing.txt"), str(bad)):
        assert main(["run", "--engine", "mr", "--algorithm", "sssp", "--source", "0",
                     "--input", path, "--output", str(tmp_path / "o")]) == 2


def test_unknown_engine_is_rejected_by_the_parser(chain_file):
    with pytest.raises(SystemExit) as info:
        main(["run", "--engine", "spark", "--algorithm", "sssp", "--input", chain_file])
    assert info.value.code == 2


def test_generator_specs():
    assert parse_generator("n=100,seed=3") == {"n": 100, "avg": 8.0, "exp": 2.5, "seed": 3}
    assert parse_generator("n=50, avg=4.83", default_seed=9)["seed"] == 9
    for spec in ("avg=3", "n=10,foo=1", "n=ten", "n=1", "n=10,exp=1"):
        with pytest.raises(ConfigError):
            parse_generator(spec)


def test_identical_config_gives_identical_states(tmp_path):
    outputs = []
    for k in range(2):
        config = RunConfig(engine="mr2", algorithm="rip", generate="n=400,avg=4", seed=5,
                           workers=2, iterations=5, output=str(tmp_path / f"o{k}"))
        code, _, _ = run_single(config)
        assert code == 0
        outputs.append(states(config.output))
    assert outputs[0] == outputs[1]
    assert outputs[0].count(b"\n") == 400


def test_rerun_after_deleting_output_reproduces_states(tmp_path, chain_file):
    config = RunConfig(engine="mr", algorithm="rip", input=chain_file, output=str(tmp_path / "o"),
                       seed_fraction=0.5, seed=2)
    run_single(config)
    first = states(config.output)
    for name in os.listdir(config.output):
        os.remove(os.path.join(config.output, name))
    os.rmdir(config.output)
    run_single(config)
    assert states(config.output) == first


def test_rip_states_show_vector_and_argmax(tmp_path, chain_file):
    seeds = tmp_path / "seeds.txt"
    seeds.write_text("0 0.2 0.8\n")
    config = RunConfig(engine="bsp", algorithm="rip", input=chain_file, seeds=str(seeds),
                       iterations=3, output=str(tmp_path / "o"))
    assert run_single(config)[0] == 0
    lines = states(config.output).decode().splitlines()
    assert lines[0] == "0\t0.2,0.8\t1"
    assert lines[3] == "3\t0.2,0.8\t1"


def test_sweep_runs_the_product(tmp_path):
    base = RunConfig(engine="bsp", algorithm="sssp", generate="n=300,avg=4", source=0,
                     iterations=6, output=str(tmp_path / "sweep"))
    code, rows = run_sweep(base, [1, 2, 4], ["mr", "mr2", "bsp"])
    assert code == 0 and len(rows) == 9
    dirs = sorted(os.listdir(base.output))
    assert dirs == sorted(["metrics.csv", "runs.csv"] + [f"{e}-w{w}" for e in ("mr", "mr2", "bsp") for w in (1, 2, 4)])
    outputs = {states(os.path.join(base.output, r["directory"])) for r in rows}
    assert len(outputs) == 1
    metrics = read_csv(os.path.join(base.output, "metrics.csv"))
    assert len(metrics) == 9 * 6
    hashes = {r["config_hash"] for r in rows}
    assert len(hashes) == 9
    assert {m["config_hash"] for m in metrics} == hashes


def test_sweep_records_failures_and_continues(tmp_path, capsys):
    code = main(["sweep", "--engines", "bsp,mr", "--workers-list", "1,2", "--algorithm", "rip",
                 "--generate", "n=200,avg=4", "--iterations", "2", "--memory-budget", "100",
                 "--output", str(tmp_path / "s")])
    assert code == 3
    with open(tmp_path / "s" / "runs.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["engine"], r["status"]) for r in rows] == [
        ("bsp", "failed"), ("bsp", "failed"), ("mr", "ok"), ("mr", "ok")]
    assert "2 failed" in capsys.readouterr().out
    assert (tmp_path / "s" / "mr-w2" / "states.tsv").exists()


def test_config_hash_ignores_output_only():
    a = RunConfig(engine="mr", algorithm="sssp", input="g", source=0, output="x")
    assert a.config_hash() == RunConfig(engine="mr", algorithm="sssp", input="g", source=0, output="y").config_hash()
    assert a.config_hash() != RunConfig(engine="mr", algorithm="sssp", input="g", source=1).config_hash()


def test_dfs_root_from_environment(tmp_path, chain_file, monkeypatch):
    root = tmp_path / "dfsroot"
    monkeypatch.setenv("ITERGRAPH_DFS_ROOT", str(root))
    config = RunConfig(engine="mr", algorithm="sssp", input=chain_file, source=0, keep_files=True,
                       output=str(tmp_path / "o"))
    assert run_single(config)[0] == 0
    (session,) = os.listdir(root)
    assert any(name.startswith("mr-") for name in os.listdir(root / session))


def test_module_entry_point(tmp_path, chain_file):
    proc = subprocess.run(
        [sys.executable, "-m", "itergraph", "run", "--engine", "mr2", "--algorithm", "sssp",
         "--input", chain_file, "--source", "1", "--output", str(tmp_path / "o")],
        capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert states(tmp_path / "o") == b"0\tinf\n1\t0\n2\t1\n3\t2\n"


def test_sweep_exports_both_means(tmp_path):
    base = RunConfig(engine="mr", algorithm="rip", generate="n=200,avg=4", iterations=4,
                     output=str(tmp_path / "s"))
    run_sweep(base, [2], ["mr2", "bsp"])
    metrics = read_csv(tmp_path / "s" / "metrics.csv")
    with open(tmp_path / "s" / "runs.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        times = [m["wall_ms"] for m in metrics if m["config_hash"] == row["config_hash"]]
        assert float(row["mean_ms"]) == pytest.approx(sum(times) / len(times))
        assert float(row["mean_ms_after_first"]) == pytest.approx(sum(times[1:]) / len(times[1:]))
