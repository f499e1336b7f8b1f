"""Command-line entry point.

Two subcommands:

    itergraph run   --engine bsp --algorithm sssp --input chain.txt --source 0 ...
    itergraph sweep --engines mr,mr2,bsp --workers-list 1,2,4 --algorithm rip ...

``run`` writes ``metrics.csv`` and ``states.tsv`` into ``--output``.  ``sweep``
runs the cartesian product of engines and worker counts, one subdirectory per
run, plus a combined ``metrics.csv`` and a ``runs.csv`` status table.

Exit codes: 0 ok, 2 configuration error, 3 capacity error, 4 engine fault.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, replace

from .cluster import CostModel
from .engines import ENGINES, run_engine
from .errors import CapacityError, ConfigError, EngineFault, GraphFormatError, ItergraphError
from .graph import generate_power_law_graph, generate_seed_labels, load_edge_list, load_seed_labels
from .metrics import export_csv, mean_iteration_time
from .programs import RipProgram, SsspProgram

log = logging.getLogger("itergraph")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_FAULT = 4

ALGORITHMS = ("sssp", "rip")
GENERATOR_KEYS = {"n": int, "avg": float, "exp": float, "seed": int}
GENERATOR_DEFAULTS = {"avg": 8.0, "exp": 2.5}


@dataclass(frozen=True)
class RunConfig:
    engine: str
    algorithm: str
    input: str | None = None
    generate: str | None = None
    workers: int = 1
    iterations: int = 10
    source: int | None = None
    seeds: str | None = None
    classes: int = 2
    seed_fraction: float = 0.1
    combiner: bool = False
    clamp_seeds: bool = True
    memory_budget: int | None = None
    network_s_per_mib: float = 0.0
    disk_s_per_mib: float = 0.0
    default_weight: float = 1.0
    seed: int = 0
    dataset: str | None = None
    output: str = "out"
    keep_files: bool = field(default=False, compare=False)

    def validate(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"unknown engine {self.engine!r}; choose from {sorted(ENGINES)}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {list(ALGORITHMS)}")
        if (self.input is None) == (self.generate is None):
            raise ConfigError("give exactly one of --input and --generate")
        if self.generate is not None:
            parse_generator(self.generate, self.seed)
        if self.workers < 1:
            raise ConfigError("--workers must be at least 1")
        if self.iterations < 1:
            raise ConfigError("--iterations must be at least 1")
        if self.algorithm == "sssp":
            if self.source is None:
                raise ConfigError("sssp requires --source")
            if self.seeds is not None:
                raise ConfigError("--seeds only applies to rip")
        else:
            if self.source is not None:
                raise ConfigError("--source only applies to sssp")
            if self.classes < 2:
                raise ConfigError("rip requires --classes of at least 2")
            if not 0.0 < self.seed_fraction <= 1.0:
                raise ConfigError("--seed-fraction must be in (0, 1]")
        if self.memory_budget is not None:
            if self.engine != "bsp":
                raise ConfigError("--memory-budget only applies to the bsp engine")
            if self.memory_budget <= 0:
                raise ConfigError("--memory-budget must be positive")
        if self.network_s_per_mib < 0 or self.disk_s_per_mib < 0:
            raise ConfigError("cost-model rates must be non-negative")
        if self.default_weight < 0:
            raise ConfigError("--default-weight must be non-negative")
        return self

    def config_hash(self) -> str:
        """Digest of every setting that can influence results (not the output path)."""
        settings = asdict(self)
        settings.pop("output")
        settings.pop("keep_files")
        blob = json.dumps(settings, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dataset_name(self):
        if self.dataset:
            return self.dataset
        if self.input is not None:
            return os.path.basename(self.input)
        return "gen:" + self.generate


def parse_generator(spec, default_seed=0) -> dict:
    """Parse ``n=...,avg=...,exp=...,seed=...``; ``n`` is required."""
    out = dict(GENERATOR_DEFAULTS, seed=default_seed)
    for item in filter(None, (s.strip() for s in spec.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in GENERATOR_KEYS:
            raise ConfigError(f"bad generator item {item!r}; expected keys {sorted(GENERATOR_KEYS)}")
        try:
            out[key] = GENERATOR_KEYS[key](value.strip())
        except ValueError:
            raise ConfigError(f"bad value for generator key {key!r}: {value!r}") from None
    if "n" not in out:
        raise ConfigError("generator spec needs n=<vertices>")
    if out["n"] < 2 or out["avg"] < 1 or not out["exp"] > 1:
        raise ConfigError("generator needs n >= 2, avg >= 1 and exp > 1")
    return out


def load_graph(config: RunConfig):
    if config.generate is not None:
        g = parse_generator(config.generate, config.seed)
        return generate_power_law_graph(g["n"], g["avg"], g["exp"], g["seed"])
    try:
        return load_edge_list(config.input, default_weight=config.default_weight)
    except OSError as exc:
        raise ConfigError(f"cannot read input {config.input}: {exc.strerror or exc}") from exc


def build_program(config: RunConfig, graph):
    if config.algorithm == "sssp":
        return SsspProgram(config.source)
    if config.seeds is not None:
        try:
            seeds = load_seed_labels(config.seeds, config.classes, vertices=graph)
        except OSError as exc:
            raise ConfigError(f"cannot read seeds {config.seeds}: {exc.strerror or exc}") from exc
        if seeds.ignored:
            log.warning("ignored %d seed labels for vertices not in the graph", seeds.ignored)
    else:
        seeds = generate_seed_labels(graph, config.classes, config.seed_fraction, config.seed)
    return RipProgram(seeds, config.classes, config.clamp_seeds)


def execute(config: RunConfig, graph=None):
    """Run one configuration and write its outputs; exceptions propagate."""
    config.validate()
    graph = graph if graph is not None else load_graph(config)
    program = build_program(config, graph)
    options = dict(
        combiner=config.combiner,
        cost_model=CostModel(config.network_s_per_mib, config.disk_s_per_mib),
        dataset=config.dataset_name(),
    )
    if config.engine == "bsp":
        options["memory_budget"] = config.memory_budget
    else:
        options["keep_files"] = config.keep_files
    result = run_engine(config.engine, graph, program, config.iterations, config.workers, **options)
    result.metrics.config_hash = config.config_hash()
    os.makedirs(config.output, exist_ok=True)
    export_csv([result.metrics], os.path.join(config.output, "metrics.csv"))
    with open(os.path.join(config.output, "states.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(result.states.to_tsv())
    return result


def exit_code_for(exc) -> int:
    if isinstance(exc, CapacityError):
        return EXIT_CAPACITY
    if isinstance(exc, (ConfigError, GraphFormatError)):
        return EXIT_CONFIG
    if isinstance(exc, (EngineFault, ItergraphError)):
        return EXIT_FAULT
    raise exc


def run_single(config: RunConfig):
    """Execute one run; return ``(exit_code, result or None, message)``."""
    try:
        result = execute(config)
    except ItergraphError as exc:
        return exit_code_for(exc), None, f"{type(exc).__name__}: {exc}"
    return EXIT_OK, result, "ok"


def _means(metrics):
    """Mean iteration time with and without the first iteration, as CSV strings."""
    rows = metrics.iterations
    return {
        "mean_ms": repr(mean_iteration_time(metrics)) if rows else "",
        "mean_ms_after_first": repr(mean_iteration_time(metrics, skip_first=True)) if len(rows) > 1 else "",
    }


def run_sweep(base: RunConfig, workers_list, engines):
    """Run every (engine, workers) pair; return ``(exit_code, rows)``.

    A failed run is recorded in ``runs.csv`` and the sweep carries on.  The
    graph is built once and shared.
    """
    if not workers_list or not engines:
        raise ConfigError("sweep needs at least one engine and one worker count")
    # bsp-only options are dropped for the MapReduce engines of a sweep
    configs = [replace(base, engine=e, workers=w, output=os.path.join(base.output, f"{e}-w{w}"),
                       memory_budget=base.memory_budget if e == "bsp" else None)
               for e in engines for w in workers_list]
    for c in configs:
        c.validate()
    graph = load_graph(base)
    runs, rows = [], []
    for c in configs:
        means = {"mean_ms": "", "mean_ms_after_first": ""}
        try:
            result = execute(c, graph)
            code, message = EXIT_OK, "ok"
            runs.append(result.metrics)
            means = _means(result.metrics)
        except ItergraphError as exc:
            code, message = exit_code_for(exc), f"{type(exc).__name__}: {exc}"
            log.error("%s with %d workers failed: %s", c.engine, c.workers, message)
        rows.append({"engine": c.engine, "workers": c.workers, "exit_code": code,
                     "status": "ok" if code == EXIT_OK else "failed", "message": message,
                     "directory": os.path.relpath(c.output, base.output), "config_hash": c.config_hash(),
                     **means})
    os.makedirs(base.output, exist_ok=True)
    export_csv(runs, os.path.join(base.output, "metrics.csv"))
    with open(os.path.join(base.output, "runs.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\r\n")
        writer.writeheader()
        writer.writerows(rows)
    worst = max((r["exit_code"] for r in rows), default=EXIT_OK)
    return worst, rows


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _add_common(p, sweep=False):
    if not sweep:
        p.add_argument("--engine", required=True, choices=sorted(ENGINES))
        p.add_argument("--workers", type=int, default=1)
    p.add_argument("--algorithm", required=True, choices=ALGORITHMS)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="edge list file: 'src dst [weight]' per line")
    src.add_argument("--generate", metavar="SPEC", help="power-law generator, e.g. n=10000,avg=8,exp=2.5,seed=1")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--source", type=int, help="sssp source vertex")
    p.add_argument("--seeds", help="rip seed labels: 'vertex p_0 ... p_{C-1}' per line")
    p.add_argument("--classes", type=int, default=2, help="rip class count")
    p.add_argument("--seed-fraction", type=float, default=0.1,
                   help="fraction of vertices given random seed labels when --seeds is absent")
    p.add_argument("--combiner", action="store_true")
    p.add_argument("--clamp-seeds", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--memory-budget", type=int, metavar="BYTES", help="bsp resident-memory budget")
    p.add_argument("--network-s-per-mib", type=float, default=0.0)
    p.add_argument("--disk-s-per-mib", type=float, default=0.0)
    p.add_argument("--default-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0, help="random seed for generated graphs and labels")
    p.add_argument("--dataset", help="dataset label written to the metrics")
    p.add_argument("--output", default="out")
    p.add_argument("--keep-files", action="store_true", help="keep the simulated DFS files")


def build_parser():
    parser = argparse.ArgumentParser(prog="itergraph", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="execute a single run"))
    sweep = sub.add_parser("sweep", help="run every engine x worker-count combination")
    sweep.add_argument("--engines", type=_csv_list(str), default=["mr", "mr2", "bsp"])
    sweep.add_argument("--workers-list", type=_csv_list(int), default=[1, 2, 4])
    _add_common(sweep, sweep=True)
    return parser


def config_from_args(args) -> RunConfig:
    return RunConfig(
        engine=getattr(args, "engine", "bsp"),
        algorithm=args.algorithm,
        input=args.input,
        generate=args.generate,
        workers=getattr(args, "workers", 1),
        iterations=args.iterations,
        source=args.source,
        seeds=args.seeds,
        classes=args.classes,
        seed_fraction=args.seed_fraction,
        combiner=args.combiner,
        clamp_seeds=args.clamp_seeds,
        memory_budget=args.memory_budget,
        network_s_per_mib=args.network_s_per_mib,
        disk_s_per_mib=args.disk_s_per_mib,
        default_weight=args.default_weight,
        seed=args.seed,
        dataset=args.dataset,
        output=args.output,
        keep_files=args.keep_files,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="itergraph: %(levelname)s: %(message)s")
    config = config_from_args(args)
    if args.command == "run":
        code, result, message = run_single(config)
        if code == EXIT_OK:
            rows = result.metrics.iterations
            after = f", {mean_iteration_time(result.metrics, skip_first=True):.1f} ms after the first" \
                if len(rows) > 1 else ""
            print(f"{config.engine} {config.algorithm}: {len(rows)} iterations, "
                  f"mean {mean_iteration_time(result.metrics):.1f} ms{after}; outputs in {config.output}")
        else:
            print(f"itergraph: error: {message}", file=sys.stderr)
        return code
    try:
        code, rows = run_sweep(config, args.workers_list, args.engines)
    except ItergraphError as exc:
        print(f"itergraph: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"sweep: {len(rows)} runs, {failed} failed, outputs in {config.output}")
    return code


if __name__ == "__main__":
    sys.exit(main())
