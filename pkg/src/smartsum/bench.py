"""Corpus handling, engine comparison runs, CSV output and the differential oracle."""
from __future__ import annotations

import csv
import io
import json
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from itertools import product

from . import terms as T
from .engine import ExploreConfig, Report, explore
from .interp import Trace
from .ir import Program, parse_program
from .outline import outline_program
from .solver import check_sat
from .summary import run_compositional

ENGINES = ("baseline", "summary", "summary+outline")
CSV_COLUMNS = (
    "program", "engine", "width", "loop_limit", "states_explored", "paths_completed",
    "sat_queries", "unknown_verdicts", "bug_kinds", "wall_ms", "status",
)


@dataclass(frozen=True)
class CorpusProgram:
    name: str
    text: str
    expected: frozenset  # of (kind, function)
    category: str
    width: int = 8
    description: str = ""

    def parse(self, width: int | None = None) -> Program:
        return parse_program(self.text, width or self.width)


def _from_pair(name: str, text: str, meta: dict) -> CorpusProgram:
    return CorpusProgram(
        name, text, frozenset(tuple(p) for p in meta.get("expected", ())),
        meta.get("category", name), int(meta.get("width", 8)), meta.get("description", ""),
    )


def load_corpus(directory: str | os.PathLike | None = None) -> list[CorpusProgram]:
    """Programs from ``*.ir`` files and their ``*.expect.json`` sidecars, sorted by name.

    With no directory, the corpus bundled with the package is loaded.
    """
    out = []
    if directory is None:
        root = resources.files("smartsum") / "corpus"
        entries = {p.name: p for p in root.iterdir()}
    else:
        entries = {p: os.path.join(directory, p) for p in os.listdir(directory)}
    for fname in sorted(entries):
        if not fname.endswith(".ir"):
            continue
        name = fname[:-3]
        ir = entries[fname]
        side = entries.get(name + ".expect.json")
        if directory is None:
            text = ir.read_text()
            meta = json.loads(side.read_text()) if side is not None else {}
        else:
            with open(ir) as fh:
                text = fh.read()
            meta = {}
            if side is not None:
                with open(side) as fh:
                    meta = json.load(fh)
        out.append(_from_pair(name, text, meta))
    return out


def normalize_function(name: str) -> str:
    """Map outlined loop functions (``parent$loopN``) back to their parent."""
    return name.split("$", 1)[0]


def run_engine(program: Program, engine: str, config: ExploreConfig,
               cache_dir: str | os.PathLike | None = None) -> Report:
    if engine == "baseline":
        return explore(program, config)
    if engine == "summary":
        return run_compositional(program, config, cache_dir)
    if engine == "summary+outline":
        return run_compositional(outline_program(program).program, config, cache_dir)
    raise ValueError(f"unknown engine {engine!r}")


def found_pairs(report: Report) -> set[tuple[str, str]]:
    return {(k, normalize_function(f)) for k, f in report.bug_pairs}


@dataclass(frozen=True)
class BenchRow:
    program: str
    engine: str
    width: int
    loop_limit: int
    states_explored: int
    paths_completed: int
    sat_queries: int
    unknown_verdicts: int
    bug_kinds: str
    wall_ms: float
    status: str = "ok"

    def as_list(self) -> list:
        return [self.program, self.engine, self.width, self.loop_limit, self.states_explored,
                self.paths_completed, self.sat_queries, self.unknown_verdicts, self.bug_kinds,
                f"{self.wall_ms:.1f}", self.status]

    def deterministic(self) -> tuple:
        return tuple(v for k, v in zip(CSV_COLUMNS, self.as_list()) if k != "wall_ms")


@dataclass
class BenchResult:
    rows: list[BenchRow]
    missed: list[tuple[str, str, tuple[str, str]]]  # (program, engine, pair)


def _bench_one(args) -> tuple[BenchRow, list]:
    prog, engine, config, repeat = args
    program = prog.parse(config.width)
    walls = []
    first = None
    for _ in range(repeat):
        rep = run_engine(program, engine, config)
        walls.append(rep.metrics.wall_ms)
        if first is None:
            first = rep
    m = first.metrics
    status = "ok"
    if first.incomplete:
        status = "timeout" if "time limit reached" in first.diagnostics else "incomplete"
    row = BenchRow(prog.name, engine, config.width, config.loop_limit, m.states_explored,
                   m.paths_completed, m.sat_queries, m.unknown_verdicts,
                   ";".join(first.bug_kinds), statistics.median(walls), status)
    missed = sorted(prog.expected - found_pairs(first))
    return row, [(prog.name, engine, p) for p in missed]


def run_bench(corpus, engines=ENGINES, config: ExploreConfig | None = None, repeat: int = 3,
              timeout: float = 300.0, workers: int = 1) -> BenchResult:
    """Run every engine on every program; wall time is the median over ``repeat`` runs."""
    if repeat < 1:
        raise ValueError("repeat must be positive")
    jobs = []
    for prog in corpus:
        cfg = config or ExploreConfig(width=prog.width)
        cfg = replace(cfg, time_limit=timeout)
        for eng in engines:
            jobs.append((prog, eng, cfg, repeat))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bench_one, jobs))
    else:
        results = [_bench_one(j) for j in jobs]
    order = {e: i for i, e in enumerate(ENGINES)}
    rows = sorted((r for r, _ in results), key=lambda r: (r.program, order.get(r.engine, 99)))
    missed = sorted(m for _, ms in results for m in ms)
    return BenchResult(rows, missed)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.as_list())
    return buf.getvalue()


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows))


# -- differential oracle ----------------------------------------------------------------

def concrete_env(symbols, inputs) -> dict[str, int]:
    """Values the concrete interpreter implies for top-level symbols.

    Inputs bind ``in<k>``; initial registers and unwritten memory read as zero.
    Symbols introduced by summaries or over-approximation stay free.
    """
    env = {}
    for name in symbols:
        if "::" in name or "#" in name:
            continue
        if name.startswith("in") and name[2:].isdigit():
            k = int(name[2:])
            env[name] = inputs[k] if k < len(inputs) else 0
        elif name.endswith("@init") or name.startswith(("g@", "m@")):
            env[name] = 0
    return env


def path_reproduces(path, trace: Trace, inputs, width: int, budget: int = 200_000) -> bool | None:
    """True if ``path`` admits the concrete run: its condition holds and outputs agree.

    A run that faults may stop before the symbolic path does, so only the
    concrete prefix of outputs is compared then. None means the solver gave up.
    """
    outs = list(path.outputs)
    conc = trace.outputs
    if trace.end == "fault":
        if len(outs) < len(conc):
            return False
        outs = outs[: len(conc)]
    elif len(outs) != len(conc):
        return False
    syms = T.free_symbols(list(path.pc) + outs)
    env = {k: T.const(v, width) for k, v in concrete_env(syms, inputs).items()}
    cs = [T.simplify(T.substitute(c, env)) for c in path.pc]
    cs += [T.eq(T.substitute(o, env), T.const(v, width)) for o, v in zip(outs, conc)]
    if any(c.is_const and not c.value for c in cs):
        return False
    v = check_sat(tuple(cs), budget)
    if v.unsat:
        return False
    return True if v.sat else None


def reproduces(report: Report, trace: Trace, inputs, width: int) -> bool:
    undecided = False
    for path in report.paths:
        r = path_reproduces(path, trace, inputs, width)
        if r:
            return True
        undecided |= r is None
    return undecided


def input_vectors(n_inputs: int, count: int = 100, width: int = 8) -> list[tuple[int, ...]]:
    """``count`` deterministic input vectors mixing boundary and program-relevant values."""
    mask = (1 << width) - 1
    values = [0, 1, 2, 3, 4, 5, 6, 7, 33, 42, 255, 128, 127, 13, 8, 9]
    values = list(dict.fromkeys(v & mask for v in values))
    n = max(n_inputs, 1)
    out = []
    for combo in product(values, repeat=n):
        out.append(combo)
        if len(out) == count:
            break
    seen = set(out)
    k = 0
    while len(out) < min(count, (mask + 1) ** n):
        v = tuple(((k + 1) * 37 + j * 101) & mask for j in range(n))
        k += 1
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def max_inputs(program: Program) -> int:
    """Upper bound on ``input`` instructions executed, ignoring loops (used for vector size)."""
    return sum(1 for fn in program.functions.values() for ins in fn.instrs if ins.op == "input")
