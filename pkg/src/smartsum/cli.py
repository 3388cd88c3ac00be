"""Command-line interface: run, summarize, gen, bench, interpret."""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import terms as T
from .bench import ENGINES, load_corpus, rows_to_csv, run_bench
from .bugs import dump_report
from .engine import ExploreConfig, explore
from .generate import MAX_DEPTH, gen_nested_loops
from .interp import interpret
from .ir import ParseError, parse_program, unparse
from .outline import outline_program
from .summary import CompositionalEngine, Summary, cache_path, load_table, run_compositional, save_table

EXIT_CLEAN, EXIT_BUGS, EXIT_USAGE, EXIT_INCOMPLETE = 0, 1, 2, 3


class _UsageError(Exception):
    pass


def _positive(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _read_program(path: str, width: int):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise _UsageError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return parse_program(text, width)
    except ParseError as exc:
        raise _UsageError(f"{path}: {exc}") from None


def _config(args) -> ExploreConfig:
    return ExploreConfig(search=args.search, loop_limit=args.loop_limit, max_states=args.max_states,
                         budget=args.budget, width=args.width)


def cmd_run(args) -> int:
    program = _read_program(args.file, args.width)
    config = _config(args)
    engine = args.engine
    if args.outline:
        result = outline_program(program)
        program = result.program
        for d in result.diagnostics:
            print(f"outline: {d}", file=sys.stderr)
        if args.emit_outlined:
            with open(args.emit_outlined, "w") as fh:
                fh.write(unparse(program))
        engine += "+outline"
    elif args.emit_outlined:
        raise _UsageError("--emit-outlined requires --outline")
    if args.engine == "baseline":
        if args.cache:
            raise _UsageError("--cache applies to the summary engine only")
        report = explore(program, config)
    else:
        report = run_compositional(program, config, args.cache)
    doc = report.document(os.path.basename(args.file), engine)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(dump_report(doc) + "\n")
    m = report.metrics
    print(f"engine={engine} states={m.states_explored} paths={m.paths_completed} "
          f"sat_queries={m.sat_queries} summarizations={m.summarizations} "
          f"wall_ms={m.wall_ms:.1f}")
    for b in report.bugs:
        where = " (interprocedural)" if b.interprocedural else ""
        wit = ", ".join(f"{k}={v}" for k, v in sorted((b.witness or {}).items()))
        print(f"{b.kind.value} in {b.function} at {b.index}{where}: {b.detail} [{wit}]")
    for d in report.diagnostics:
        print(f"note: {d}", file=sys.stderr)
    if report.incomplete:
        return EXIT_INCOMPLETE
    return EXIT_BUGS if report.bugs else EXIT_CLEAN


def summary_document(s: Summary) -> dict:
    return {
        "function": s.function,
        "params": list(s.params),
        "partial": s.partial,
        "entries": [
            {
                "precondition": [T.to_str(c) for c in e.precondition],
                "ret": T.to_str(e.ret),
                "end": e.end,
                "effects": [f"{x.op.value}@{x.origin[0]}:{x.origin[1]}" for x in e.effects],
                "unknown": e.unknown,
            }
            for e in s.entries
        ],
    }


def cmd_summarize(args) -> int:
    program = _read_program(args.file, args.width)
    if args.function not in program.functions:
        raise _UsageError(f"no function named {args.function}")
    config = _config(args)
    path = cache_path(program, config, args.cache) if args.cache else None
    table = load_table(path) if path else None
    engine = CompositionalEngine(program, config, table)
    s = engine.lookup(args.function)
    if path and not s.partial:
        save_table(engine.table, path)
    print(json.dumps(summary_document(s), indent=2))
    return EXIT_INCOMPLETE if s.partial else EXIT_CLEAN


def cmd_gen(args) -> int:
    sys.stdout.write(gen_nested_loops(args.depth, args.iters, args.threshold))
    return EXIT_CLEAN


def cmd_bench(args) -> int:
    if not os.path.isdir(args.dir):
        raise _UsageError(f"not a directory: {args.dir}")
    corpus = load_corpus(args.dir)
    try:
        for cp in corpus:
            cp.parse()
    except ParseError as exc:
        raise _UsageError(f"corpus: {exc}") from None
    config = None
    if args.loop_limit is not None or args.width is not None:
        config = ExploreConfig(width=args.width or 8, loop_limit=args.loop_limit or 32)
    result = run_bench(corpus, args.engines.split(",") if args.engines else ENGINES, config,
                       args.repeat, args.timeout, args.workers)
    with open(args.out, "w", newline="") as fh:
        fh.write(rows_to_csv(result.rows))
    for prog, eng, (kind, fn) in result.missed:
        print(f"missed: {prog} [{eng}] expected {kind} in {fn}", file=sys.stderr)
    return EXIT_BUGS if result.missed else EXIT_CLEAN


def _parse_inputs(text: str, width: int) -> list[int]:
    if not text:
        return []
    try:
        return [int(v, 0) & ((1 << width) - 1) for v in text.split(",") if v.strip()]
    except ValueError:
        raise _UsageError(f"bad input list {text!r}") from None


def cmd_interpret(args) -> int:
    program = _read_program(args.file, args.width)
    trace = interpret(program, _parse_inputs(args.inputs, args.width), args.step_limit)
    print(json.dumps({
        "outputs": trace.outputs,
        "end": trace.end,
        "rv": trace.rv,
        "steps": trace.steps,
        "heap_events": [list(e) for e in trace.heap_events],
        "faults": [list(f) for f in trace.faults],
    }))
    if trace.end == "nonterminating":
        return EXIT_INCOMPLETE
    return EXIT_BUGS if trace.faults else EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smartsum", description="Symbolic bug finding on a small register IR.")
    sub = p.add_subparsers(dest="command", required=True)

    def explore_flags(sp):
        sp.add_argument("--width", type=int, choices=(8, 16, 32), default=16)
        sp.add_argument("--loop-limit", type=_positive, default=32)
        sp.add_argument("--max-states", type=_positive, default=1_000_000)
        sp.add_argument("--budget", type=_positive, default=200_000)
        sp.add_argument("--search", choices=("bfs", "dfs"), default="bfs")

    r = sub.add_parser("run", help="explore a program and report bugs")
    r.add_argument("file")
    r.add_argument("--engine", choices=("baseline", "summary"), default="summary")
    r.add_argument("--outline", action="store_true", help="outline nested inner loops first")
    explore_flags(r)
    r.add_argument("--report", metavar="OUT.json")
    r.add_argument("--cache", metavar="DIR")
    r.add_argument("--emit-outlined", metavar="OUT.ir", help="write the outlined program")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("summarize", help="print one function's summary")
    s.add_argument("file")
    s.add_argument("--function", required=True)
    explore_flags(s)
    s.add_argument("--cache", metavar="DIR")
    s.set_defaults(func=cmd_summarize)

    g = sub.add_parser("gen", help="generate synthetic programs")
    gsub = g.add_subparsers(dest="family", required=True)
    n = gsub.add_parser("nested", help="nested counting loops")
    n.add_argument("--depth", type=int, choices=range(1, MAX_DEPTH + 1), required=True)
    n.add_argument("--iters", type=_positive, required=True)
    n.add_argument("--threshold", type=int, default=3)
    n.set_defaults(func=cmd_gen)

    b = sub.add_parser("bench", help="compare engines on a corpus directory")
    b.add_argument("dir")
    b.add_argument("--out", required=True, metavar="RESULTS.csv")
    b.add_argument("--repeat", type=_positive, default=3)
    b.add_argument("--timeout", type=float, default=300.0)
    b.add_argument("--workers", type=_positive, default=1)
    b.add_argument("--engines", help=f"comma-separated subset of {','.join(ENGINES)}")
    b.add_argument("--width", type=int, choices=(8, 16, 32))
    b.add_argument("--loop-limit", type=_positive)
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("interpret", help="run a program concretely")
    i.add_argument("file")
    i.add_argument("--inputs", default="")
    i.add_argument("--width", type=int, choices=(8, 16, 32), default=16)
    i.add_argument("--step-limit", type=_positive, default=10**6)
    i.set_defaults(func=cmd_interpret)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "engines", None):
        bad = set(args.engines.split(",")) - set(ENGINES)
        if bad:
            parser.error(f"unknown engines: {', '.join(sorted(bad))}")
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"smartsum: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
