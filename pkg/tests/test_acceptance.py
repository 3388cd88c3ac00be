"""Acceptance criteria; each test prints one PASS/FAIL line with its measurements."""
from __future__ import annotations

import csv
import functools
import io
import time
from pathlib import Path

import pytest

from oracles import eval_term, solver_agreement
from smartsum import bench
from smartsum import terms as T
from smartsum.bench import (
    ENGINES, found_pairs, input_vectors, load_corpus, max_inputs, reproduces, run_engine,
)
from smartsum.bugs import BugKind
from smartsum.cli import main
from smartsum.engine import ExploreConfig, explore
from smartsum.generate import gen_nested_loops
from smartsum.interp import interpret
from smartsum.ir import parse_program
from smartsum.outline import outline_program
from smartsum.programs import CANARY_CLOBBER, JUMP_TO_INPUT, SIGN_FUNCTION
from smartsum.solver import check_sat, equivalent
from smartsum.summary import combine_side_effects, run_compositional, summarize_function

W = 8
CORPUS_DIR = Path(bench.__file__).parent / "corpus"


@pytest.fixture
def verdict(capsys):
    def _verdict(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return _verdict


def test_criterion_1_scaling(verdict):
    cfg = ExploreConfig(width=W, loop_limit=16)
    states = {}
    for d in range(1, 5):
        p = parse_program(gen_nested_loops(d, 8), W)
        base = explore(p, cfg)
        outl = run_engine(p, "summary+outline", cfg)
        assert not base.incomplete and not outl.incomplete
        states[d] = (base.metrics.states_explored, outl.metrics.states_explored)
    b1, s1 = states[1]
    base_ok = all(states[d][0] / b1 >= 8 ** (d - 1) / 2 for d in states)
    outl_ok = all(states[d][1] / s1 <= 1.5 * d for d in states)

    p5 = parse_program(gen_nested_loops(5, 8), W)
    capped = explore(p5, ExploreConfig(width=W, loop_limit=16, max_states=10_000, time_limit=300))
    t0 = time.perf_counter()
    fast = run_engine(p5, "summary+outline", ExploreConfig(width=W, loop_limit=16))
    wall = time.perf_counter() - t0
    d5_ok = capped.incomplete and not fast.incomplete and wall < 30
    ratios = " ".join(f"d{d}={states[d][0] / b1:.1f}/{states[d][1] / s1:.2f}" for d in states)
    verdict(1, base_ok and outl_ok and d5_ok,
            f"baseline/summary+outline ratios {ratios}; d5 baseline capped={capped.incomplete}, "
            f"summary+outline {fast.metrics.states_explored} states in {wall:.2f}s")


def test_criterion_2_summary_exactness(verdict):
    s = summarize_function(parse_program(SIGN_FUNCTION, W), "f", ExploreConfig(width=W))
    a0 = T.sym("f::a0", W)
    want = {1: T.slt(T.const(0, W), a0), 0: T.sle(a0, T.const(0, W))}
    matched = set()
    for e in s.entries:
        pre = functools.reduce(T.and_, e.precondition, T.const(1, W))
        if e.ret.is_const and e.ret.value in want and equivalent(pre, want[e.ret.value]) is True:
            matched.add(e.ret.value)
    covered = all(any(all(eval_term(c, {"f::a0": v}) for c in e.precondition) for e in s.entries)
                  for v in range(256))
    verdict(2, len(s.entries) == 2 and matched == {0, 1} and covered,
            f"{len(s.entries)} entries, equivalent returns {sorted(matched)}, "
            f"preconditions cover all 256 values={covered}")


def test_criterion_3_corpus_parity(verdict):
    t0 = time.perf_counter()
    problems = []
    for prog in load_corpus():
        p = prog.parse()
        cfg = ExploreConfig(width=p.width)
        base = found_pairs(explore(p, cfg))
        comp = found_pairs(run_compositional(p, cfg))
        if not base <= comp:
            problems.append(f"{prog.name}: summary lacks {sorted(base - comp)}")
        for name, got in (("baseline", base), ("summary", comp)):
            if not prog.expected <= got:
                problems.append(f"{prog.name}: {name} misses {sorted(prog.expected - got)}")
    wall = time.perf_counter() - t0
    verdict(3, not problems and wall < 300,
            f"12 programs, {len(problems)} problems {problems}, {wall:.1f}s")


def test_criterion_4_solver_oracle(verdict):
    t0 = time.perf_counter()
    bad, unverified, unknown = solver_agreement(range(1000))
    wall = time.perf_counter() - t0
    verdict(4, bad == unverified == unknown == 0 and wall < 60,
            f"1000 sets: {bad} disagreements, {unverified} unverified models, "
            f"{unknown} unknown, {wall:.1f}s")


def test_criterion_5_differential(verdict):
    misses = []
    checked = 0
    for prog in load_corpus():
        p = prog.parse()
        cfg = ExploreConfig(width=p.width)
        reports = {e: run_engine(p, e, cfg) for e in ENGINES}
        for vec in input_vectors(max_inputs(p), 100, p.width):
            trace = interpret(p, list(vec))
            for eng, rep in reports.items():
                checked += 1
                if not reproduces(rep, trace, list(vec), p.width):
                    misses.append((prog.name, eng, vec))
    verdict(5, not misses, f"{checked} (program, engine, vector) checks, {len(misses)} unreproduced "
                           f"{misses[:3]}")


def test_criterion_6_outlining_preservation(verdict):
    diffs = []
    for d in (2, 3):
        p = parse_program(gen_nested_loops(d, 8), W)
        q = outline_program(p).program
        for v in range(256):
            a, b = interpret(p, [v]), interpret(q, [v])
            if (a.outputs, a.end) != (b.outputs, b.end):
                diffs.append((d, v))
    verdict(6, not diffs, f"depth 2 and 3 over 256 inputs, {len(diffs)} differences")


def _replay_ok(program, bug, kinds):
    inputs = [bug.witness.get(f"in{k}", 0) for k in range(max_inputs(program))]
    trace = interpret(program, inputs)
    return any(e[0] in kinds for e in trace.heap_events) or any(f[0] in kinds for f in trace.faults)


def test_criterion_7_targeted_detections(verdict):
    [uaf_prog] = [c for c in load_corpus() if c.name == "SimpleUAF"]
    p = uaf_prog.parse()
    combined = {b.kind: b for b in combine_side_effects(run_compositional(p, ExploreConfig(width=W)))}
    uaf_ok = BugKind.UAF in combined and _replay_ok(p, combined[BugKind.UAF], {"uaf"})
    df_ok = BugKind.DOUBLE_FREE in combined and _replay_ok(p, combined[BugKind.DOUBLE_FREE],
                                                           {"double_free"})

    canary = explore(parse_program(CANARY_CLOBBER, W), ExploreConfig(width=W))
    smash_ok = any(b.kind is BugKind.STACK_SMASH for b in canary.bugs)

    jp = parse_program(JUMP_TO_INPUT, W)
    hijacks = [b for b in explore(jp, ExploreConfig(width=W)).bugs if b.kind is BugKind.HIJACK]
    hijack_ok = bool(hijacks) and hijacks[0].witness is not None and check_sat(
        tuple(T.substitute(c, {k: T.const(v, W) for k, v in hijacks[0].witness.items()})
              for c in hijacks[0].path_condition)).sat
    verdict(7, uaf_ok and df_ok and smash_ok and hijack_ok,
            f"UAF replay={uaf_ok} DoubleFree replay={df_ok} StackSmash={smash_ok} "
            f"Hijack sat witness={hijack_ok}")


def _strip_wall(text):
    rows = list(csv.reader(io.StringIO(text)))
    k = rows[0].index("wall_ms")
    return [r[:k] + r[k + 1:] for r in rows]


def test_criterion_8_bench_determinism(verdict, tmp_path, capsys):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}.csv"
        main(["bench", str(CORPUS_DIR), "--out", str(out), "--repeat", "1"])
        outs.append(out.read_text())
    capsys.readouterr()
    a, b = map(_strip_wall, outs)
    verdict(8, a == b and len(a) == 1 + 12 * len(ENGINES),
            f"{len(a) - 1} rows, identical modulo wall_ms={a == b}")


def test_criterion_9_cache(verdict, tmp_path, capsys):
    [prog] = [c for c in load_corpus() if c.name == "SimpleUAF"]
    p = prog.parse()
    cfg = ExploreConfig(width=W)
    first = run_compositional(p, cfg, tmp_path)
    second = run_compositional(p, cfg, tmp_path)
    src = tmp_path / "p.ir"
    src.write_text(prog.text)
    cli_dir = tmp_path / "cli"
    main(["run", str(src), "--engine", "summary", "--width", "8", "--cache", str(cli_dir)])
    out1 = capsys.readouterr().out
    main(["run", str(src), "--engine", "summary", "--width", "8", "--cache", str(cli_dir)])
    out2 = capsys.readouterr().out
    same = [b.key for b in first.bugs] == [b.key for b in second.bugs]
    cli_ok = "summarizations=0" in out2 and out1.splitlines()[1:] == out2.splitlines()[1:]
    verdict(9, first.metrics.summarizations > 0 and second.metrics.summarizations == 0
            and same and cli_ok,
            f"summarizations {first.metrics.summarizations} then {second.metrics.summarizations}, "
            f"identical bugs={same}, CLI rerun clean={cli_ok}")
