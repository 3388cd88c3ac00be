from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartsum.bench import load_corpus, run_engine
from smartsum.cfg import build_cfg, detect_loops
from smartsum.engine import ExploreConfig
from smartsum.generate import gen_nested_loops
from smartsum.interp import interpret
from smartsum.ir import parse_program
from smartsum.outline import (
    BoundSchedule, RoundMetrics, outline_inner_loops, outline_program, schedule_loop_bounds,
)

W = 8

TWO_LIVE_OUTS = """fn main {
    input t0
    const t1, 0
    const t2, 0
    const t3, 0
    const t5, 1
    const t6, 3
outer:
    bge t1, t6, done
    const t4, 0
inner:
    bge t4, t6, next
    add t2, t2, t0
    add t3, t3, t5
    add t4, t4, t5
    jmp inner
next:
    add t1, t1, t5
    jmp outer
done:
    output t2
    output t3
    halt
}"""

IRREDUCIBLE_INNER = """fn main {
    input t0
    const t1, 0
    const t5, 1
outer:
    bge t1, t0, done
    beq t0, t5, b
a:
    add t1, t1, t5
    jmp b
b:
    blt t1, t5, a
    add t1, t1, t5
    jmp outer
done:
    halt
}"""


def same_behaviour(a, b, inputs):
    for v in inputs:
        ta, tb = interpret(a, [v]), interpret(b, [v])
        assert (ta.outputs, ta.end) == (tb.outputs, tb.end), v


def depth(program, fn="main"):
    return detect_loops(build_cfg(program.functions[fn])).depth()


def test_depth_one_unchanged():
    p = parse_program(gen_nested_loops(1, 5), W)
    r = outline_inner_loops(p, "main")
    assert not r.changed and r.program is p


def test_two_level_loop_one_synthetic_function():
    p = parse_program(gen_nested_loops(2, 10), W)
    r = outline_inner_loops(p, "main")
    [name] = r.synthetic
    assert name == "main$loop1"
    main = r.program.functions["main"]
    assert [i.args[0] for i in main.instrs if i.op == "call"] == [name]
    assert depth(r.program) == 1 and depth(r.program, name) == 1
    same_behaviour(p, r.program, range(256))


def test_depth_three_two_synthetic_functions():
    p = parse_program(gen_nested_loops(3, 4), W)
    r = outline_program(p)
    assert len(r.synthetic) == 2
    assert all(depth(r.program, f) <= 1 for f in r.program.functions)
    same_behaviour(p, r.program, range(256))


def test_two_live_outs_spill_through_reference():
    p = parse_program(TWO_LIVE_OUTS, W)
    r = outline_inner_loops(p, "main")
    [name] = r.synthetic
    assert set(r.live_outs[name]) == {"t2", "t3"}
    same_behaviour(p, r.program, range(256))


def test_irreducible_region_left_with_diagnostic():
    p = parse_program(IRREDUCIBLE_INNER, W)
    r = outline_program(p)
    assert not r.changed
    assert any("irreducible" in d for d in r.diagnostics)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 3), st.integers(1, 4), st.integers(0, 255))
def test_outlining_preserves_outputs(d, n, x):
    p = parse_program(gen_nested_loops(d, n), W)
    same_behaviour(p, outline_program(p).program, [x])


def test_outlining_preserves_outputs_sampled_w16():
    p = parse_program(gen_nested_loops(2, 3), 16)
    q = outline_program(p).program
    same_behaviour(p, q, range(0, 1 << 16, 977))


@pytest.mark.parametrize("prog", load_corpus(), ids=lambda c: c.name)
def test_outlined_summary_matches_baseline_kinds(prog):
    p = prog.parse()
    cfg = ExploreConfig(width=p.width, loop_limit=16)
    base = {b.kind for b in run_engine(p, "baseline", cfg).bugs}
    outl = {b.kind for b in run_engine(p, "summary+outline", cfg).bugs}
    assert base <= outl


# -- loop-bound schedule ---------------------------------------------------------------

def test_schedule_stops_when_exhaustive():
    s = BoundSchedule(bound=32)
    d = schedule_loop_bounds(s, RoundMetrics(wall_s=0.1, peak_live=10, pruned=0))
    assert (d.stop, d.bound, d.reason) == (True, 32, "exhaustive")


def test_schedule_grows_by_increment():
    s = BoundSchedule(bound=8)
    d = schedule_loop_bounds(s, RoundMetrics(wall_s=0.1, peak_live=10, pruned=3))
    assert (d.stop, d.bound) == (False, 12)


def test_schedule_reports_last_completed_bound_on_budget():
    s = BoundSchedule(bound=8, wall_budget_s=1.0)
    schedule_loop_bounds(s, RoundMetrics(0.1, 10, 3))
    d = schedule_loop_bounds(s, RoundMetrics(5.0, 10, 3))
    assert (d.stop, d.bound, d.reason) == (True, 8, "budget")
    fresh = BoundSchedule(bound=16, wall_budget_s=1.0)
    d = schedule_loop_bounds(fresh, RoundMetrics(5.0, 10, 3))
    assert (d.stop, d.bound) == (True, 12)


def test_schedule_live_state_cap_trips():
    s = BoundSchedule(bound=8, live_state_cap=100)
    assert schedule_loop_bounds(s, RoundMetrics(0.1, 101, 3)).stop


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=10), st.integers(1, 8))
def test_schedule_bound_strictly_increases(pruned, inc):
    s = BoundSchedule(bound=4, increment=inc)
    prev = s.bound
    for k in pruned:
        d = schedule_loop_bounds(s, RoundMetrics(0.0, 0, k))
        assert not d.stop and d.bound == prev + inc
        prev = d.bound
