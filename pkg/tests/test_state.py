from __future__ import annotations

from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import eval_term
from smartsum import terms as T
from smartsum.engine import ExploreConfig, explore
from smartsum.interp import interpret
from smartsum.ir import parse_program
from smartsum.programs import CANARY_CLOBBER
from smartsum.state import (
    EventKind, ExecContext, Layout, Op, initial_state, read_mem, step, sym_free, sym_malloc,
    write_mem,
)


def setup(text="fn main { halt }", width=16):
    p = parse_program(text, width)
    ctx = ExecContext(p)
    return ctx, initial_state(ctx)


def test_const_step():
    ctx, s = setup("fn main { const t0, 5\n halt }")
    out = step(s, ctx).states
    assert len(out) == 1 and out[0].regs["t0"] is T.const(5, 16)


def test_branch_forks_on_input():
    ctx, s = setup("fn main { input t0\n const t1, 0\n beq t0, t1, L\n halt\nL: halt }")
    s = step(s, ctx).states[0]
    s = step(s, ctx).states[0]
    out = step(s, ctx).states
    assert len(out) == 2
    x = T.sym("in0", 16)
    conds = {c for o in out for c in o.pc}
    assert conds == {T.eq(x, T.const(0, 16)), T.ne(x, T.const(0, 16))}


def test_canary_clobber_detected_and_confirmed_concretely():
    p = parse_program(CANARY_CLOBBER, 16)
    rep = explore(p, ExploreConfig(width=16))
    assert ("StackSmash", "victim") in rep.bug_pairs
    trace = interpret(p, [0])
    assert any(f[0] == "canary" for f in trace.faults)


def test_unwritten_global_reads_as_symbol():
    ctx, s = setup()
    [(s2, v)] = read_mem(s, T.const(0x200, 16), ctx)
    assert v.is_sym and v.name == "g@200"


def test_ite_address_forks_twice():
    ctx, s = setup(width=8)
    x = T.sym("x", 8)
    s.mem[0x11] = T.const(1, 8)
    s.mem[0x12] = T.const(2, 8)
    addr = T.ite(T.eq(x, T.const(0, 8)), T.const(0x11, 8), T.const(0x12, 8))
    out = read_mem(s, addr, ctx)
    assert sorted(v.value for _, v in out) == [1, 2]
    # each fork's condition admits exactly the inputs that select its cell
    for st_, v in out:
        sel = [a for a in range(256) if all(eval_term(c, {"x": a}) for c in st_.pc)]
        assert all(eval_term(addr, {"x": a}) == 0x10 + v.value for a in sel)


def test_unconstrained_address():
    ctx, s = setup()
    out = read_mem(s, T.sym("in0", 16), ctx)
    assert len(out) == 1
    assert [e.kind for e in out[0][0].events] == [EventKind.UNCONSTRAINED_ACCESS]


def test_malloc_layout():
    ctx, s = setup()
    a = sym_malloc(s, T.const(4, 16), ctx)
    b = sym_malloc(s, T.const(4, 16), ctx)
    assert (a.value, b.value) == (0x1001, 0x1007)
    assert s.guards[0x1000] == 0x1001 and s.guards[0x1005] == 0x1001
    assert [e.op for e in s.effects] == [Op.MALLOC, Op.MALLOC]


def test_symbolic_size_concretized_from_model():
    ctx, s = setup(width=8)
    n = T.sym("in0", 8)
    s.add_constraint(T.ule(n, T.const(8, 8)))
    base = sym_malloc(s, n, ctx)
    chunk = s.heap[base.value]
    assert eval_term(T.ule(n, T.const(8, 8)), {"in0": chunk.size})
    assert s.effects[-1].value is n
    assert s.events[-1].kind is EventKind.SYMBOLIC_SIZE


def test_free_and_double_free():
    ctx, s = setup()
    a = sym_malloc(s, T.const(2, 16), ctx)
    sym_free(s, a, ctx)
    assert s.heap[a.value].status == "freed" and s.effects[-1].op is Op.FREE
    sym_free(s, a, ctx)
    assert s.events[-1].kind is EventKind.DOUBLE_FREE


def test_free_of_input_equal_to_freed_base():
    ctx, s = setup(width=8)
    a = sym_malloc(s, T.const(2, 8), ctx)
    sym_free(s, a, ctx)
    p = T.sym("in0", 8)
    s.add_constraint(T.eq(p, a))
    sym_free(s, p, ctx)
    ev = [e for e in s.events if e.kind is EventKind.DOUBLE_FREE_POSSIBLE]
    assert ev
    assert eval_term(s.pc[0], {"in0": a.value})


def test_guard_write_is_overflow():
    ctx, s = setup()
    a = sym_malloc(s, T.const(4, 16), ctx)
    write_mem(s, T.const(a.value + 4, 16), T.const(1, 16), ctx)
    assert s.events[-1].kind is EventKind.HEAP_OVERFLOW


def test_layouts_scale():
    assert Layout.for_width(8).heap_lo == 0x10
    assert Layout.for_width(32).stack_top == 0xFFF0 << 16


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=12))
def test_chunks_and_guards_never_overlap(sizes):
    ctx, s = setup()
    for n in sizes:
        sym_malloc(s, T.const(n, 16), ctx)
        cells = set()
        for base, ch in s.heap.items():
            span = set(range(base - 1, base + ch.size + 1))
            assert not (span - {base - 1, base + ch.size}) & cells
            cells |= span - {base - 1, base + ch.size}
        assert not set(s.guards) & cells


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 5))
def test_loop_counter_matches_traversals(iters, limit_slack):
    text = f"""fn main {{
        const t0, 0
        const t1, {iters}
        const t2, 1
    head:
        bge t0, t1, done
        add t0, t0, t2
        jmp head
    done:
        output t0
        halt
    }}"""
    p = parse_program(text, 8)
    rep = explore(p, ExploreConfig(width=8, loop_limit=iters + limit_slack))
    assert rep.metrics.loop_pruned == 0
    assert [o.value for o in rep.paths[0].outputs] == [iters]
    rep = explore(p, ExploreConfig(width=8, loop_limit=max(iters - 1, 1)))
    assert rep.metrics.loop_pruned == (1 if iters > 1 else 0)
