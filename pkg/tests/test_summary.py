from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import eval_term
from smartsum import terms as T
from smartsum.bench import reproduces
from smartsum.bugs import BugKind
from smartsum.engine import ExploreConfig, Metrics, PathResult, Report, explore
from smartsum.interp import interpret
from smartsum.ir import parse_program
from smartsum.programs import CALL_CHAIN, IDENTITY, SIGN_FUNCTION
from smartsum.solver import check_sat, equivalent
from smartsum.state import ExecContext, Op, SideEffect, initial_state, sym_free, sym_malloc
from smartsum.summary import (
    CompositionalEngine, apply_summary, combine_side_effects, get_preconditions,
    run_compositional, summarize_function,
)

W = 8
CFG = ExploreConfig(width=W)
a0 = T.sym("f::a0", W)


def summary_of(text, name="f", config=CFG):
    p = parse_program(text, W)
    return p, summarize_function(p, name, config)


def entry_env(summary, args):
    """Concrete values for every summary input when ``name`` runs from a clean machine."""
    env = {}
    params = dict(zip(summary.params, args))
    for r, sym in summary.registers:
        env[sym] = params.get(r, 0)
    for _, sym in summary.globals:
        env[sym] = 0
    for _, sym in summary.memory:
        env[sym] = 0
    return env


def assert_sound(program, summary, args):
    """Some entry admits ``args`` and its return term matches the concrete return value."""
    trace = interpret(program, entry=summary.function, args=args)
    env = entry_env(summary, args)
    mapping = {k: T.const(v, W) for k, v in env.items()}
    for e in summary.entries:
        alpha = [T.simplify(T.substitute(c, mapping)) for c in e.precondition]
        ret = T.substitute(e.ret, mapping)
        if check_sat(alpha + [T.eq(ret, T.const(trace.rv, W))]).sat:
            return
    raise AssertionError(f"no entry reproduces {summary.function}{tuple(args)} -> {trace.rv}")


def test_sign_summary_entries():
    _, s = summary_of(SIGN_FUNCTION)
    assert len(s.entries) == 2 and not s.partial
    want = {1: T.slt(T.const(0, W), a0), 0: T.sle(a0, T.const(0, W))}
    for e in s.entries:
        assert e.effects == () and e.ret.is_const
        [alpha] = e.precondition
        assert equivalent(alpha, want[e.ret.value]) is True


def test_identity_summary():
    _, s = summary_of(IDENTITY, "id")
    [e] = s.entries
    assert e.precondition == () and e.effects == ()
    assert e.ret is T.sym("id::a0", W)


def test_allocator_summary():
    text = "fn main { call mk\n halt }\nfn mk { const t0, 3\n alloc rv, t0\n ret }"
    _, s = summary_of(text, "mk")
    [e] = s.entries
    assert [x.op for x in e.effects] == [Op.MALLOC]
    assert e.ret is e.effects[0].addr
    assert (e.ret.name, T.FRESH) in e.carried


def _call_state(text, name, setup):
    p = parse_program(text, W)
    eng = CompositionalEngine(p, CFG)
    s = eng.lookup(name)
    st_ = initial_state(eng.ctx)
    setup(st_, eng.ctx)
    return eng, s, st_


def test_binding_passes_terms_through():
    x = T.sym("in0", W)
    for value in (T.const(3, W), T.add(x, T.const(1, W))):
        eng, s, st_ = _call_state(SIGN_FUNCTION, "f", lambda st_, ctx: st_.set_reg("a0", value))
        [(_, b)] = get_preconditions(st_, s, eng.ctx)
        assert b.args == (value,)


def test_binding_warns_on_freed_reference():
    text = "fn main { call f\n halt }\nfn f { load rv, a0, 0\n ret }"

    def setup(st_, ctx):
        base = sym_malloc(st_, T.const(2, W), ctx)
        sym_free(st_, base, ctx)
        st_.set_reg("a0", base)
    eng, s, st_ = _call_state(text, "f", setup)
    [(_, b)] = get_preconditions(st_, s, eng.ctx)
    assert any("UAF candidate" in w for w in b.warnings)


def test_apply_concrete_argument_single_successor():
    eng, s, st_ = _call_state(SIGN_FUNCTION, "f", lambda st_, ctx: st_.set_reg("a0", T.const(5, W)))
    [(st2, b)] = get_preconditions(st_, s, eng.ctx)
    out = apply_summary(st2, s, b, eng.ctx)
    assert len(out) == 1 and out[0].regs["rv"] is T.const(1, W)


def test_apply_symbolic_argument_forks():
    eng, s, st_ = _call_state(SIGN_FUNCTION, "f", lambda st_, ctx: st_.set_reg("a0", T.sym("in0", W)))
    [(st2, b)] = get_preconditions(st_, s, eng.ctx)
    assert len(apply_summary(st2, s, b, eng.ctx)) == 2


def test_identity_application_preserves_argument():
    x = T.sym("in0", W)
    eng, s, st_ = _call_state(IDENTITY, "id", lambda st_, ctx: st_.set_reg("a0", T.mul(x, T.const(3, W))))
    [(st2, b)] = get_preconditions(st_, s, eng.ctx)
    [out] = apply_summary(st2, s, b, eng.ctx)
    assert equivalent(out.regs["rv"], T.mul(x, T.const(3, W))) is True


def test_free_summary_applied_twice():
    text = """fn main {
        const t0, 2
        alloc a0, t0
        call g
        call g
        halt
    }
    fn g { free a0
     ret }"""
    p = parse_program(text, W)
    r = run_compositional(p, CFG)
    assert ("DoubleFree", "g") in r.bug_pairs
    assert interpret(p).faults[-1][0] == "double_free"
    assert r.metrics.summarizations == 1


def test_call_chain_order_and_table():
    p = parse_program(CALL_CHAIN, W)
    eng = CompositionalEngine(p, CFG)
    order = []
    orig = eng.summarize

    def spy(name):
        s = orig(name)
        order.append(name)
        return s
    eng.summarize = spy
    r = eng.run()
    assert order == ["g", "f"]
    assert len(eng.table) == 2
    [path] = r.paths
    assert equivalent(path.outputs[0], T.add(T.sym("in0", W), T.const(1, W))) is True


def test_two_calls_one_summarization():
    text = "fn main { input a0\n call f\n call f\n halt }\nfn f { mov rv, a0\n ret }"
    r = run_compositional(parse_program(text, W), CFG)
    assert r.metrics.summarizations == 1
    assert r.metrics.table_hits == 2


def test_recursion_returns_unconstrained():
    text = """fn main { input a0
    call f
    output rv
    halt }
    fn f {
        const t0, 0
        beq a0, t0, base
        const t1, 1
        sub a0, a0, t1
        call f
        ret
    base:
        const rv, 7
        ret
    }"""
    _, s = summary_of(text)
    rets = [e.ret for e in s.entries]
    assert T.const(7, W) in rets
    # the inner call is cut off and returns a fresh unconstrained value
    assert any(any(".rv#" in n for n in r.syms) for r in rets)


# -- heap hazards from combined logs ----------------------------------------------------

def _report(effects, pc=()):
    path = PathResult("halt", (), tuple(pc), tuple(effects), ("main", 0))
    return Report([], Metrics(), [path])


def test_combined_double_free():
    p = T.const(0x11, W)
    effs = [SideEffect(Op.MALLOC, addr=p, size=2, origin=("main", 1)),
            SideEffect(Op.FREE, addr=p, size=2, origin=("g", 0)),
            SideEffect(Op.FREE, addr=p, size=2, origin=("g", 0))]
    [bug] = combine_side_effects(_report(effs))
    assert bug.kind is BugKind.DOUBLE_FREE and bug.witness == {}


def test_combined_use_after_free_needs_alias():
    p = T.const(0x11, W)
    q = T.sym("in0", W)
    effs = [SideEffect(Op.MALLOC, addr=p, size=2, origin=("main", 1)),
            SideEffect(Op.FREE, addr=p, size=2, origin=("g", 0)),
            SideEffect(Op.MEM_WRITE, addr=q, value=T.const(1, W), origin=("main", 5))]
    [bug] = combine_side_effects(_report(effs))
    assert bug.kind is BugKind.UAF
    q_val = bug.witness["in0"]
    assert q_val in (0x11, 0x12)
    # brute force: exactly the two cells of the freed chunk alias
    assert [v for v in range(256) if eval_term(bug.path_condition[-1], {"in0": v})] == [0x11, 0x12]


def test_combined_distinct_chunks_clean():
    p, r = T.const(0x11, W), T.const(0x15, W)
    effs = [SideEffect(Op.MALLOC, addr=p, size=2, origin=("main", 1)),
            SideEffect(Op.FREE, addr=p, size=2, origin=("main", 2)),
            SideEffect(Op.MALLOC, addr=r, size=2, origin=("main", 3)),
            SideEffect(Op.MEM_WRITE, addr=r, value=p, origin=("main", 4))]
    assert combine_side_effects(_report(effs)) == []


# -- soundness against the concrete interpreter ------------------------------------------

def test_sign_summary_exhaustive():
    p, s = summary_of(SIGN_FUNCTION)
    for v in range(256):
        assert_sound(p, s, [v])


def test_two_argument_summary_exhaustive():
    text = """fn main { input a0
    input a1
    call f
    output rv
    halt }
    fn f {
        blt a0, a1, less
        sub rv, a0, a1
        ret
    less:
        const t0, 3
        and t1, a1, t0
        add rv, a0, t1
        ret
    }"""
    p, s = summary_of(text)
    for x, y in itertools.product(range(0, 256, 3), range(256)):
        assert_sound(p, s, [x, y])


def test_disjunction_of_preconditions_valid():
    _, s = summary_of(SIGN_FUNCTION)
    for v in range(256):
        assert any(all(eval_term(c, {"f::a0": v}) for c in e.precondition) for e in s.entries)


_OPS = ["add", "sub", "xor", "and", "or", "mul"]
_BR = ["beq", "bne", "blt", "bge"]


def random_function(rng: random.Random) -> str:
    """A branching function of a0, a1 built from arithmetic and forward branches."""
    body = []
    n = rng.randint(2, 7)
    for k in range(n):
        r = rng.random()
        if r < 0.25:
            body.append(f"    const t{rng.randint(0, 3)}, {rng.randrange(256)}")
        elif r < 0.45 and k < n - 1:
            a, b = rng.sample(["a0", "a1", "t0", "t1", "rv"], 2)
            body.append(f"    {rng.choice(_BR)} {a}, {b}, L{rng.randint(k + 1, n)}")
        else:
            d = rng.choice(["t0", "t1", "rv", "a0"])
            a, b = rng.choice(["a0", "a1", "t0", "t1", "rv"]), rng.choice(["a0", "a1", "t0"])
            body.append(f"    {rng.choice(_OPS)} {d}, {a}, {b}")
        body.append(f"L{k + 1}:")
    body.append("    ret")
    return "fn main { input a0\n input a1\n call f\n output rv\n halt }\nfn f {\n" + "\n".join(body) + "\n}\n"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9))
def test_random_summaries_sound(seed):
    rng = random.Random(seed)
    p, s = summary_of(random_function(rng))
    assert not s.partial
    for _ in range(40):
        assert_sound(p, s, [rng.randrange(256), rng.randrange(256)])
    # the preconditions of a total summary cover every input
    for _ in range(40):
        env = {n: rng.randrange(256) for n in T.free_symbols([c for e in s.entries for c in e.precondition])}
        assert any(all(eval_term(c, env) for c in e.precondition) for e in s.entries)


@pytest.mark.parametrize("text", [SIGN_FUNCTION, CALL_CHAIN, IDENTITY])
def test_engines_reproduce_concrete_runs(text):
    p = parse_program(text, W)
    reports = [explore(p, CFG), run_compositional(p, CFG)]
    for v in range(256):
        trace = interpret(p, [v])
        for rep in reports:
            assert reproduces(rep, trace, [v], W)


def test_exec_context_counts_queries():
    ctx = ExecContext(parse_program(SIGN_FUNCTION, W))
    ctx.check([T.eq(T.sym("x", W), T.const(1, W))])
    assert ctx.sat_queries == 1
