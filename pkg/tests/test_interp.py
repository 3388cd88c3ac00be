from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartsum.cfg import build_cfg, detect_loops
from smartsum.generate import gen_nested_loops
from smartsum.interp import interpret
from smartsum.ir import parse_program
from smartsum.programs import DOUBLE_FREE, SIGN_FUNCTION


def test_sign_function_positive():
    p = parse_program(SIGN_FUNCTION, 8)
    t = interpret(p, [5])
    assert t.outputs == [1] and t.end == "halt"
    assert interpret(p, entry="f", args=[5]).rv == 1


def test_sign_function_non_positive():
    p = parse_program(SIGN_FUNCTION, 8)
    assert interpret(p, [0]).outputs == [0]
    assert interpret(p, [200]).outputs == [0]  # negative at width 8
    assert interpret(p, entry="f", args=[0]).rv == 0


def test_double_free_log():
    t = interpret(parse_program(DOUBLE_FREE, 16))
    assert [e[0] for e in t.heap_events] == ["malloc", "free", "free"]
    assert t.end == "fault" and t.faults[-1][0] == "double_free"


def test_missing_inputs_read_zero():
    t = interpret(parse_program("fn main { input t0\n output t0\n halt }"), [])
    assert t.outputs == [0]


def test_step_ceiling():
    t = interpret(parse_program("fn main {\nL: jmp L\n}"), step_limit=100)
    assert t.end == "nonterminating"


def test_jump_to_input_faults():
    t = interpret(parse_program("fn main { input t0\n jmpr t0 }", 8), [65])
    assert t.end == "fault"


@pytest.mark.parametrize("d", range(1, 7))
def test_generator_loop_depth(d):
    p = parse_program(gen_nested_loops(d, 2))
    assert detect_loops(build_cfg(p.functions["main"])).depth() == d


def test_generator_inner_body_count():
    # with x = 0 every inner visit adds 0 + 1, so the output counts the visits
    p = parse_program(gen_nested_loops(2, 10), 16)
    assert interpret(p, [0]).outputs == [100]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(0, 255))
def test_generator_accumulation(d, n, x):
    p = parse_program(gen_nested_loops(d, n), 8)
    visits = n ** d
    signed = x - 256 if x >= 128 else x
    expect = (visits * x + (visits if signed < 3 else 0)) & 255
    assert interpret(p, [x]).outputs == [expect]


def test_generator_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gen_nested_loops(0, 3)
    with pytest.raises(ValueError):
        gen_nested_loops(7, 3)
    with pytest.raises(ValueError):
        gen_nested_loops(2, 0)
