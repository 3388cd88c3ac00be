from __future__ import annotations

import random

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import eval_array, eval_term, random_term
from smartsum import terms as T

W = 8
x = T.sym("x", W)
y = T.sym("y", W)


def test_constant_folding():
    assert T.add(T.const(3, W), T.const(4, W)) is T.const(7, W)
    assert T.simplify(T.raw("add", T.const(3, W), T.const(4, W))) is T.const(7, W)


def test_xor_self():
    assert T.simplify(T.raw("xor", x, x)) is T.const(0, W)


def test_add_then_subtract():
    t = T.raw("sub", T.raw("add", x, T.const(1, W)), T.const(1, W))
    s = T.simplify(t)
    assert s is x
    assert all(eval_term(t, {"x": v}) == v for v in range(256))


def test_hash_consing():
    assert T.add(x, y) is T.add(y, x)
    assert T.raw("add", x, y) is T.raw("add", x, y)


def test_wraparound_and_signed():
    assert T.add(T.const(255, W), T.const(1, W)).value == 0
    assert T.slt(T.const(255, W), T.const(0, W)).value == 1
    assert T.ult(T.const(255, W), T.const(0, W)).value == 0


def test_substitute_and_free_symbols():
    t = T.add(T.mul(x, T.const(2, W)), y)
    assert T.free_symbols([t]) == {"x", "y"}
    assert T.substitute(t, {"x": T.const(3, W), "y": T.const(1, W)}) is T.const(7, W)


def test_vectorised_evaluation_matches_scalar():
    t = T.ite(T.slt(x, y), T.shl(x, T.const(1, W)), T.sub(y, x))
    xs, ys = np.meshgrid(np.arange(256, dtype=np.uint64), np.arange(256, dtype=np.uint64))
    vec = T.evaluate(t, {"x": xs.ravel(), "y": ys.ravel()})
    for k in range(0, 65536, 997):
        env = {"x": int(xs.ravel()[k]), "y": int(ys.ravel()[k])}
        assert vec[k] == eval_term(t, env) == T.evaluate(t, env)


_GRID = np.arange(1 << 16, dtype=np.int64)
_ENV = {"x": _GRID >> 8, "y": _GRID & 255}


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32))
def test_simplify_preserves_value(seed):
    # small terms over at most two symbols, compared on all 65536 assignments
    rng = random.Random(seed)
    t = random_term(rng, [x, y], depth=3)
    s = T.simplify(t)
    before = np.broadcast_to(eval_array(t, _ENV, W), _GRID.shape)
    after = np.broadcast_to(eval_array(s, _ENV, W), _GRID.shape)
    assert np.array_equal(before, after), (t, s)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_smart_constructors_agree_with_raw(seed):
    rng = random.Random(seed)
    t = random_term(rng, [x, y], depth=3)
    s = T.simplify(t)
    assert T.simplify(s) is s
    assert s.syms <= t.syms


def test_serialization_round_trip():
    enc = T.TermEncoder()
    t = T.ite(T.eq(x, T.const(3, W)), T.add(x, y), T.const(9, W))
    root = enc.add(t)
    assert T.decode_nodes(enc.nodes)[root] is t
