"""Fixed-width bitvector terms.

Terms are hash-consed: two structurally identical terms are the same Python
object, so ``is`` is structural equality and terms are cheap dictionary keys.
Boolean-valued operators (comparisons, ``not``) produce 0 or 1 at the term's
width; a constraint holds when its term evaluates to a nonzero value.

The smart constructors (:func:`add`, :func:`eq`, ...) simplify on the fly;
:func:`raw` builds a node verbatim and :func:`simplify` rebuilds a raw tree
through the smart constructors.
"""
from __future__ import annotations

import hashlib
import threading
from typing import Iterable, Mapping

import numpy as np

INPUT = "input"
FRESH = "fresh"

ARITH = ("add", "sub", "mul", "and", "or", "xor", "shl", "shr")
COMPARE = ("eq", "ne", "ult", "ule", "slt", "sle")
BOOLEAN = frozenset(COMPARE + ("not",))
COMMUTATIVE = frozenset({"add", "mul", "and", "or", "xor", "eq", "ne"})

_TABLE: dict[tuple, "Term"] = {}
_LOCK = threading.Lock()


class Term:
    __slots__ = ("op", "width", "args", "value", "name", "kind", "syms", "has_input", "shash")

    op: str
    width: int
    args: tuple
    value: int | None
    name: str | None
    kind: str | None
    syms: frozenset
    has_input: bool
    shash: int

    def __repr__(self) -> str:
        return f"Term({to_str(self)})"

    def __str__(self) -> str:
        return to_str(self)

    @property
    def is_const(self) -> bool:
        return self.op == "const"

    @property
    def is_sym(self) -> bool:
        return self.op == "sym"

    @property
    def is_bool(self) -> bool:
        return self.op in BOOLEAN

    @property
    def mask(self) -> int:
        return (1 << self.width) - 1

    # arithmetic sugar; comparisons are functions since == is identity
    def _coerce(self, other) -> "Term":
        return other if isinstance(other, Term) else const(other, self.width)

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __rsub__(self, other):
        return sub(self._coerce(other), self)

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    __rmul__ = __mul__

    def __and__(self, other):
        return and_(self, self._coerce(other))

    def __or__(self, other):
        return or_(self, self._coerce(other))

    def __xor__(self, other):
        return xor(self, self._coerce(other))

    def __lshift__(self, other):
        return shl(self, self._coerce(other))

    def __rshift__(self, other):
        return shr(self, self._coerce(other))


def _make(op: str, width: int, args: tuple = (), value=None, name=None, kind=None) -> Term:
    key = (op, width, value, name, kind) + tuple(id(a) for a in args)
    t = _TABLE.get(key)
    if t is not None:
        return t
    for a in args:
        if a.width != width:
            raise ValueError(f"width mismatch in {op}: {a.width} vs {width}")
    t = object.__new__(Term)
    t.op, t.width, t.args, t.value, t.name, t.kind = op, width, args, value, name, kind
    if op == "sym":
        t.syms = frozenset((name,))
        t.has_input = kind == INPUT
    else:
        t.syms = frozenset().union(*(a.syms for a in args)) if args else frozenset()
        t.has_input = any(a.has_input for a in args)
    h = hashlib.blake2b(digest_size=8)
    h.update(repr((op, width, value, name, kind)).encode())
    for a in args:
        h.update(a.shash.to_bytes(8, "little"))
    t.shash = int.from_bytes(h.digest(), "little")
    with _LOCK:
        return _TABLE.setdefault(key, t)


def const(value: int, width: int) -> Term:
    return _make("const", width, value=value & ((1 << width) - 1))


def sym(name: str, width: int, kind: str = INPUT) -> Term:
    return _make("sym", width, name=name, kind=kind)


def true(width: int) -> Term:
    return const(1, width)


def false(width: int) -> Term:
    return const(0, width)


def raw(op: str, *args: Term) -> Term:
    """Build an operator node without any simplification."""
    return _make(op, args[0].width, tuple(args))


def to_signed(v: int, width: int) -> int:
    return v - (1 << width) if v >> (width - 1) else v


# -- linear normal form ------------------------------------------------------

def _linear(t: Term) -> tuple[dict[Term, int], int]:
    coefs: dict[Term, int] = {}
    c = 0
    stack = [(t, 1)]
    while stack:
        u, k = stack.pop()
        if u.op == "const":
            c += k * u.value
        elif u.op == "add":
            stack.append((u.args[0], k))
            stack.append((u.args[1], k))
        elif u.op == "sub":
            stack.append((u.args[0], k))
            stack.append((u.args[1], -k))
        elif u.op == "mul" and u.args[1].op == "const":
            stack.append((u.args[0], k * u.args[1].value))
        elif u.op == "mul" and u.args[0].op == "const":
            stack.append((u.args[1], k * u.args[0].value))
        else:
            coefs[u] = coefs.get(u, 0) + k
    return coefs, c


def _build_linear(coefs: Mapping[Term, int], c: int, width: int) -> Term:
    mask = (1 << width) - 1
    items = sorted(((a, k & mask) for a, k in coefs.items() if k & mask), key=lambda p: p[0].shash)
    acc = None
    for atom, k in items:
        term = atom if k == 1 else _make("mul", width, (atom, const(k, width)))
        acc = term if acc is None else _make("add", width, (acc, term))
    c &= mask
    if acc is None:
        return const(c, width)
    if c:
        acc = _make("add", width, (acc, const(c, width)))
    return acc


def _combine(a: Term, b: Term, sign: int) -> Term:
    ca, ka = _linear(a)
    cb, kb = _linear(b)
    for atom, k in cb.items():
        ca[atom] = ca.get(atom, 0) + sign * k
    return _build_linear(ca, ka + sign * kb, a.width)


def add(a: Term, b: Term) -> Term:
    a, b = _coerce_pair(a, b)
    if a.is_const and b.is_const:
        return const(a.value + b.value, a.width)
    return _combine(a, b, 1)


def sub(a: Term, b: Term) -> Term:
    a, b = _coerce_pair(a, b)
    if a.is_const and b.is_const:
        return const(a.value - b.value, a.width)
    if a is b:
        return const(0, a.width)
    return _combine(a, b, -1)


def mul(a: Term, b: Term) -> Term:
    a, b = _coerce_pair(a, b)
    w = a.width
    if a.is_const and b.is_const:
        return const(a.value * b.value, w)
    if a.is_const:
        a, b = b, a
    if b.is_const:
        if b.value == 0:
            return const(0, w)
        coefs, c = _linear(a)
        return _build_linear({k: v * b.value for k, v in coefs.items()}, c * b.value, w)
    if a.shash > b.shash:
        a, b = b, a
    return _make("mul", w, (a, b))


def _ordered(op: str, a: Term, b: Term) -> Term:
    if a.is_const or (not b.is_const and a.shash > b.shash):
        a, b = b, a
    return _make(op, a.width, (a, b))


def and_(a: Term, b: Term) -> Term:
    a, b = _coerce_pair(a, b)
    w, m = a.width, a.mask
    if a.is_const and b.is_const:
        return const(a.value & b.value, w)
    if a is b:
        return a
    for x, y in ((a, b), (b, a)):
        if y.is_const:
            if y.value == 0:
                return const(0, w)
            if y.value == m:
                return x
            if y.value == 1 and x.is_bool:
                return x
    return _ordered("and", a, b)


def or_(a: Term, b: Term) -> Term:
    a, b = _coerce_pair(a, b)
    w, m = a.width, a.mask
    if a.is_const and b.is_const:
        return const(a.value | b.value, w)
    if a is b:
        return a
    for x, y in ((a, b), (b, a)):
        if y.is_const:
            if y.value == 0:
                return x
            if y.value == m:
                return const(m, w)
    return _ordered("or", a, b)


def xor(a: Term, b: Term) -> Term:
    a, b = _coerce_pair(a, b)
    w = a.width
    if a.is_const and b.is_const:
        return const(a.value ^ b.value, w)
    if a is b:
        return const(0, w)
    for x, y in ((a, b), (b, a)):
        if y.is_const and y.value == 0:
            return x
    return _ordered("xor", a, b)


def shl(a: Term, b: Term) -> Term:
    a, b = _coerce_pair(a, b)
    w = a.width
    if b.is_const:
        if b.value >= w:
            return const(0, w)
        return mul(a, const(1 << b.value, w))
    if a.is_const and a.value == 0:
        return a
    return _make("shl", w, (a, b))


def shr(a: Term, b: Term) -> Term:
    a, b = _coerce_pair(a, b)
    w = a.width
    if b.is_const:
        if b.value >= w:
            return const(0, w)
        if b.value == 0:
            return a
        if a.is_const:
            return const(a.value >> b.value, w)
    if a.is_const and a.value == 0:
        return a
    return _make("shr", w, (a, b))


def _fold_compare(op: str, x: int, y: int, w: int) -> bool:
    if op == "eq":
        return x == y
    if op == "ne":
        return x != y
    if op == "ult":
        return x < y
    if op == "ule":
        return x <= y
    if op == "slt":
        return to_signed(x, w) < to_signed(y, w)
    return to_signed(x, w) <= to_signed(y, w)


def _equality(op: str, a: Term, b: Term) -> Term:
    w, m = a.width, a.mask
    if a.is_bool and b.is_const and b.value in (0, 1):
        return a if (b.value == 1) == (op == "eq") else not_(a)
    if b.is_bool and a.is_const and a.value in (0, 1):
        return b if (a.value == 1) == (op == "eq") else not_(b)
    coefs, c = _linear(a)
    cb, kb = _linear(b)
    for atom, k in cb.items():
        coefs[atom] = coefs.get(atom, 0) - k
    c -= kb
    items = sorted(((t, k & m) for t, k in coefs.items() if k & m), key=lambda p: p[0].shash)
    if not items:
        return const(int((c & m) == 0) if op == "eq" else int((c & m) != 0), w)
    if items[0][1] > m // 2:  # normalize sign so the leading coefficient is "positive"
        items = [(t, -k) for t, k in items]
        c = -c
    lhs = _build_linear(dict(items), 0, w)
    rhs = const(-c, w)
    return _make(op, w, (lhs, rhs))


def _coerce_pair(a, b) -> tuple[Term, Term]:
    if not isinstance(a, Term):
        a = const(a, b.width)
    if not isinstance(b, Term):
        b = const(b, a.width)
    return a, b


def _compare(op: str, a: Term, b: Term) -> Term:
    a, b = _coerce_pair(a, b)
    w, m = a.width, a.mask
    if a.is_const and b.is_const:
        return const(int(_fold_compare(op, a.value, b.value, w)), w)
    if a is b:
        return const(int(op in ("eq", "ule", "sle")), w)
    if op in ("eq", "ne"):
        return _equality(op, a, b)
    smin, smax = 1 << (w - 1), (1 << (w - 1)) - 1
    if op == "ult" and b.is_const and b.value == 0:
        return const(0, w)
    if op == "ule" and (a.is_const and a.value == 0 or b.is_const and b.value == m):
        return const(1, w)
    if op == "slt" and b.is_const and b.value == smin:
        return const(0, w)
    if op == "sle" and (a.is_const and a.value == smin or b.is_const and b.value == smax):
        return const(1, w)
    return _make(op, w, (a, b))


def eq(a: Term, b: Term) -> Term:
    return _compare("eq", a, b)


def ne(a: Term, b: Term) -> Term:
    return _compare("ne", a, b)


def ult(a: Term, b: Term) -> Term:
    return _compare("ult", a, b)


def ule(a: Term, b: Term) -> Term:
    return _compare("ule", a, b)


def slt(a: Term, b: Term) -> Term:
    return _compare("slt", a, b)


def sle(a: Term, b: Term) -> Term:
    return _compare("sle", a, b)


def ugt(a: Term, b: Term) -> Term:
    return ult(b, a)


def uge(a: Term, b: Term) -> Term:
    return ule(b, a)


def sgt(a: Term, b: Term) -> Term:
    return slt(b, a)


def sge(a: Term, b: Term) -> Term:
    return sle(b, a)


_NEGATE = {"eq": ("ne", False), "ne": ("eq", False), "ult": ("ule", True),
           "ule": ("ult", True), "slt": ("sle", True), "sle": ("slt", True)}


def not_(t: Term) -> Term:
    """Logical negation: 1 when ``t`` is zero, else 0."""
    w = t.width
    if t.is_const:
        return const(int(t.value == 0), w)
    if t.op in _NEGATE:
        op, swap = _NEGATE[t.op]
        a, b = t.args
        return _compare(op, b, a) if swap else _compare(op, a, b)
    if t.op == "not":
        x = t.args[0]
        return x if x.is_bool else ne(x, const(0, w))
    return eq(t, const(0, w))


def ite(c: Term, a: Term, b: Term) -> Term:
    if c.is_const:
        return a if c.value else b
    if a is b:
        return a
    if c.is_bool and a.is_const and b.is_const:
        if a.value == 1 and b.value == 0:
            return c
        if a.value == 0 and b.value == 1:
            return not_(c)
    return _make("ite", a.width, (c, a, b))


def conj(terms: Iterable[Term], width: int) -> Term:
    acc = true(width)
    for t in terms:
        acc = and_(acc, t if t.is_bool else ne(t, const(0, width)))
    return acc


_BUILDERS = {
    "add": add, "sub": sub, "mul": mul, "and": and_, "or": or_, "xor": xor,
    "shl": shl, "shr": shr, "eq": eq, "ne": ne, "ult": ult, "ule": ule,
    "slt": slt, "sle": sle, "not": not_, "ite": ite,
}


def apply_op(op: str, *args: Term) -> Term:
    return _BUILDERS[op](*args)


# -- traversal -----------------------------------------------------------------

def postorder(root: Term) -> list[Term]:
    """Distinct nodes of the DAG below ``root``, children before parents."""
    out, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            out.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for a in reversed(node.args):
            if id(a) not in seen:
                stack.append((a, False))
    return out


def simplify(t: Term) -> Term:
    done: dict[int, Term] = {}
    for node in postorder(t):
        if node.args:
            done[id(node)] = apply_op(node.op, *(done[id(a)] for a in node.args))
        else:
            done[id(node)] = node
    return done[id(t)]


def substitute(t: Term, mapping: Mapping[str, Term]) -> Term:
    if not mapping or not (t.syms & mapping.keys()):
        return t
    done: dict[int, Term] = {}
    for node in postorder(t):
        if node.op == "sym":
            done[id(node)] = mapping.get(node.name, node)
        elif not node.args:
            done[id(node)] = node
        elif not (node.syms & mapping.keys()):
            done[id(node)] = node
        else:
            done[id(node)] = apply_op(node.op, *(done[id(a)] for a in node.args))
    return done[id(t)]


def free_symbols(terms: Iterable[Term]) -> frozenset:
    return frozenset().union(*(t.syms for t in terms))


def symbol_nodes(t: Term) -> list[Term]:
    return [n for n in postorder(t) if n.op == "sym"]


def evaluate(t: Term, env: Mapping[str, object]):
    """Evaluate under ``env`` (symbol name -> int or uint64 array).

    Returns a Python int for scalar environments and a uint64 array otherwise.
    """
    w = t.width
    m = np.uint64((1 << w) - 1)
    sb = np.uint64(1 << (w - 1))
    wv = np.uint64(w)
    vals: dict[int, object] = {}
    scalar = True
    for node in postorder(t):
        op = node.op
        if op == "const":
            v = np.uint64(node.value)
        elif op == "sym":
            x = env[node.name]
            if isinstance(x, np.ndarray):
                scalar = False
                v = x.astype(np.uint64, copy=False)
            else:
                v = np.uint64(int(x) & int(m))
        else:
            a = [vals[id(x)] for x in node.args]
            if op == "add":
                v = (a[0] + a[1]) & m
            elif op == "sub":
                v = (a[0] - a[1]) & m
            elif op == "mul":
                v = (a[0] * a[1]) & m
            elif op == "and":
                v = a[0] & a[1]
            elif op == "or":
                v = a[0] | a[1]
            elif op == "xor":
                v = a[0] ^ a[1]
            elif op == "shl":
                v = np.where(a[1] >= wv, np.uint64(0), (a[0] << np.minimum(a[1], np.uint64(63))) & m)
            elif op == "shr":
                v = np.where(a[1] >= wv, np.uint64(0), a[0] >> np.minimum(a[1], np.uint64(63)))
            elif op == "eq":
                v = (a[0] == a[1])
            elif op == "ne":
                v = (a[0] != a[1])
            elif op == "ult":
                v = (a[0] < a[1])
            elif op == "ule":
                v = (a[0] <= a[1])
            elif op == "slt":
                v = ((a[0] ^ sb) < (a[1] ^ sb))
            elif op == "sle":
                v = ((a[0] ^ sb) <= (a[1] ^ sb))
            elif op == "not":
                v = (a[0] == np.uint64(0))
            elif op == "ite":
                v = np.where(a[0] != np.uint64(0), a[1], a[2])
            else:
                raise ValueError(f"unknown operator {op}")
            if op in BOOLEAN:
                v = np.asarray(v).astype(np.uint64)
        vals[id(node)] = v
    out = vals[id(t)]
    if scalar:
        return int(np.asarray(out).reshape(-1)[0]) if np.ndim(out) else int(out)
    return np.broadcast_to(np.asarray(out, dtype=np.uint64), _shape(env)).copy()


def _shape(env) -> tuple:
    for x in env.values():
        if isinstance(x, np.ndarray):
            return x.shape
    return ()


# -- printing and serialization ----------------------------------------------

_INFIX = {"add": "+", "sub": "-", "mul": "*", "and": "&", "or": "|", "xor": "^",
          "shl": "<<", "shr": ">>", "eq": "==", "ne": "!=", "ult": "<u",
          "ule": "<=u", "slt": "<s", "sle": "<=s"}


def to_str(t: Term) -> str:
    s: dict[int, str] = {}
    for node in postorder(t):
        if node.op == "const":
            s[id(node)] = hex(node.value) if node.value > 9 else str(node.value)
        elif node.op == "sym":
            s[id(node)] = node.name
        elif node.op == "not":
            s[id(node)] = f"!{s[id(node.args[0])]}"
        elif node.op == "ite":
            c, a, b = (s[id(x)] for x in node.args)
            s[id(node)] = f"ite({c}, {a}, {b})"
        else:
            s[id(node)] = f"({s[id(node.args[0])]} {_INFIX[node.op]} {s[id(node.args[1])]})"
    return s[id(t)]


class TermEncoder:
    """Shared node table for serializing many terms as one JSON-able list."""

    def __init__(self):
        self.nodes: list[list] = []
        self._index: dict[int, int] = {}

    def add(self, t: Term) -> int:
        for node in postorder(t):
            if id(node) in self._index:
                continue
            if node.op == "const":
                rec = ["c", node.width, node.value]
            elif node.op == "sym":
                rec = ["s", node.width, node.name, node.kind]
            else:
                rec = [node.op, node.width] + [self._index[id(a)] for a in node.args]
            self._index[id(node)] = len(self.nodes)
            self.nodes.append(rec)
        return self._index[id(t)]


def decode_nodes(nodes: list[list]) -> list[Term]:
    out: list[Term] = []
    for rec in nodes:
        if rec[0] == "c":
            out.append(const(rec[2], rec[1]))
        elif rec[0] == "s":
            out.append(sym(rec[2], rec[1], rec[3]))
        else:
            out.append(_make(rec[0], rec[1], tuple(out[i] for i in rec[2:])))
    return out
