"""Bounded bitvector satisfiability: propagate, then enumerate.

The procedure is deliberately small: constant/equality propagation, interval
narrowing per symbol, and vectorized enumeration over independent symbol
groups of at most ``max_vars`` symbols. Anything beyond the step budget is
``unknown``; callers decide what an unknown verdict means.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

from . import terms as T
from .terms import Term

DEFAULT_BUDGET = 200_000
DEFAULT_MAX_VARS = 4
_CHUNK = 1 << 18


class Status(enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Verdict:
    status: Status
    model: Mapping[str, int] | None = None
    reason: str = ""

    @property
    def sat(self) -> bool:
        return self.status is Status.SAT

    @property
    def unsat(self) -> bool:
        return self.status is Status.UNSAT

    @property
    def unknown(self) -> bool:
        return self.status is Status.UNKNOWN

    @property
    def feasible(self) -> bool:
        """Sat or unknown; the over-approximating reading used by the engines."""
        return self.status is not Status.UNSAT


@dataclass(frozen=True)
class ConstraintSet:
    """Ordered conjunction of boolean terms."""

    terms: tuple[Term, ...] = ()
    symbols: frozenset = field(default=frozenset(), compare=False)

    @classmethod
    def of(cls, constraints: Iterable[Term]) -> "ConstraintSet":
        ts = tuple(constraints)
        return cls(ts, T.free_symbols(ts))

    def __iter__(self):
        return iter(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def __add__(self, other: Iterable[Term]) -> "ConstraintSet":
        return ConstraintSet.of(self.terms + tuple(other))


def _as_tuple(c) -> tuple[Term, ...]:
    if isinstance(c, ConstraintSet):
        return c.terms
    return tuple(c)


def _truth(t: Term) -> Term:
    return t if t.is_bool or t.is_const else T.ne(t, T.const(0, t.width))


def _holds(t: Term, model: Mapping[str, int]) -> bool:
    return T.evaluate(t, model) != 0


def check_sat(constraints, budget: int = DEFAULT_BUDGET, max_vars: int = DEFAULT_MAX_VARS) -> Verdict:
    if budget <= 0:
        raise ValueError("budget must be positive")
    return _check_cached(_as_tuple(constraints), budget, max_vars)


@lru_cache(maxsize=65536)
def _check_cached(cs: tuple[Term, ...], budget: int, max_vars: int) -> Verdict:
    original = [_truth(T.simplify(c)) for c in cs]
    verdict = _solve(original, budget, max_vars)
    if verdict.sat:
        model = dict(verdict.model)
        for c in original:
            for s in c.syms:
                model.setdefault(s, 0)
        if not all(_holds(c, model) for c in original):
            return Verdict(Status.UNKNOWN, reason="model failed verification")
        return Verdict(Status.SAT, model)
    return verdict


def _sym_coef(lhs: Term) -> tuple[Term, int] | None:
    if lhs.is_sym:
        return lhs, 1
    if lhs.op == "mul" and lhs.args[0].is_sym and lhs.args[1].is_const:
        return lhs.args[0], lhs.args[1].value
    return None


def _solve(constraints: list[Term], budget: int, max_vars: int) -> Verdict:
    if not constraints:
        return Verdict(Status.SAT, {})
    width = constraints[0].width
    mask = (1 << width) - 1
    half = 1 << (width - 1)
    bound: dict[str, int] = {}
    work = list(constraints)
    lo: dict[str, int] = {}
    hi: dict[str, int] = {}

    for _ in range(64):
        # constant propagation
        changed = True
        while changed:
            changed = False
            kept = []
            for c in work:
                if c.is_const:
                    if c.value == 0:
                        return Verdict(Status.UNSAT, reason="constraint folds to false")
                    continue
                kept.append(c)
            work = kept
            for c in work:
                if c.op == "eq" and c.args[1].is_const:
                    sc = _sym_coef(c.args[0])
                    if sc and sc[1] & 1:
                        s, k = sc
                        inv = pow(k, -1, 1 << width)
                        bound[s.name] = (c.args[1].value * inv) & mask
                        mapping = {s.name: T.const(bound[s.name], width)}
                        work = [_truth(T.substitute(x, mapping)) for x in work]
                        changed = True
                        break
        # interval narrowing (unsigned, plus signed ranges that do not wrap)
        syms = sorted(T.free_symbols(work))
        lo = {s: 0 for s in syms}
        hi = {s: mask for s in syms}
        slo = {s: -half for s in syms}
        shi = {s: half - 1 for s in syms}
        for _pass in range(8):
            moved = False
            for c in work:
                if c.op not in ("ult", "ule", "slt", "sle", "ne"):
                    continue
                a, b = c.args
                if c.op == "ne":
                    if a.is_sym and b.is_const:
                        s, v = a.name, b.value
                        if lo[s] == v:
                            lo[s] += 1
                            moved = True
                        if hi[s] == v:
                            hi[s] -= 1
                            moved = True
                    continue
                strict = c.op in ("ult", "slt")
                signed = c.op in ("slt", "sle")
                if a.is_sym and b.is_const:
                    s = a.name
                    v = T.to_signed(b.value, width) if signed else b.value
                    v -= strict
                    if signed:
                        if v < shi[s]:
                            shi[s], moved = v, True
                    elif v < hi[s]:
                        hi[s], moved = v, True
                elif b.is_sym and a.is_const:
                    s = b.name
                    v = T.to_signed(a.value, width) if signed else a.value
                    v += strict
                    if signed:
                        if v > slo[s]:
                            slo[s], moved = v, True
                    elif v > lo[s]:
                        lo[s], moved = v, True
            for s in syms:
                if slo[s] > shi[s] or lo[s] > hi[s]:
                    return Verdict(Status.UNSAT, reason=f"empty interval for {s}")
                if slo[s] >= 0 or shi[s] < 0:
                    ulo, uhi = slo[s] & mask, shi[s] & mask
                    if ulo > lo[s]:
                        lo[s], moved = ulo, True
                    if uhi < hi[s]:
                        hi[s], moved = uhi, True
                    if lo[s] > hi[s]:
                        return Verdict(Status.UNSAT, reason=f"empty interval for {s}")
            if not moved:
                break
        singles = {s: lo[s] for s in syms if lo[s] == hi[s]}
        if not singles:
            break
        for s, v in singles.items():
            bound[s] = v
        mapping = {s: T.const(v, width) for s, v in singles.items()}
        work = [_truth(T.substitute(x, mapping)) for x in work]
    else:
        return Verdict(Status.UNKNOWN, reason="propagation did not converge")

    for c in work:
        if c.is_const and c.value == 0:
            return Verdict(Status.UNSAT, reason="constraint folds to false")
    work = [c for c in work if not c.is_const]

    model = dict(bound)
    groups = _components(work)
    remaining = budget
    unknown_reason = ""
    for names, group in groups:
        if len(names) > max_vars:
            unknown_reason = f"{len(names)} dependent symbols exceed limit {max_vars}"
            continue
        verdict, used = _enumerate(names, group, lo, hi, remaining)
        remaining -= used
        if verdict.unsat:
            return verdict
        if verdict.unknown:
            unknown_reason = verdict.reason
            remaining = max(remaining, 0)
            continue
        model.update(verdict.model)
    if unknown_reason:
        return Verdict(Status.UNKNOWN, reason=unknown_reason)
    for s in T.free_symbols(constraints):
        model.setdefault(s, lo.get(s, 0))
    return Verdict(Status.SAT, model)


def _components(constraints: list[Term]) -> list[tuple[list[str], list[Term]]]:
    parent: dict[str, str] = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for c in constraints:
        names = sorted(c.syms)
        for n in names:
            parent.setdefault(n, n)
        for n in names[1:]:
            ra, rb = find(names[0]), find(n)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[str, list[Term]] = {}
    for c in constraints:
        groups.setdefault(find(min(c.syms)), []).append(c)
    out = []
    for root in sorted(groups):
        cs = groups[root]
        out.append((sorted(T.free_symbols(cs)), cs))
    return out


def _decode(names, sizes, lows, start: int, stop: int) -> dict:
    """Mixed-radix decode of a flat index range; the last name varies fastest."""
    env = {}
    rest = np.arange(start, stop, dtype=np.uint64)
    for n, size, low in zip(reversed(names), reversed(sizes), reversed(lows)):
        env[n] = (rest % np.uint64(size)) + np.uint64(low)
        rest = rest // np.uint64(size)
    return env


def _first_hit(group, env) -> int | None:
    """Position of the first candidate in ``env`` satisfying every constraint."""
    pos = None
    for c in group:
        ok = T.evaluate(c, env)
        if not isinstance(ok, np.ndarray):
            if not ok:
                return None
            continue
        ok = ok != 0
        if pos is None:
            pos = np.arange(ok.size)
        if not ok.all():
            pos = pos[ok]
            env = {n: (v[ok] if isinstance(v, np.ndarray) else v) for n, v in env.items()}
        if not pos.size:
            return None
    return 0 if pos is None else int(pos[0])


def _enumerate(names, group, lo, hi, budget) -> tuple[Verdict, int]:
    sizes = [hi[n] - lo[n] + 1 for n in names]
    lows = [lo[n] for n in names]
    total = 1
    for s in sizes:
        total *= s
    limit = min(total, max(budget, 0))
    # the longest suffix of symbols whose joint range fits one chunk is laid out
    # once as arrays; the remaining prefix symbols are walked as scalars
    split, inner = len(names), 1
    while split > 0 and inner * sizes[split - 1] <= _CHUNK:
        split -= 1
        inner *= sizes[split]
    done = 0
    if split < len(names):
        grid = _decode(names[split:], sizes[split:], lows[split:], 0, inner)
        outer = itertools.product(*(range(lo[n], hi[n] + 1) for n in names[:split]))
        for combo in outer:
            if done >= limit:
                break
            take = min(inner, limit - done)
            env = {n: v[:take] for n, v in grid.items()}
            env.update(zip(names[:split], combo))
            k = _first_hit(group, env)
            if k is not None:
                model = dict(zip(names[:split], combo))
                model.update({n: int(v[k]) for n, v in grid.items()})
                return Verdict(Status.SAT, model), done + k + 1
            done += take
    else:
        while done < limit:
            stop = min(done + _CHUNK, limit)
            env = _decode(names, sizes, lows, done, stop)
            k = _first_hit(group, env)
            if k is not None:
                return Verdict(Status.SAT, {n: int(env[n][k]) for n in names}), done + k + 1
            done = stop
    if limit == total:
        return Verdict(Status.UNSAT, reason="exhaustive enumeration"), total
    return Verdict(Status.UNKNOWN, reason="enumeration budget exhausted"), limit


def get_model(constraints, budget: int = DEFAULT_BUDGET) -> dict[str, int] | None:
    v = check_sat(constraints, budget)
    return dict(v.model) if v.sat else None


def project_inputs(constraints, inputs: Iterable[str], carried: Iterable[str] = ()) -> ConstraintSet:
    """Keep the constraints whose symbols all lie in ``inputs | carried``."""
    allowed = frozenset(inputs) | frozenset(carried)
    return ConstraintSet.of(c for c in _as_tuple(constraints) if c.syms <= allowed)


def equivalent(a: Term, b: Term, assumptions=(), budget: int = DEFAULT_BUDGET,
               with_witness: bool = False):
    """True if ``a == b`` under the assumptions, False if not, None if undecided."""
    if a.width != b.width:
        raise ValueError("terms differ in width")
    v = check_sat(_as_tuple(assumptions) + (T.ne(a, b),), budget)
    result = True if v.unsat else (False if v.sat else None)
    if with_witness:
        return result, (dict(v.model) if v.sat else None)
    return result


def clear_cache() -> None:
    _check_cached.cache_clear()
