"""Function signature recovery: arity and per-parameter value/reference kind."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

from .cfg import instr_successors
from .ir import ARG_REGS, ARITH_OPS, Function, Program


class ParamKind(enum.Enum):
    VALUE = "value"
    REFERENCE = "reference"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class ParamInfo:
    arity: int
    kinds: tuple[ParamKind, ...]

    @property
    def registers(self) -> tuple[str, ...]:
        return ARG_REGS[: self.arity]


def _call_uses(ins, arities) -> tuple[str, ...]:
    if ins.op == "call":
        return ARG_REGS[: arities.get(ins.args[0], 0)]
    return ins.uses()


def _may_unwritten(fn: Function, arities, initially_written=()) -> list[frozenset]:
    """Argument registers possibly not yet written on entry to each instruction."""
    n = len(fn.instrs)
    start = frozenset(ARG_REGS) - frozenset(initially_written)
    state: list[frozenset | None] = [None] * n
    state[0] = start
    work = [0]
    while work:
        i = work.pop()
        out = state[i] - frozenset(fn.instrs[i].defs())
        for s in instr_successors(fn, i):
            new = out if state[s] is None else state[s] | out
            if new != state[s]:
                state[s] = new
                work.append(s)
    return [s if s is not None else frozenset() for s in state]


def _read_before_write(fn: Function, arities) -> int:
    unwritten = _may_unwritten(fn, arities)
    arity = 0
    for i, ins in enumerate(fn.instrs):
        for r in _call_uses(ins, arities):
            if r in ARG_REGS and r in unwritten[i]:
                arity = max(arity, ARG_REGS.index(r) + 1)
    return arity


def _infer_arities(program: Program) -> dict[str, int]:
    arities = {name: 0 for name in program.functions}
    sites: dict[str, list[tuple[str, int]]] = {name: [] for name in program.functions}
    for name, fn in program.functions.items():
        for i, ins in enumerate(fn.instrs):
            if ins.op == "call":
                sites[ins.args[0]].append((name, i))
    while True:
        changed = False
        for name, fn in program.functions.items():
            rbw = _read_before_write(fn, arities)
            site_arity = 0
            if sites[name]:
                common = set(ARG_REGS)
                for caller, i in sites[name]:
                    cfn = program.functions[caller]
                    own = ARG_REGS[: arities[caller]]
                    unwritten = _may_unwritten(cfn, arities, own)[i]
                    common &= set(ARG_REGS) - unwritten
                site_arity = max((ARG_REGS.index(r) + 1 for r in common), default=0)
            # disagreement resolves toward the larger arity
            new = max(rbw, site_arity, arities[name])
            if new != arities[name]:
                arities[name] = new
                changed = True
        if not changed:
            return arities


def _classify(fn: Function, reg: str, arities) -> ParamKind:
    n = len(fn.instrs)
    state: list[frozenset | None] = [None] * n
    state[0] = frozenset({reg})
    work = [0]
    ref = unknown = False
    while work:
        i = work.pop()
        derived = state[i]
        ins = fn.instrs[i]
        op, a = ins.op, ins.args
        out = derived
        if derived:
            if op in ("load", "lea") and a[1] in derived:
                ref = True
            elif op == "store" and a[0] in derived:
                ref = True
            elif op == "free" and a[0] in derived:
                ref = True
            if op == "store" and a[2] in derived:
                unknown = True
            if op in ("callr", "jmpr") and a[0] in derived:
                unknown = True
            if op == "call" and derived & set(ARG_REGS[: arities.get(a[0], 0)]):
                unknown = True
            if op == "mov" or op in ARITH_OPS or op == "lea":
                srcs = ins.uses()
                if any(s in derived for s in srcs):
                    out = derived | {a[0]}
                else:
                    out = derived - {a[0]}
            elif ins.defs():
                out = derived - set(ins.defs())
        for s in instr_successors(fn, i):
            new = out if state[s] is None else state[s] | out
            if new != state[s]:
                state[s] = new
                work.append(s)
    if ref:
        return ParamKind.REFERENCE
    if unknown:
        return ParamKind.UNKNOWN
    return ParamKind.VALUE


@lru_cache(maxsize=256)
def _program_arities(program: Program) -> tuple:
    return tuple(sorted(_infer_arities(program).items()))


def infer_param_info(program: Program, name: str) -> ParamInfo:
    arities = dict(_program_arities(program))
    fn = program.functions[name]
    arity = arities[name]
    kinds = tuple(_classify(fn, r, arities) for r in ARG_REGS[:arity])
    return ParamInfo(arity, kinds)
