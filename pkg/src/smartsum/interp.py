"""Concrete interpreter with the same memory model as the symbolic engines.

Used as the differential oracle: unmapped memory and initial registers read
as zero, inputs past the end of the supplied vector read as zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .ir import ARG_REGS, Program
from .state import Canary, CodeToken, Layout
from .terms import to_signed

DEFAULT_STEP_LIMIT = 1_000_000


@dataclass
class Trace:
    outputs: list[int]
    end: str  # halt | return | fault | nonterminating
    heap_events: list[tuple] = field(default_factory=list)
    faults: list[tuple] = field(default_factory=list)
    rv: int = 0
    steps: int = 0
    registers: dict = field(default_factory=dict)


class _Fault(Exception):
    pass


def _alu(op: str, x: int, y: int, w: int) -> int:
    m = (1 << w) - 1
    if op == "add":
        r = x + y
    elif op == "sub":
        r = x - y
    elif op == "mul":
        r = x * y
    elif op == "and":
        r = x & y
    elif op == "or":
        r = x | y
    elif op == "xor":
        r = x ^ y
    elif op == "shl":
        r = x << y if y < w else 0
    elif op == "shr":
        r = x >> y if y < w else 0
    else:
        raise ValueError(op)
    return r & m


def _branch(op: str, x: int, y: int, w: int) -> bool:
    if op == "beq":
        return x == y
    if op == "bne":
        return x != y
    sx, sy = to_signed(x, w), to_signed(y, w)
    return sx < sy if op == "blt" else sx >= sy


def interpret(program: Program, inputs=(), step_limit: int = DEFAULT_STEP_LIMIT,
              entry: str | None = None, args=()) -> Trace:
    """Run ``program`` concretely; ``args`` preload a0.. when starting at another function."""
    w = program.width
    mask = (1 << w) - 1
    lay = Layout.for_width(w)
    regs = {r: 0 for r in ("a0", "a1", "a2", "a3", "a4", "a5", "rv", "sp")}
    regs.update({f"t{i}": 0 for i in range(10)})
    regs["sp"] = lay.stack_top
    for r, v in zip(ARG_REGS, args):
        regs[r] = v & mask
    mem: dict = {}
    chunks: dict[int, list] = {}  # base -> [size, status]
    guards: set[int] = set()
    heap_next = lay.heap_lo
    frames: list[int] = []
    next_frame = 0
    inputs = list(inputs)
    n_in = 0
    trace = Trace([], "halt")
    fn_name = entry or program.entry
    fn = program.functions[fn_name]
    idx = 0

    def chunk_of(a):
        for b, (size, status) in chunks.items():
            if b <= a < b + size:
                return b, status
        return None

    def access(a, write):
        if write and a in guards:
            trace.heap_events.append(("overflow", a))
        c = chunk_of(a)
        if c is not None and c[1] == "freed":
            trace.heap_events.append(("uaf", a))

    try:
        while True:
            if trace.steps >= step_limit:
                trace.end = "nonterminating"
                break
            trace.steps += 1
            ins = fn.instrs[idx]
            op, a = ins.op, ins.args
            nxt = idx + 1
            if op == "const":
                regs[a[0]] = a[1] & mask
            elif op == "mov":
                regs[a[0]] = regs[a[1]]
            elif op in ("add", "sub", "mul", "and", "or", "xor", "shl", "shr"):
                regs[a[0]] = _alu(op, regs[a[1]], regs[a[2]], w)
            elif op == "lea":
                regs[a[0]] = (regs[a[1]] + a[2]) & mask
            elif op in ("beq", "bne", "blt", "bge"):
                if _branch(op, regs[a[0]], regs[a[1]], w):
                    nxt = fn.labels[a[2]]
            elif op == "jmp":
                nxt = fn.labels[a[0]]
            elif op in ("jmpr", "callr"):
                trace.faults.append(("control", fn.name, idx))
                raise _Fault
            elif op == "call":
                sp = (regs["sp"] - 2) & mask
                next_frame += 1
                frames.append(next_frame)
                mem[sp + 1] = CodeToken(fn.name, nxt)
                mem[sp] = Canary(next_frame)
                regs["sp"] = sp
                fn, nxt = program.functions[a[0]], 0
            elif op == "ret":
                if not frames:
                    trace.end = "return"
                    break
                sp = regs["sp"]
                if mem.get(sp) != Canary(frames[-1]):
                    trace.faults.append(("canary", fn.name, idx))
                target = mem.get(sp + 1)
                if not isinstance(target, CodeToken):
                    trace.faults.append(("control", fn.name, idx))
                    raise _Fault
                frames.pop()
                regs["sp"] = (sp + 2) & mask
                fn, nxt = program.functions[target.function], target.index
            elif op == "halt":
                trace.end = "halt"
                break
            elif op == "load":
                addr = (regs[a[1]] + a[2]) & mask
                access(addr, False)
                cell = mem.get(addr, 0)
                regs[a[0]] = cell if isinstance(cell, int) else 0
            elif op == "store":
                addr = (regs[a[0]] + a[1]) & mask
                access(addr, True)
                mem[addr] = regs[a[2]]
            elif op == "alloc":
                size = regs[a[1]]
                b = heap_next + 1
                if b + size > lay.heap_hi:
                    trace.faults.append(("exhausted", fn.name, idx))
                    raise _Fault
                chunks[b] = [size, "live"]
                guards.update((b - 1, b + size))
                heap_next = b + size + 1
                regs[a[0]] = b
                trace.heap_events.append(("malloc", b, size))
            elif op == "free":
                b = regs[a[0]]
                trace.heap_events.append(("free", b))
                if b not in chunks:
                    trace.faults.append(("invalid_free", fn.name, idx))
                    raise _Fault
                if chunks[b][1] == "freed":
                    trace.faults.append(("double_free", fn.name, idx))
                    raise _Fault
                chunks[b][1] = "freed"
            elif op == "input":
                regs[a[0]] = (inputs[n_in] if n_in < len(inputs) else 0) & mask
                n_in += 1
            elif op == "output":
                trace.outputs.append(regs[a[0]])
            idx = nxt
    except _Fault:
        trace.end = "fault"
    trace.rv = regs["rv"]
    trace.registers = dict(regs)
    return trace
