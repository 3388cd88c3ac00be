"""Symbolic machine state, memory/heap/stack model and instruction semantics."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from . import terms as T
from .ir import ARITH_OPS, BRANCH_OPS, REGISTERS, Program
from .solver import DEFAULT_BUDGET, Verdict, check_sat
from .terms import Term

DEFAULT_FANOUT = 8
DEFAULT_SYMBOLIC_MALLOC = 16


@dataclass(frozen=True)
class Layout:
    globals_lo: int
    globals_hi: int
    heap_lo: int
    heap_hi: int
    stack_top: int

    @classmethod
    def for_width(cls, width: int) -> "Layout":
        base = (0x0100, 0x0FFF, 0x1000, 0x7FFF, 0xFFF0)
        if width == 16:
            return cls(*base)
        if width == 8:
            return cls(0x01, 0x0F, 0x10, 0x7F, 0xFF)
        shift = width - 16
        return cls(0x0100 << shift, (0x1000 << shift) - 1, 0x1000 << shift,
                   (0x8000 << shift) - 1, 0xFFF0 << shift)

    def region(self, addr: int) -> str:
        if self.globals_lo <= addr <= self.globals_hi:
            return "global"
        if self.heap_lo <= addr <= self.heap_hi:
            return "heap"
        if addr > self.heap_hi:
            return "stack"
        return "low"


@dataclass(frozen=True)
class CodeToken:
    """Opaque return address: resume ``function`` at instruction ``index``."""

    function: str
    index: int


@dataclass(frozen=True)
class Canary:
    frame: int


RETURN_TOKEN = CodeToken("<caller>", 0)


class EventKind(str, enum.Enum):
    STACK_SMASH = "StackSmash"
    CONTROL_CORRUPTION = "ControlCorruption"
    SYMBOLIC_TARGET = "SymbolicTarget"
    HEAP_OVERFLOW = "HeapOverflow"
    UAF = "UAF"
    DOUBLE_FREE = "DoubleFree"
    DOUBLE_FREE_POSSIBLE = "DoubleFreePossible"
    INVALID_FREE = "InvalidFree"
    UNCONSTRAINED_ACCESS = "UnconstrainedAccess"
    HEAP_EXHAUSTED = "HeapExhausted"
    SYMBOLIC_SIZE = "SymbolicSize"
    DEAD_CALL = "DeadCall"


@dataclass
class Event:
    kind: EventKind
    function: str
    index: int
    term: Term | None = None
    detail: str = ""
    sites: tuple = ()
    interprocedural: bool = False


class Op(str, enum.Enum):
    MALLOC = "Malloc"
    FREE = "Free"
    MEM_WRITE = "MemWrite"
    MEM_READ = "MemRead"
    GLOBAL_WRITE = "GlobalWrite"
    INPUT = "Input"
    OUTPUT = "Output"
    BUG = "Bug"


@dataclass(frozen=True)
class SideEffect:
    op: Op
    addr: Term | None = None
    value: Term | None = None
    size: int | None = None
    origin: tuple = ("", -1)
    precondition: int = -1
    kind: str = ""  # event kind for Bug effects
    sites: tuple = ()
    detail: str = ""


@dataclass
class Chunk:
    base: int | Term
    size: int | None
    status: str = "live"  # live | freed
    alloc_site: tuple = ()
    free_site: tuple = ()


@dataclass
class ExecContext:
    """Per-run knobs and counters shared by every state of one exploration."""

    program: Program
    budget: int = DEFAULT_BUDGET
    fanout: int = DEFAULT_FANOUT
    sat_queries: int = 0
    unknown_verdicts: int = 0

    def __post_init__(self):
        self.width = self.program.width
        self.layout = Layout.for_width(self.width)

    def check(self, constraints) -> Verdict:
        self.sat_queries += 1
        v = check_sat(tuple(constraints), self.budget)
        if v.unknown:
            self.unknown_verdicts += 1
        return v

    def const(self, v: int) -> Term:
        return T.const(v, self.width)


class PathState:
    __slots__ = (
        "regs", "mem", "heap", "guards", "heap_next", "fn", "idx", "pc", "loops",
        "effects", "frames", "next_frame", "outputs", "n_inputs", "n_fresh", "scope",
        "bases", "written", "done", "events", "mem_inputs", "global_inputs", "summary_mode",
        "steps",
    )

    def __init__(self, fn: str, regs: dict[str, Term], heap_next: int, scope: str = "",
                 summary_mode: bool = False):
        self.regs = regs
        self.mem: dict = {}
        self.heap: dict = {}
        self.guards: dict[int, int] = {}
        self.heap_next = heap_next
        self.fn = fn
        self.idx = 0
        self.pc: tuple[Term, ...] = ()
        self.loops: dict = {}
        self.effects: list[SideEffect] = []
        self.frames: list[int] = []
        self.next_frame = 0
        self.outputs: list[Term] = []
        self.n_inputs = 0
        self.n_fresh = 0
        self.scope = scope
        self.bases: frozenset = frozenset()
        self.written: set[str] = set()
        self.done: str | None = None
        self.events: list[Event] = []
        self.mem_inputs: dict = {}
        self.global_inputs: dict = {}
        self.summary_mode = summary_mode
        self.steps = 0

    def fork(self) -> "PathState":
        s = object.__new__(PathState)
        s.regs = dict(self.regs)
        s.mem = dict(self.mem)
        s.heap = {k: Chunk(c.base, c.size, c.status, c.alloc_site, c.free_site)
                  for k, c in self.heap.items()}
        s.guards = dict(self.guards)
        s.heap_next = self.heap_next
        s.fn, s.idx = self.fn, self.idx
        s.pc = self.pc
        s.loops = dict(self.loops)
        s.effects = list(self.effects)
        s.frames = list(self.frames)
        s.next_frame = self.next_frame
        s.outputs = list(self.outputs)
        s.n_inputs, s.n_fresh = self.n_inputs, self.n_fresh
        s.scope, s.bases = self.scope, self.bases
        s.written = set(self.written)
        s.done = self.done
        s.events = list(self.events)
        s.mem_inputs = dict(self.mem_inputs)
        s.global_inputs = dict(self.global_inputs)
        s.summary_mode = self.summary_mode
        s.steps = self.steps
        return s

    @property
    def location(self) -> tuple[str, int]:
        return (self.fn, self.idx)

    def add_constraint(self, c: Term) -> None:
        if c.is_const and c.value:
            return
        if c not in self.pc:
            self.pc = self.pc + (c,)

    def set_reg(self, r: str, v: Term) -> None:
        self.regs[r] = v
        self.written.add(r)

    def fresh(self, stem: str, width: int, kind: str = T.FRESH) -> Term:
        self.n_fresh += 1
        return T.sym(f"{self.scope}{stem}#{self.n_fresh}", width, kind)

    def emit(self, kind: EventKind, term: Term | None = None, detail: str = "",
             sites: tuple = (), where: tuple | None = None, interprocedural: bool = False) -> None:
        fn, idx = where or (self.fn, self.idx)
        self.events.append(Event(kind, fn, idx, term, detail, sites, interprocedural))

    def log(self, op: Op, **kw) -> None:
        kw.setdefault("origin", (self.fn, self.idx))
        self.effects.append(SideEffect(op, **kw))


def initial_state(ctx: ExecContext, fn: str = "main") -> PathState:
    """Entry state: every register an unconstrained input symbol except sp."""
    w = ctx.width
    regs = {r: T.sym(f"{r}@init", w) for r in REGISTERS}
    regs["sp"] = T.const(ctx.layout.stack_top, w)
    st = PathState(fn, regs, ctx.layout.heap_lo)
    st.written = set()
    return st


# -- memory --------------------------------------------------------------------

def model_value(t: Term, model) -> int:
    """Value of ``t`` under a solver model; symbols the model omits are free, read as 0."""
    env = {name: 0 for name in t.syms}
    env.update(model)
    return int(T.evaluate(t, env))


def _linear_base(addr: Term, bases: frozenset) -> tuple[Term | None, int | None]:
    """Split ``base + const`` addresses; offset is None when not constant."""
    coefs, c = T._linear(addr)
    base_atoms = [a for a in coefs if a.is_sym and a.name in bases]
    if len(base_atoms) != 1 or coefs[base_atoms[0]] & addr.mask != 1:
        return None, None
    base = base_atoms[0]
    if len(coefs) != 1:
        return base, None
    return base, c & addr.mask


def chunk_at(st: PathState, addr: int) -> Chunk | None:
    for ch in st.heap.values():
        if isinstance(ch.base, int) and ch.size is not None and ch.base <= addr < ch.base + ch.size:
            return ch
    return None


def _check_concrete_access(st: PathState, addr: int, ctx: ExecContext, write: bool) -> None:
    if write and addr in st.guards:
        st.emit(EventKind.HEAP_OVERFLOW, T.const(addr, ctx.width),
                f"write to guard cell {addr:#x} of chunk {st.guards[addr]:#x}")
    ch = chunk_at(st, addr)
    if ch is not None and ch.status == "freed":
        st.emit(EventKind.UAF, T.const(addr, ctx.width),
                f"{'write' if write else 'read'} of freed chunk {ch.base:#x}",
                sites=(ch.free_site,))


def _check_keyed_access(st: PathState, addr: Term, ctx: ExecContext, write: bool) -> None:
    base, off = _linear_base(addr, st.bases)
    if base is None or off is None:
        st.emit(EventKind.UNCONSTRAINED_ACCESS, addr, "non-constant offset from symbolic base")
        if base is None:
            return
    ch = st.heap.get(base)
    if ch is None:
        return
    if ch.status == "freed":
        st.emit(EventKind.UAF, addr, f"{'write' if write else 'read'} of freed {base.name}",
                sites=(ch.free_site,))
    elif write and off is not None and ch.size is not None:
        signed_off = T.to_signed(off, ctx.width)
        if signed_off < 0 or signed_off >= ch.size:
            st.emit(EventKind.HEAP_OVERFLOW, addr, f"write at offset {signed_off} of {base.name}")


def _keyed(st: PathState, addr: Term) -> bool:
    return st.summary_mode and not addr.is_const and bool(addr.syms & st.bases)


def _concrete_targets(st: PathState, addr: Term, ctx: ExecContext) -> list[int] | None:
    """Up to ``fanout`` feasible concrete values of ``addr``; None when more or unknown."""
    found: list[int] = []
    while len(found) <= ctx.fanout:
        extra = tuple(T.ne(addr, ctx.const(v)) for v in found)
        v = ctx.check(st.pc + extra)
        if v.unsat:
            return found
        if v.unknown:
            return None
        found.append(model_value(addr, v.model))
    return None


def _load_cell(st: PathState, a: int, ctx: ExecContext) -> Term:
    """Value of cell ``a``; unmapped cells become input-class symbols."""
    cell = st.mem.get(a)
    if isinstance(cell, Term):
        return cell
    if cell is not None:
        st.emit(EventKind.UNCONSTRAINED_ACCESS, None, f"opaque cell {cell} read as data")
        return st.fresh("opaque", ctx.width, T.INPUT)
    region = ctx.layout.region(a)
    prefix = "g" if region == "global" else "m"
    value = T.sym(f"{st.scope}{prefix}@{a:x}", ctx.width, T.INPUT)
    st.mem[a] = value
    if st.summary_mode:
        # loaded values may be pointers into caller memory
        st.bases = st.bases | {value.name}
        if region == "global":
            st.global_inputs[a] = value.name
    return value


def _load_keyed(st: PathState, addr: Term, ctx: ExecContext) -> Term:
    cell = st.mem.get(addr)
    if isinstance(cell, Term):
        return cell
    value = T.sym(f"{st.scope}*{T.to_str(addr)}", ctx.width, T.INPUT)
    st.mem[addr] = value
    st.bases = st.bases | {value.name}
    if not any(n.startswith(f"{st.scope}heap") for n in addr.syms):
        st.mem_inputs[addr] = value.name
    return value


def _read_concrete(st: PathState, a: int, ctx: ExecContext) -> Term:
    _check_concrete_access(st, a, ctx, write=False)
    if ctx.layout.region(a) == "heap":
        st.log(Op.MEM_READ, addr=ctx.const(a))
    return _load_cell(st, a, ctx)


def _fork_on_address(st: PathState, addr: Term, ctx: ExecContext, load) -> list[tuple[PathState, Term]]:
    targets = _concrete_targets(st, addr, ctx)
    if targets is None:
        st.emit(EventKind.UNCONSTRAINED_ACCESS, addr, "symbolic read address")
        return [(st, st.fresh("unk", ctx.width, T.INPUT))]
    out = []
    for k, v in enumerate(targets):
        s = st if k == len(targets) - 1 else st.fork()
        s.add_constraint(T.eq(addr, ctx.const(v)))
        out.append((s, load(s, v, ctx)))
    return out


def read_mem(st: PathState, addr: Term, ctx: ExecContext) -> list[tuple[PathState, Term]]:
    if addr.is_const:
        return [(st, _read_concrete(st, addr.value, ctx))]
    if _keyed(st, addr):
        _check_keyed_access(st, addr, ctx, write=False)
        st.log(Op.MEM_READ, addr=addr)
        return [(st, _load_keyed(st, addr, ctx))]
    return _fork_on_address(st, addr, ctx, _read_concrete)


def peek_mem(st: PathState, addr: Term, ctx: ExecContext) -> list[tuple[PathState, Term]]:
    """Like :func:`read_mem` but without access checks or logging."""
    if addr.is_const:
        return [(st, _load_cell(st, addr.value, ctx))]
    if _keyed(st, addr):
        return [(st, _load_keyed(st, addr, ctx))]
    return _fork_on_address(st, addr, ctx, _load_cell)


def replay_read(st: PathState, addr: Term, ctx: ExecContext) -> None:
    """Access checks and logging for a read whose value is already bound."""
    if addr.is_const:
        _check_concrete_access(st, addr.value, ctx, write=False)
        if ctx.layout.region(addr.value) == "heap":
            st.log(Op.MEM_READ, addr=addr)
        return
    if _keyed(st, addr):
        _check_keyed_access(st, addr, ctx, write=False)
    st.log(Op.MEM_READ, addr=addr)


def _write_concrete(st: PathState, a: int, value: Term, ctx: ExecContext) -> None:
    _check_concrete_access(st, a, ctx, write=True)
    region = ctx.layout.region(a)
    if region == "heap":
        st.log(Op.MEM_WRITE, addr=ctx.const(a), value=value)
    elif region == "global" and st.summary_mode:
        st.log(Op.GLOBAL_WRITE, addr=ctx.const(a), value=value)
    st.mem[a] = value


def write_mem(st: PathState, addr: Term, value: Term, ctx: ExecContext) -> list[PathState]:
    if addr.is_const:
        _write_concrete(st, addr.value, value, ctx)
        return [st]
    if _keyed(st, addr):
        _check_keyed_access(st, addr, ctx, write=True)
        st.log(Op.MEM_WRITE, addr=addr, value=value)
        st.mem[addr] = value
        return [st]
    targets = _concrete_targets(st, addr, ctx)
    if targets is None:
        st.emit(EventKind.UNCONSTRAINED_ACCESS, addr, "symbolic write address; write dropped")
        return [st]
    out = []
    for k, v in enumerate(targets):
        s = st if k == len(targets) - 1 else st.fork()
        s.add_constraint(T.eq(addr, ctx.const(v)))
        _write_concrete(s, v, value, ctx)
        out.append(s)
    return out


# -- heap ----------------------------------------------------------------------

def sym_malloc(st: PathState, size: Term, ctx: ExecContext) -> Term | None:
    """Allocate a chunk; returns its base, or None when the heap is exhausted."""
    site = st.location
    if size.is_const:
        n = size.value
    else:
        v = ctx.check(st.pc)
        if v.sat:
            n = model_value(size, v.model)
        else:
            n = DEFAULT_SYMBOLIC_MALLOC
        st.emit(EventKind.SYMBOLIC_SIZE, size, f"symbolic allocation size concretized to {n}")
    if st.summary_mode:
        st.n_fresh += 1
        base = T.sym(f"{st.scope}heap{st.n_fresh}", ctx.width, T.FRESH)
        st.bases = st.bases | {base.name}
        st.heap[base] = Chunk(base, n, "live", site)
        st.log(Op.MALLOC, addr=base, value=size, size=n)
        return base
    lay = ctx.layout
    b = st.heap_next + 1
    if b + n > lay.heap_hi:
        st.emit(EventKind.HEAP_EXHAUSTED, size, "heap exhausted")
        st.done = "fault"
        return None
    st.heap[b] = Chunk(b, n, "live", site)
    st.guards[b - 1] = b
    st.guards[b + n] = b
    st.heap_next = b + n + 1
    st.log(Op.MALLOC, addr=ctx.const(b), value=size, size=n)
    return ctx.const(b)


def sym_free(st: PathState, addr: Term, ctx: ExecContext) -> None:
    site = st.location
    if addr.is_const or addr in st.heap:
        key = addr.value if addr.is_const else addr
        ch = st.heap.get(key)
        if ch is None:
            st.emit(EventKind.INVALID_FREE, addr, "free of non-chunk address")
        elif ch.status == "freed":
            st.emit(EventKind.DOUBLE_FREE, addr, "chunk freed twice", sites=(ch.free_site, site))
            st.log(Op.FREE, addr=addr, size=ch.size)
        else:
            ch.status = "freed"
            ch.free_site = site
            st.log(Op.FREE, addr=addr, size=ch.size)
        return
    if _keyed(st, addr):
        # parameter-derived pointer: remember it as freed so later uses are caught
        st.heap[addr] = Chunk(addr, None, "freed", (), site)
        st.log(Op.FREE, addr=addr)
        return
    for ch in st.heap.values():
        if ch.status == "freed" and isinstance(ch.base, int):
            if ctx.check(st.pc + (T.eq(addr, ctx.const(ch.base)),)).feasible:
                st.emit(EventKind.DOUBLE_FREE_POSSIBLE, addr,
                        f"may equal freed chunk {ch.base:#x}", sites=(ch.free_site, site))
    for ch in st.heap.values():
        if ch.status == "live" and isinstance(ch.base, int):
            if ctx.check(st.pc + (T.eq(addr, ctx.const(ch.base)),)).feasible:
                ch.status = "freed"
                ch.free_site = site
                st.log(Op.FREE, addr=addr, size=ch.size)
                return
    if not any(e.kind is EventKind.DOUBLE_FREE_POSSIBLE for e in st.events):
        st.emit(EventKind.INVALID_FREE, addr, "symbolic free matches no chunk")


# -- instruction semantics -----------------------------------------------------

@dataclass
class StepResult:
    states: list[PathState]

    @property
    def events(self) -> list[Event]:
        return [e for s in self.states for e in s.events]


_BRANCH = {"beq": T.eq, "bne": T.ne, "blt": T.slt, "bge": T.sge}


def push_frame(st: PathState, return_to: CodeToken, ctx: ExecContext) -> None:
    sp = st.regs["sp"]
    new_sp = T.sub(sp, ctx.const(2))
    st.next_frame += 1
    st.frames.append(st.next_frame)
    if new_sp.is_const:
        st.mem[new_sp.value + 1] = return_to
        st.mem[new_sp.value] = Canary(st.next_frame)
    st.regs["sp"] = new_sp


def _ret(st: PathState, ctx: ExecContext) -> None:
    if not st.frames:
        st.done = "return"
        return
    sp = st.regs["sp"]
    if not sp.is_const:
        st.emit(EventKind.CONTROL_CORRUPTION, sp, "symbolic stack pointer at ret")
        st.done = "fault"
        return
    top = st.frames[-1]
    cell = st.mem.get(sp.value)
    if cell != Canary(top):
        st.emit(EventKind.STACK_SMASH, cell if isinstance(cell, Term) else None,
                "stack canary overwritten")
    target = st.mem.get(sp.value + 1)
    if not isinstance(target, CodeToken):
        st.emit(EventKind.CONTROL_CORRUPTION, target if isinstance(target, Term) else None,
                "return address overwritten")
        st.done = "fault"
        return
    st.frames.pop()
    st.regs["sp"] = T.add(sp, ctx.const(2))
    if target == RETURN_TOKEN:
        st.done = "return"
        return
    st.fn, st.idx = target.function, target.index


def step(st: PathState, ctx: ExecContext) -> StepResult:
    """Execute one instruction; successors carry their own new events."""
    st.events = []
    st.steps += 1
    fn = ctx.program.functions[st.fn]
    ins = fn.instrs[st.idx]
    op, a = ins.op, ins.args
    R = st.regs
    w = ctx.width
    nxt = st.idx + 1

    if op == "const":
        st.set_reg(a[0], ctx.const(a[1]))
    elif op == "mov":
        st.set_reg(a[0], R[a[1]])
    elif op in ARITH_OPS:
        st.set_reg(a[0], T.apply_op(op, R[a[1]], R[a[2]]))
    elif op == "lea":
        st.set_reg(a[0], T.add(R[a[1]], ctx.const(a[2])))
    elif op in BRANCH_OPS:
        cond = _BRANCH[op](R[a[0]], R[a[1]])
        target = fn.labels[a[2]]
        if cond.is_const:
            st.idx = target if cond.value else nxt
            return StepResult([st])
        other = st.fork()
        st.add_constraint(cond)
        st.idx = target
        other.add_constraint(T.not_(cond))
        other.idx = nxt
        return StepResult([st, other])
    elif op == "jmp":
        st.idx = fn.labels[a[0]]
        return StepResult([st])
    elif op in ("jmpr", "callr"):
        t = R[a[0]]
        kind = EventKind.CONTROL_CORRUPTION if t.is_const else EventKind.SYMBOLIC_TARGET
        st.emit(kind, t, f"indirect {op} target")
        st.done = "fault"
        return StepResult([st])
    elif op == "call":
        push_frame(st, CodeToken(st.fn, nxt), ctx)
        st.fn, st.idx = a[0], 0
        return StepResult([st])
    elif op == "ret":
        _ret(st, ctx)
        return StepResult([st])
    elif op == "halt":
        st.done = "halt"
        return StepResult([st])
    elif op == "load":
        addr = T.add(R[a[1]], ctx.const(a[2]))
        out = []
        for s, v in read_mem(st, addr, ctx):
            s.set_reg(a[0], v)
            s.idx = nxt
            out.append(s)
        return StepResult(out)
    elif op == "store":
        addr = T.add(R[a[0]], ctx.const(a[1]))
        out = write_mem(st, addr, R[a[2]], ctx)
        for s in out:
            s.idx = nxt
        return StepResult(out)
    elif op == "alloc":
        base = sym_malloc(st, R[a[1]], ctx)
        if base is None:
            return StepResult([st])
        st.set_reg(a[0], base)
    elif op == "free":
        sym_free(st, R[a[0]], ctx)
    elif op == "input":
        v = T.sym(f"{st.scope}in{st.n_inputs}", w, T.INPUT)
        st.n_inputs += 1
        st.set_reg(a[0], v)
        if st.summary_mode:
            st.log(Op.INPUT, value=v)
    elif op == "output":
        st.outputs.append(R[a[0]])
        if st.summary_mode:
            st.log(Op.OUTPUT, value=R[a[0]])
    else:  # pragma: no cover - parser rejects unknown opcodes
        raise ValueError(f"unknown opcode {op}")
    st.idx = nxt
    return StepResult([st])
