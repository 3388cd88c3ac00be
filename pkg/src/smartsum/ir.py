"""Textual register IR: instructions, functions, programs, parser and unparser.

Grammar (one instruction or ``label:`` per line, ``#`` starts a comment)::

    fn NAME {
        const t0, 5
    loop:
        add t1, t1, t0
        blt t1, a0, loop
        ret
    }

A function header and a short body may share one line (``fn main { halt }``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

ARG_REGS = ("a0", "a1", "a2", "a3", "a4", "a5")
TEMP_REGS = tuple(f"t{i}" for i in range(10))
REGISTERS = ARG_REGS + ("rv", "sp") + TEMP_REGS

ARITH_OPS = ("add", "sub", "mul", "and", "or", "xor", "shl", "shr")
BRANCH_OPS = ("beq", "bne", "blt", "bge")

# operand signature per opcode: r = register, i = immediate, l = label, f = function name
SIGNATURES: dict[str, str] = {
    "const": "ri",
    "mov": "rr",
    **{op: "rrr" for op in ARITH_OPS},
    **{op: "rrl" for op in BRANCH_OPS},
    "jmp": "l",
    "jmpr": "r",
    "call": "f",
    "callr": "r",
    "ret": "",
    "load": "rri",
    "store": "rir",
    "lea": "rri",
    "alloc": "rr",
    "free": "r",
    "input": "r",
    "output": "r",
    "halt": "",
}

TERMINATORS = frozenset({"ret", "halt", "jmp", "jmpr"})


class ParseError(ValueError):
    """Raised for malformed IR text; carries a 1-based line and column."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        loc = f"{line}:{col}: " if line else ""
        super().__init__(f"{loc}{message}")


@dataclass(frozen=True)
class Instruction:
    op: str
    args: tuple = ()
    line: int = field(default=0, compare=False)

    def __str__(self) -> str:
        if not self.args:
            return self.op
        parts = []
        for kind, arg in zip(SIGNATURES[self.op], self.args):
            parts.append(_fmt_imm(arg) if kind == "i" else str(arg))
        return f"{self.op} {', '.join(parts)}"

    # register-level def/use, used by liveness and parameter inference
    def defs(self) -> tuple[str, ...]:
        if self.op in ("const", "mov", "load", "lea", "alloc", "input") or self.op in ARITH_OPS:
            return (self.args[0],)
        return ()

    def uses(self) -> tuple[str, ...]:
        op, a = self.op, self.args
        if op == "mov":
            return (a[1],)
        if op in ARITH_OPS:
            return (a[1], a[2])
        if op in BRANCH_OPS:
            return (a[0], a[1])
        if op in ("load", "lea", "alloc"):
            return (a[1],)
        if op == "store":
            return (a[0], a[2])
        if op in ("jmpr", "callr", "free", "output"):
            return (a[0],)
        return ()

    @property
    def label_target(self) -> str | None:
        if self.op in BRANCH_OPS:
            return self.args[2]
        if self.op == "jmp":
            return self.args[0]
        return None


def _fmt_imm(v: int) -> str:
    return str(v) if -256 < v < 256 else (hex(v) if v >= 0 else f"-{hex(-v)}")


@dataclass(frozen=True)
class Function:
    name: str
    instrs: tuple[Instruction, ...]
    labels: dict = field(default_factory=dict, compare=True, hash=False)

    def label_at(self, index: int) -> list[str]:
        return [lbl for lbl, i in self.labels.items() if i == index]

    def __len__(self) -> int:
        return len(self.instrs)


@dataclass(frozen=True)
class Program:
    functions: dict = field(hash=False)
    width: int = 16
    entry: str = "main"
    text: str = field(default="", compare=False, repr=False)

    def __getitem__(self, name: str) -> Function:
        return self.functions[name]

    def __contains__(self, name: str) -> bool:
        return name in self.functions

    @property
    def mask(self) -> int:
        return (1 << self.width) - 1


_TOKEN = re.compile(
    r"(?P<nl>\n)|(?P<ws>[ \t\r]+)|(?P<comment>#[^\n]*)|(?P<punct>[{},:])"
    r"|(?P<num>-?0[xX][0-9a-fA-F]+|-?\d+)|(?P<word>[A-Za-z_.$][A-Za-z0-9_.$]*)|(?P<bad>.)"
)


def _tokenize(text: str):
    line, line_start = 1, 0
    for m in _TOKEN.finditer(text):
        kind = m.lastgroup
        col = m.start() - line_start + 1
        if kind == "nl":
            yield ("nl", "\n", line, col)
            line += 1
            line_start = m.end()
        elif kind in ("ws", "comment"):
            continue
        elif kind == "bad":
            raise ParseError(f"unexpected character {m.group()!r}", line, col)
        else:
            yield (kind, m.group(), line, col)
    yield ("eof", "", line, 1)


def parse_program(text: str, width: int = 16) -> Program:
    """Parse IR text into a validated :class:`Program`.

    Immediates must lie in ``[-2**(width-1), 2**width)``.
    """
    if width not in (8, 16, 32):
        raise ParseError(f"unsupported width {width}")
    toks = list(_tokenize(text))
    pos = 0
    functions: dict[str, Function] = {}
    call_sites: list[tuple[str, int, int]] = []

    def peek():
        return toks[pos]

    def take(kind=None, value=None):
        nonlocal pos
        tok = toks[pos]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            want = value or kind
            got = tok[1] if tok[0] != "nl" else "end of line"
            raise ParseError(f"expected {want!r}, got {got or 'end of input'!r}", tok[2], tok[3])
        pos += 1
        return tok

    def skip_nl():
        nonlocal pos
        while toks[pos][0] == "nl":
            pos += 1

    lo, hi = -(1 << (width - 1)), 1 << width
    while True:
        skip_nl()
        tok = peek()
        if tok[0] == "eof":
            break
        if tok[1] != "fn":
            raise ParseError(f"expected 'fn', got {tok[1]!r}", tok[2], tok[3])
        take()
        name_tok = take("word")
        name = name_tok[1]
        if name in functions:
            raise ParseError(f"duplicate function {name}", name_tok[2], name_tok[3])
        take("punct", "{")
        instrs: list[Instruction] = []
        labels: dict[str, int] = {}
        label_pos: dict[str, tuple[int, int]] = {}
        branch_refs: list[tuple[str, int, int]] = []
        while True:
            skip_nl()
            tok = peek()
            if tok[0] == "eof":
                raise ParseError(f"unterminated function {name}", tok[2], tok[3])
            if tok[1] == "}":
                take()
                break
            word = take("word")
            if peek()[1] == ":":
                take()
                if word[1] in labels:
                    raise ParseError(f"duplicate label {word[1]}", word[2], word[3])
                labels[word[1]] = len(instrs)
                label_pos[word[1]] = (word[2], word[3])
                continue
            op = word[1]
            if op not in SIGNATURES:
                raise ParseError(f"unknown opcode {op}", word[2], word[3])
            sig = SIGNATURES[op]
            args = []
            for k, kind in enumerate(sig):
                if k:
                    take("punct", ",")
                t = peek()
                if kind == "i":
                    t = take("num")
                    v = int(t[1], 0)
                    if not lo <= v < hi:
                        raise ParseError(f"immediate {t[1]} does not fit {width} bits", t[2], t[3])
                    args.append(v)
                else:
                    t = take("word")
                    if kind == "r" and t[1] not in REGISTERS:
                        raise ParseError(f"unknown register {t[1]}", t[2], t[3])
                    if kind == "l":
                        branch_refs.append((t[1], t[2], t[3]))
                    if kind == "f":
                        call_sites.append((t[1], t[2], t[3]))
                    args.append(t[1])
            nxt = peek()
            if nxt[0] not in ("nl", "eof") and nxt[1] != "}":
                raise ParseError(f"unexpected {nxt[1]!r} after {op}", nxt[2], nxt[3])
            instrs.append(Instruction(op, tuple(args), word[2]))
        for lbl, (ln, col) in label_pos.items():
            if labels[lbl] >= len(instrs):
                raise ParseError(f"label {lbl} does not precede an instruction", ln, col)
        for lbl, ln, col in branch_refs:
            if lbl not in labels:
                raise ParseError(f"undefined label {lbl}", ln, col)
        if not instrs:
            raise ParseError(f"function {name} is empty", name_tok[2], name_tok[3])
        if instrs[-1].op not in TERMINATORS:
            raise ParseError(
                f"function {name} must end with ret, halt or a jump", instrs[-1].line, 1
            )
        functions[name] = Function(name, tuple(instrs), labels)
    for callee, ln, col in call_sites:
        if callee not in functions:
            raise ParseError(f"undefined call target {callee}", ln, col)
    if "main" not in functions:
        raise ParseError("program has no main function")
    return Program(functions, width, "main", text)


def unparse(program: Program) -> str:
    out = []
    for fn in program.functions.values():
        out.append(f"fn {fn.name} {{")
        by_index: dict[int, list[str]] = {}
        for lbl, i in fn.labels.items():
            by_index.setdefault(i, []).append(lbl)
        for i, ins in enumerate(fn.instrs):
            for lbl in by_index.get(i, ()):
                out.append(f"{lbl}:")
            out.append(f"    {ins}")
        out.append("}")
        out.append("")
    return "\n".join(out)


def make_program(functions: list[Function], width: int = 16) -> Program:
    """Build a Program from already-constructed functions, re-validating via text."""
    prog = Program({f.name: f for f in functions}, width)
    return parse_program(unparse(prog), width)
