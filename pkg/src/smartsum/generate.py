"""Synthetic benchmark programs."""
from __future__ import annotations

MAX_DEPTH = 6


def gen_nested_loops(depth: int, iters: int, threshold: int = 3) -> str:
    """IR text for ``depth`` nested counting loops of ``iters`` iterations each.

    The innermost body adds the input ``x`` to an accumulator and adds one more
    when ``x < threshold`` (signed), so exploration forks on the input and the
    work cannot be folded away. The accumulator is printed at the end.
    """
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in 1..{MAX_DEPTH}")
    if iters < 1:
        raise ValueError("iters must be positive")
    lines = ["fn main {", "    input a0", "    const a1, 0"]

    def loop(level: int) -> None:
        c = f"t{level}"
        lines.append(f"    const {c}, 0")
        lines.append(f"head{level}:")
        lines.append(f"    const t6, {iters}")
        lines.append(f"    bge {c}, t6, exit{level}")
        if level + 1 < depth:
            loop(level + 1)
        else:
            lines.append("    add a1, a1, a0")
            lines.append(f"    const t6, {threshold}")
            lines.append("    bge a0, t6, skip")
            lines.append("    const t7, 1")
            lines.append("    add a1, a1, t7")
            lines.append("skip:")
        lines.append("    const t7, 1")
        lines.append(f"    add {c}, {c}, t7")
        lines.append(f"    jmp head{level}")
        lines.append(f"exit{level}:")

    loop(0)
    lines += ["    output a1", "    halt", "}"]
    return "\n".join(lines) + "\n"
