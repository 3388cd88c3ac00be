"""Small reference programs shared by tests, demos and documentation."""
from __future__ import annotations

# f returns 1 when its argument is positive (signed) and 0 otherwise
SIGN_FUNCTION = """\
fn main {
    input a0
    call f
    output rv
    halt
}

fn f {
    const t0, 0
    blt t0, a0, pos
    const rv, 0
    ret
pos:
    const rv, 1
    ret
}
"""

# main calls f, f calls g, g loads a value into rv
CALL_CHAIN = """\
fn main {
    input a0
    call f
    output rv
    halt
}

fn f {
    const t0, 1
    add a0, a0, t0
    call g
    ret
}

fn g {
    mov rv, a0
    ret
}
"""

# a store through sp overwrites the canary of the current frame
CANARY_CLOBBER = """\
fn main {
    input a0
    call victim
    halt
}

fn victim {
    const t9, 7
    store sp, 0, t9
    ret
}
"""

# control transfers to an address read from the input
JUMP_TO_INPUT = """\
fn main {
    input t0
    jmpr t0
}
"""

# the same chunk is freed twice
DOUBLE_FREE = """\
fn main {
    const t0, 2
    alloc a0, t0
    free a0
    free a0
    halt
}
"""

IDENTITY = """\
fn main {
    input a0
    call id
    output rv
    halt
}

fn id {
    mov rv, a0
    ret
}
"""
