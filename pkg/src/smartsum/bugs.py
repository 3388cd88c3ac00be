"""Turning engine events into bug reports, plus the report document format."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from . import terms as T
from .solver import check_sat
from .state import Event, EventKind, ExecContext, PathState
from .terms import Term

SCHEMA = "smartsum.bugreport/1"
CRAFTED_TARGET = 0x41


class BugKind(str, enum.Enum):
    HIJACK = "Hijack"
    STACK_SMASH = "StackSmash"
    DOUBLE_FREE = "DoubleFree"
    UAF = "UAF"
    HEAP_OVERFLOW = "HeapOverflow"
    INVALID_FREE = "InvalidFree"
    CONTROL_CORRUPTION = "ControlCorruption"
    UNCONSTRAINED_ACCESS = "UnconstrainedAccess"

    @property
    def severity(self) -> int:
        """Lower is more severe; DoubleFree and UAF share a rank."""
        return _SEVERITY[self]


_SEVERITY = {
    BugKind.HIJACK: 0,
    BugKind.STACK_SMASH: 1,
    BugKind.DOUBLE_FREE: 2,
    BugKind.UAF: 2,
    BugKind.HEAP_OVERFLOW: 3,
    BugKind.INVALID_FREE: 4,
    BugKind.CONTROL_CORRUPTION: 5,
    BugKind.UNCONSTRAINED_ACCESS: 6,
}

_DIRECT = {
    EventKind.STACK_SMASH: BugKind.STACK_SMASH,
    EventKind.HEAP_OVERFLOW: BugKind.HEAP_OVERFLOW,
    EventKind.UAF: BugKind.UAF,
    EventKind.DOUBLE_FREE: BugKind.DOUBLE_FREE,
    EventKind.DOUBLE_FREE_POSSIBLE: BugKind.DOUBLE_FREE,
    EventKind.INVALID_FREE: BugKind.INVALID_FREE,
    EventKind.UNCONSTRAINED_ACCESS: BugKind.UNCONSTRAINED_ACCESS,
}


@dataclass
class BugReport:
    kind: BugKind
    function: str
    index: int
    witness: dict[str, int] | None
    path_condition: tuple[Term, ...] = ()
    interprocedural: bool = False
    detail: str = ""
    sites: tuple = ()

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.kind.value, self.function, self.index)

    @property
    def pair(self) -> tuple[str, str]:
        return (self.kind.value, self.function)

    def sort_key(self):
        return (self.kind.severity, self.kind.value, self.function, self.index)

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "function": self.function,
            "index": self.index,
            "interprocedural": self.interprocedural,
            "witness": dict(sorted(self.witness.items())) if self.witness is not None else None,
            "path_condition": [T.to_str(c) for c in self.path_condition],
            "detail": self.detail,
            "sites": [list(s) for s in self.sites if s],
        }


def _check(ctx: ExecContext | None, constraints):
    if ctx is not None:
        return ctx.check(constraints)
    return check_sat(tuple(constraints))


def classify(event: Event, pc: tuple[Term, ...], ctx: ExecContext | None = None) -> BugReport | None:
    """Report for one event under path condition ``pc``; None for non-bugs or infeasible paths."""
    kind: BugKind | None
    extra: tuple[Term, ...] = ()
    t = event.term
    if event.kind is EventKind.SYMBOLIC_TARGET:
        if t is not None and t.has_input:
            kind = BugKind.HIJACK
            extra = (T.eq(t, T.const(CRAFTED_TARGET, t.width)),)
        else:
            kind = BugKind.CONTROL_CORRUPTION
    elif event.kind is EventKind.CONTROL_CORRUPTION:
        kind = BugKind.HIJACK if (t is not None and t.has_input) else BugKind.CONTROL_CORRUPTION
    else:
        kind = _DIRECT.get(event.kind)
    if kind is None:
        return None
    verdict = _check(ctx, pc + extra)
    if verdict.unsat and extra:
        # the attacker cannot reach the crafted value, but still steers the target
        verdict = _check(ctx, pc)
    if verdict.unsat:
        return None
    witness = dict(verdict.model) if verdict.sat else None
    return BugReport(kind, event.function, event.index, witness, pc,
                     event.interprocedural, event.detail, event.sites)


def check_state(state: PathState, events: list[Event] | None = None,
                ctx: ExecContext | None = None) -> list[BugReport]:
    """Bug reports for the events raised on ``state``, deduplicated by location."""
    out: list[BugReport] = []
    seen: set = set()
    for ev in state.events if events is None else events:
        rep = classify(ev, state.pc, ctx)
        if rep is not None and rep.key not in seen:
            seen.add(rep.key)
            out.append(rep)
    return out


def sort_reports(reports) -> list[BugReport]:
    return sorted(reports, key=BugReport.sort_key)


def report_document(bugs, metrics: dict, program: str = "", engine: str = "",
                    incomplete: bool = False, diagnostics=()) -> dict:
    return {
        "schema": SCHEMA,
        "program": program,
        "engine": engine,
        "incomplete": incomplete,
        "metrics": dict(metrics),
        "bugs": [b.to_json() for b in sort_reports(bugs)],
        "diagnostics": list(diagnostics),
    }


def dump_report(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False)
