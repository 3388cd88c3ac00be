"""Outlining nested inner loops into synthetic functions, and loop-bound scheduling."""
from __future__ import annotations

from dataclasses import dataclass, field

from .cfg import (
    build_cfg, detect_loops, exposed_registers, instr_successors, liveness, may_defined,
    must_defined,
)
from .ir import ARG_REGS, REGISTERS, TERMINATORS, Function, Instruction, Program, parse_program

MAX_PARAMS = len(ARG_REGS)


@dataclass
class OutlineResult:
    program: Program
    synthetic: list[str] = field(default_factory=list)
    live_ins: dict[str, tuple[str, ...]] = field(default_factory=dict)
    live_outs: dict[str, tuple[str, ...]] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    @property
    def changed(self) -> bool:
        return bool(self.synthetic)


class _Skip(Exception):
    pass


def _labels_by_index(fn: Function) -> dict[int, list[str]]:
    out: dict[int, list[str]] = {}
    for lbl, i in fn.labels.items():
        out.setdefault(i, []).append(lbl)
    return out


def _region(cfg, loop) -> tuple[set[int], int]:
    """Blocks to extract and the entry block: the loop plus a dedicated preheader."""
    blocks = set(loop.blocks)
    outside = [p for p in cfg.preds[loop.header] if p not in blocks]
    entry = loop.header
    if len(outside) == 1:
        pre = outside[0]
        if cfg.succs[pre] == [loop.header] and pre != 0 and all(
            q not in blocks for q in cfg.preds[pre]
        ):
            blocks.add(pre)
            entry = pre
    return blocks, entry


def _plan(fn: Function, cfg, loop, name: str, exposed: dict, must: dict, may: dict):
    blocks, entry = _region(cfg, loop)
    idx = sorted(i for b in blocks for i in cfg.blocks[b].indices())
    in_region = set(idx)
    entry_idx = cfg.blocks[entry].start
    exits = set()
    for i in idx:
        ins = fn.instrs[i]
        if ins.op in ("ret", "halt", "jmpr", "callr"):
            raise _Skip(f"{name}: loop contains {ins.op}")
        if "sp" in ins.uses() or "sp" in ins.defs():
            raise _Skip(f"{name}: loop touches sp")
        for s in instr_successors(fn, i):
            if s not in in_region:
                exits.add(s)
        if not instr_successors(fn, i) and ins.op not in TERMINATORS:
            raise _Skip(f"{name}: loop falls off the function")
    if len(exits) != 1:
        raise _Skip(f"{name}: loop has {len(exits)} exit targets")
    for b in blocks:
        if b != entry and any(p not in blocks for p in cfg.preds[b]):
            raise _Skip(f"{name}: region has a second entry")
    cont = exits.pop()
    live_in, _ = liveness(fn, call_uses=exposed, call_defs=must)
    used, defined = set(), set()
    for i in idx:
        ins = fn.instrs[i]
        used.update(exposed[ins.args[0]] - {"sp"} if ins.op == "call" else ins.uses())
        defined.update(may[ins.args[0]] if ins.op == "call" else ins.defs())
    ins_ = sorted(live_in[entry_idx] & used, key=REGISTERS.index)
    outs = sorted(live_in[cont] & defined, key=REGISTERS.index)
    return idx, entry_idx, cont, ins_, outs, used | defined, live_in[cont]


def _outline_one(program: Program, fn_name: str, loop, cfg, new_name: str):
    fn = program.functions[fn_name]
    exposed = exposed_registers(program)
    idx, entry_idx, cont, live_ins, live_outs, touched, live_cont = _plan(
        fn, cfg, loop, new_name, exposed, must_defined(program), may_defined(program))
    in_region = set(idx)
    # parameter slots: argument registers keep their own slot
    slot: dict[str, str] = {r: r for r in live_ins if r in ARG_REGS}
    free = [a for a in ARG_REGS if a not in slot]
    for r in live_ins:
        if r not in slot:
            if not free:
                raise _Skip(f"{new_name}: more than {MAX_PARAMS} live-in registers")
            slot[r] = free.pop(0)
    multi = len(live_outs) > 1
    ref_slot = scratch = None
    if multi:
        if not free:
            raise _Skip(f"{new_name}: no argument slot left for the live-out block")
        ref_slot = free.pop(0)
        spare = [r for r in REGISTERS if r not in touched and r != "sp" and r not in slot.values()
                 and r not in live_ins and r != ref_slot and r != "rv"]
        if not spare:
            raise _Skip(f"{new_name}: no spare register for the live-out block")
        scratch = spare[0]
    # registers the call sequence overwrites that the continuation still needs
    clobbered = {slot[r] for r in live_ins if slot[r] != r}
    if multi:
        clobbered |= {ref_slot, scratch}
    elif live_outs:
        clobbered.add("rv")
    saved = sorted((clobbered - set(live_outs)) & live_cont, key=REGISTERS.index)

    labels = _labels_by_index(fn)
    cont_label = (labels.get(cont) or [None])[0]
    extra_labels = {}
    if cont_label is None:
        cont_label = f"{new_name}.cont"
        extra_labels[cont] = cont_label

    # synthetic function body
    exit_label = "__exit"
    body: list[str] = []
    for r in live_ins:
        if slot[r] != r:
            body.append(f"    mov {r}, {slot[r]}")
    if multi:
        body.append(f"    mov {scratch}, {ref_slot}")
    for k, i in enumerate(idx):
        for lbl in labels.get(i, ()):
            body.append(f"{lbl}:")
        ins = fn.instrs[i]
        tgt = ins.label_target
        if tgt is not None and fn.labels[tgt] not in in_region:
            ins = Instruction(ins.op, ins.args[:-1] + (exit_label,))
        body.append(f"    {ins}")
        if ins.op not in TERMINATORS:
            nxt = i + 1
            follows = k + 1 < len(idx) and idx[k + 1] == nxt
            if nxt not in in_region:
                body.append(f"    jmp {exit_label}")
            elif not follows:
                body.append(f"    jmp {(labels.get(nxt) or [None])[0]}")
    body.append(f"{exit_label}:")
    if multi:
        for k, o in enumerate(live_outs):
            body.append(f"    store {scratch}, {k}, {o}")
    elif live_outs:
        body.append(f"    mov rv, {live_outs[0]}")
    body.append("    ret")

    # call sequence replacing the region in the parent
    stub: list[str] = []
    if saved:
        stub.append(f"    lea sp, sp, -{len(saved)}")
        for k, r in enumerate(saved):
            stub.append(f"    store sp, {k}, {r}")
    for r in live_ins:
        if slot[r] != r:
            stub.append(f"    mov {slot[r]}, {r}")
    if multi:
        stub.append(f"    lea sp, sp, -{len(live_outs)}")
        stub.append(f"    mov {ref_slot}, sp")
    stub.append(f"    call {new_name}")
    if multi:
        for k, o in enumerate(live_outs):
            stub.append(f"    load {o}, sp, {k}")
        stub.append(f"    lea sp, sp, {len(live_outs)}")
    elif live_outs and live_outs[0] != "rv":
        stub.append(f"    mov {live_outs[0]}, rv")
    if saved:
        for k, r in enumerate(saved):
            stub.append(f"    load {r}, sp, {k}")
        stub.append(f"    lea sp, sp, {len(saved)}")
    stub.append(f"    jmp {cont_label}")

    parent: list[str] = []
    # a non-region instruction falling into the entry keeps doing so into the stub
    for i, ins in enumerate(fn.instrs):
        if i == entry_idx:
            for lbl in labels.get(i, ()):
                parent.append(f"{lbl}:")
            parent.extend(stub)
        if i in in_region:
            continue
        for lbl in labels.get(i, ()):
            parent.append(f"{lbl}:")
        if i in extra_labels:
            parent.append(f"{extra_labels[i]}:")
        parent.append(f"    {ins}")
    return parent, body, live_ins, live_outs


def _render(program: Program, replaced: dict[str, list[str]]) -> str:
    out = []
    for name, fn in program.functions.items():
        out.append(f"fn {name} {{")
        if name in replaced:
            out.extend(replaced[name])
        else:
            labels = _labels_by_index(fn)
            for i, ins in enumerate(fn.instrs):
                for lbl in labels.get(i, ()):
                    out.append(f"{lbl}:")
                out.append(f"    {ins}")
        out.append("}")
    for name, lines in replaced.items():
        if name not in program.functions:
            out.append(f"fn {name} {{")
            out.extend(lines)
            out.append("}")
    return "\n".join(out) + "\n"


def _fresh_name(program: Program, parent: str, counter: dict) -> str:
    while True:
        counter[parent] = counter.get(parent, 0) + 1
        name = f"{parent}$loop{counter[parent]}"
        if name not in program.functions:
            return name


def outline_inner_loops(program: Program, fn: str, result: OutlineResult | None = None) -> OutlineResult:
    """Outline innermost loops nested at depth >= 2 in ``fn`` until none remain."""
    result = result or OutlineResult(program)
    counter: dict[str, int] = {}
    prog = result.program
    while True:
        cfg = build_cfg(prog.functions[fn])
        forest = detect_loops(cfg)
        candidates = [lp for lp in forest.loops if lp.depth >= 2 and not lp.children]
        for lp in forest.loops:
            if not lp.analyzable:
                msg = f"{fn}: irreducible loop at block {lp.header} left in place"
                if msg not in result.diagnostics:
                    result.diagnostics.append(msg)
        done = False
        for lp in sorted(candidates, key=lambda lp: cfg.blocks[lp.header].start):
            if not lp.analyzable:
                continue
            name = _fresh_name(prog, fn, counter)
            try:
                parent, body, ins_, outs = _outline_one(prog, fn, lp, cfg, name)
            except _Skip as exc:
                msg = str(exc).replace(name, f"{fn} loop at instruction {cfg.blocks[lp.header].start}")
                if msg not in result.diagnostics:
                    result.diagnostics.append(msg)
                counter[fn] -= 1
                continue
            prog = parse_program(_render(prog, {fn: parent, name: body}), prog.width)
            result.synthetic.append(name)
            result.live_ins[name] = tuple(ins_)
            result.live_outs[name] = tuple(outs)
            done = True
            break
        if not done:
            break
    result.program = prog
    return result


def outline_program(program: Program) -> OutlineResult:
    result = OutlineResult(program)
    for name in list(program.functions):
        outline_inner_loops(result.program, name, result)
    return result


# -- loop-bound schedule ---------------------------------------------------------------

@dataclass
class BoundSchedule:
    bound: int = 8
    increment: int = 4
    wall_budget_s: float = 60.0
    live_state_cap: int = 10_000
    completed: int | None = None


@dataclass(frozen=True)
class RoundMetrics:
    wall_s: float
    peak_live: int
    pruned: int


@dataclass(frozen=True)
class ScheduleDecision:
    stop: bool
    bound: int  # next bound, or the final bound when stopping
    reason: str = ""


def schedule_loop_bounds(s: BoundSchedule, last: RoundMetrics) -> ScheduleDecision:
    """Grow the loop bound additively until exploration is exhaustive or a budget trips."""
    if last.wall_s > s.wall_budget_s or last.peak_live > s.live_state_cap:
        best = s.completed if s.completed is not None else s.bound - s.increment
        return ScheduleDecision(True, best, "budget")
    s.completed = s.bound
    if last.pruned == 0:
        return ScheduleDecision(True, s.bound, "exhaustive")
    s.bound += s.increment
    return ScheduleDecision(False, s.bound, "grow")
