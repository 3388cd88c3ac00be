"""Control-flow graphs, dominators, natural loops, call graphs and liveness."""
from __future__ import annotations

from dataclasses import dataclass, field

from .ir import ARG_REGS, BRANCH_OPS, REGISTERS, Function, Program

ALL_REGS = frozenset(REGISTERS)


@dataclass(frozen=True)
class Block:
    id: int
    start: int
    end: int  # exclusive

    def indices(self) -> range:
        return range(self.start, self.end)


@dataclass
class CFG:
    function: Function
    blocks: list[Block]
    succs: dict[int, list[int]]
    preds: dict[int, list[int]]
    idom: dict[int, int | None]
    back_edges: list[tuple[int, int]]  # (tail, head) with head dominating tail
    retreating: list[tuple[int, int]]  # DFS retreating edges that are not back edges
    block_of: list[int] = field(repr=False, default_factory=list)

    @property
    def entry(self) -> int:
        return 0

    def dominates(self, a: int, b: int) -> bool:
        node: int | None = b
        while node is not None:
            if node == a:
                return True
            node = self.idom.get(node)
        return False

    def reachable(self) -> set[int]:
        seen, stack = {0}, [0]
        while stack:
            for s in self.succs[stack.pop()]:
                if s not in seen:
                    seen.add(s)
                    stack.append(s)
        return seen

    def instr_back_edges(self) -> set[tuple[int, int]]:
        """Back and retreating edges as (tail instruction index, head instruction index)."""
        return {
            (self.blocks[t].end - 1, self.blocks[h].start)
            for t, h in self.back_edges + self.retreating
        }


def _leaders(fn: Function) -> list[int]:
    leaders = {0}
    for i, ins in enumerate(fn.instrs):
        tgt = ins.label_target
        if tgt is not None:
            leaders.add(fn.labels[tgt])
        if ins.op in BRANCH_OPS or ins.op in ("jmp", "jmpr", "ret", "halt"):
            if i + 1 < len(fn.instrs):
                leaders.add(i + 1)
    return sorted(leaders)


def instr_successors(fn: Function, i: int) -> list[int]:
    ins = fn.instrs[i]
    if ins.op in ("ret", "halt", "jmpr"):
        return []
    if ins.op == "jmp":
        return [fn.labels[ins.args[0]]]
    out = [i + 1] if i + 1 < len(fn.instrs) else []
    if ins.op in BRANCH_OPS:
        tgt = fn.labels[ins.args[2]]
        if tgt not in out:
            out.append(tgt)
    return out


def build_cfg(fn: Function) -> CFG:
    leaders = _leaders(fn)
    blocks = []
    block_of = [0] * len(fn.instrs)
    for k, start in enumerate(leaders):
        end = leaders[k + 1] if k + 1 < len(leaders) else len(fn.instrs)
        blocks.append(Block(k, start, end))
        for i in range(start, end):
            block_of[i] = k
    succs: dict[int, list[int]] = {}
    preds: dict[int, list[int]] = {b.id: [] for b in blocks}
    for b in blocks:
        out = []
        for s in instr_successors(fn, b.end - 1):
            sb = block_of[s]
            if sb not in out:
                out.append(sb)
        succs[b.id] = out
        for s in out:
            preds[s].append(b.id)
    idom = _dominators(blocks, succs, preds)
    back, retreating = [], []
    for tail, head in _dfs_retreating(succs):
        if _dom(idom, head, tail):
            back.append((tail, head))
        else:
            retreating.append((tail, head))
    return CFG(fn, blocks, succs, preds, idom, back, retreating, block_of)


def _dom(idom, a, b) -> bool:
    node = b
    while node is not None:
        if node == a:
            return True
        node = idom.get(node)
    return False


def _reverse_postorder(succs: dict[int, list[int]]) -> list[int]:
    order, seen = [], {0}
    stack = [(0, iter(succs[0]))]
    while stack:
        node, it = stack[-1]
        for s in it:
            if s not in seen:
                seen.add(s)
                stack.append((s, iter(succs[s])))
                break
        else:
            stack.pop()
            order.append(node)
    return order[::-1]


def _dominators(blocks, succs, preds) -> dict[int, int | None]:
    # Cooper, Harvey & Kennedy iterative scheme over reverse postorder
    rpo = _reverse_postorder(succs)
    rank = {b: i for i, b in enumerate(rpo)}
    idom: dict[int, int | None] = {0: 0}

    def intersect(a, b):
        while a != b:
            while rank[a] > rank[b]:
                a = idom[a]
            while rank[b] > rank[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for b in rpo[1:]:
            new = None
            for p in preds[b]:
                if p in idom:
                    new = p if new is None else intersect(p, new)
            if idom.get(b) != new:
                idom[b] = new
                changed = True
    idom[0] = None
    return idom


def _dfs_retreating(succs) -> list[tuple[int, int]]:
    out = []
    on_stack, seen = {0}, {0}
    stack = [(0, iter(succs[0]))]
    while stack:
        node, it = stack[-1]
        for s in it:
            if s in on_stack:
                out.append((node, s))
            elif s not in seen:
                seen.add(s)
                on_stack.add(s)
                stack.append((s, iter(succs[s])))
                break
        else:
            stack.pop()
            on_stack.discard(node)
    return out


@dataclass
class Loop:
    header: int
    blocks: frozenset[int]
    back_edges: list[tuple[int, int]]
    parent: int | None = None  # index into LoopForest.loops
    children: list[int] = field(default_factory=list)
    depth: int = 1
    analyzable: bool = True


@dataclass
class LoopForest:
    loops: list[Loop]

    @property
    def roots(self) -> list[int]:
        return [i for i, lp in enumerate(self.loops) if lp.parent is None]

    def depth(self) -> int:
        return max((lp.depth for lp in self.loops), default=0)

    @property
    def unanalyzable(self) -> list[Loop]:
        return [lp for lp in self.loops if not lp.analyzable]


def _natural_body(cfg: CFG, header: int, tails: list[int]) -> set[int]:
    body = {header}
    stack = [t for t in tails if t != header]
    body.update(stack)
    while stack:
        for p in cfg.preds[stack.pop()]:
            if p not in body:
                body.add(p)
                stack.append(p)
    return body


def _scc_containing(cfg: CFG, a: int, b: int) -> set[int]:
    reach = cfg.reachable()

    def closure(start, edges):
        seen, stack = {start}, [start]
        while stack:
            for s in edges[stack.pop()]:
                if s not in seen and s in reach:
                    seen.add(s)
                    stack.append(s)
        return seen

    return closure(b, cfg.succs) & closure(b, cfg.preds) | {a, b}


def detect_loops(cfg: CFG) -> LoopForest:
    """Natural loops merged by header; irreducible regions become opaque loops."""
    by_header: dict[int, list[tuple[int, int]]] = {}
    for tail, head in cfg.back_edges:
        by_header.setdefault(head, []).append((tail, head))
    loops = [
        Loop(h, frozenset(_natural_body(cfg, h, [t for t, _ in edges])), edges)
        for h, edges in sorted(by_header.items())
    ]
    for tail, head in cfg.retreating:
        region = frozenset(_scc_containing(cfg, tail, head))
        if any(lp.blocks == region and not lp.analyzable for lp in loops):
            continue
        loops.append(Loop(head, region, [(tail, head)], analyzable=False))
    # nesting by containment: parent is the smallest strictly larger superset
    for i, lp in enumerate(loops):
        best = None
        for j, other in enumerate(loops):
            if i != j and lp.blocks < other.blocks:
                if best is None or len(other.blocks) < len(loops[best].blocks):
                    best = j
        lp.parent = best
    for i, lp in enumerate(loops):
        if lp.parent is not None:
            loops[lp.parent].children.append(i)
    for lp in loops:
        d, p = 1, lp.parent
        while p is not None:
            d += 1
            p = loops[p].parent
        lp.depth = d
    return LoopForest(loops)


@dataclass
class CallGraph:
    callees: dict[str, set[str]]
    order: list[str]  # callees before callers
    recursive: set[str]
    sccs: list[list[str]]


def build_call_graph(program: Program) -> CallGraph:
    callees = {
        name: {ins.args[0] for ins in fn.instrs if ins.op == "call"}
        for name, fn in program.functions.items()
    }
    # Tarjan; SCCs come out in reverse topological order (callees first)
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    stack: list[str] = []
    on_stack: set[str] = set()
    sccs: list[list[str]] = []
    counter = [0]

    def visit(v: str) -> None:
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        for w in sorted(callees[v]):
            if w not in index:
                visit(w)
                low[v] = min(low[v], low[w])
            elif w in on_stack:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = []
            while True:
                w = stack.pop()
                on_stack.discard(w)
                comp.append(w)
                if w == v:
                    break
            sccs.append(sorted(comp))

    roots = [program.entry] + sorted(n for n in callees if n != program.entry)
    for r in roots:
        if r not in index:
            visit(r)
    reach = {program.entry}
    todo = [program.entry]
    while todo:
        for c in callees[todo.pop()]:
            if c not in reach:
                reach.add(c)
                todo.append(c)
    order = [n for comp in sccs for n in comp if n in reach]
    recursive = {
        n for comp in sccs for n in comp if len(comp) > 1 or n in callees[n]
    }
    return CallGraph(callees, order, recursive, sccs)


def _call_use_set(ins, call_uses) -> frozenset:
    if call_uses is None:
        return ALL_REGS
    if isinstance(call_uses, dict):
        return frozenset(call_uses.get(ins.args[0], ALL_REGS))
    return frozenset(call_uses)


def liveness(fn: Function, call_uses=None, ret_uses=ALL_REGS,
             call_defs: dict | None = None) -> tuple[list[frozenset], list[frozenset]]:
    """Per-instruction live-in/live-out register sets.

    Registers are global, so by default ``call`` and ``ret`` are treated as
    reading every register. ``call_uses`` narrows calls, either to one set for
    all calls or to a per-callee mapping (see :func:`exposed_registers`).
    ``callr``/``jmpr`` always read everything. ``call_defs`` maps callees to
    registers they write on every returning path (see :func:`must_defined`).
    """
    n = len(fn.instrs)
    uses, defs = [], []
    for ins in fn.instrs:
        if ins.op == "call":
            u = _call_use_set(ins, call_uses)
        elif ins.op == "ret":
            u = frozenset(ret_uses)
        elif ins.op in ("callr", "jmpr"):
            u = ALL_REGS
        else:
            u = frozenset(ins.uses())
        uses.append(u)
        if ins.op == "call" and call_defs is not None:
            defs.append(frozenset(call_defs.get(ins.args[0], ())))
        else:
            defs.append(frozenset(ins.defs()))
    succ = [instr_successors(fn, i) for i in range(n)]
    live_in = [frozenset()] * n
    live_out = [frozenset()] * n
    changed = True
    while changed:
        changed = False
        for i in range(n - 1, -1, -1):
            out = frozenset().union(*(live_in[s] for s in succ[i])) if succ[i] else frozenset()
            inn = uses[i] | (out - defs[i])
            if inn != live_in[i] or out != live_out[i]:
                live_in[i], live_out[i] = inn, out
                changed = True
    return live_in, live_out


def must_defined(program: Program) -> dict[str, frozenset]:
    """Registers each function writes on every path that reaches ``ret``."""
    result = {name: ALL_REGS for name in program.functions}
    changed = True
    while changed:
        changed = False
        for name, fn in program.functions.items():
            n = len(fn.instrs)
            state: list[frozenset | None] = [None] * n
            state[0] = frozenset()
            work = [0]
            at_ret = None
            while work:
                i = work.pop()
                ins = fn.instrs[i]
                out = state[i] | (result[ins.args[0]] if ins.op == "call" else frozenset(ins.defs()))
                if ins.op == "ret":
                    at_ret = state[i] if at_ret is None else at_ret & state[i]
                for s in instr_successors(fn, i):
                    new = out if state[s] is None else state[s] & out
                    if new != state[s]:
                        state[s] = new
                        work.append(s)
            new = (at_ret if at_ret is not None else ALL_REGS) - {"sp"}
            if new != result[name]:
                result[name] = new
                changed = True
    return result


def may_defined(program: Program) -> dict[str, frozenset]:
    """Registers each function (or anything it calls) may write."""
    result = {name: frozenset() for name in program.functions}
    changed = True
    while changed:
        changed = False
        for name, fn in program.functions.items():
            new = set()
            for ins in fn.instrs:
                new.update(result[ins.args[0]] if ins.op == "call" else ins.defs())
            new = frozenset(new)
            if new != result[name]:
                result[name] = new
                changed = True
    return result


def exposed_registers(program: Program) -> dict[str, frozenset]:
    """Registers each function may read before writing them, through its callees."""
    exposed = {name: frozenset() for name in program.functions}
    defined = must_defined(program)
    changed = True
    while changed:
        changed = False
        for name, fn in program.functions.items():
            live_in, _ = liveness(fn, call_uses=exposed, ret_uses=frozenset(), call_defs=defined)
            new = live_in[0] | {"sp"} if fn.instrs else frozenset()
            if new != exposed[name]:
                exposed[name] = new
                changed = True
    return exposed


__all__ = [
    "ARG_REGS",
    "Block",
    "CFG",
    "CallGraph",
    "Loop",
    "LoopForest",
    "build_call_graph",
    "build_cfg",
    "detect_loops",
    "exposed_registers",
    "may_defined",
    "must_defined",
    "instr_successors",
    "liveness",
]
