"""Compositional exploration with per-function summaries.

A summary maps preconditions over a function's inputs (entry registers,
global cells and memory reachable from pointer-valued inputs) to the return
value, final register values and the ordered side-effect log of each
behaviour class. Callers apply every feasible entry instead of re-executing
the callee.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

from . import terms as T
from .bugs import BugKind, BugReport, sort_reports
from .engine import BugSink, Explorer, ExploreConfig, Metrics, Report, path_result
from .ir import REGISTERS, Program, unparse
from .params import infer_param_info
from .solver import project_inputs
from .state import (
    RETURN_TOKEN, Event, EventKind, ExecContext, Op, PathState, SideEffect, initial_state,
    peek_mem, push_frame, replay_read, step, sym_free, sym_malloc, write_mem,
)
from .terms import Term

CACHE_SCHEMA = "smartsum.summaries/1"


@dataclass(frozen=True)
class SummaryEntry:
    precondition: tuple[Term, ...]
    ret: Term
    effects: tuple[SideEffect, ...] = ()
    carried: tuple[tuple[str, str], ...] = ()  # (name, kind), sorted
    registers: tuple[tuple[str, Term], ...] = ()
    end: str = "return"  # return | halt | fault | pruned
    unknown: bool = False


@dataclass
class Summary:
    function: str
    params: tuple[str, ...]
    kinds: tuple[str, ...]
    registers: tuple[tuple[str, str], ...]  # entry register -> input symbol
    globals: tuple[tuple[int, str], ...] = ()
    memory: tuple[tuple[Term, str], ...] = ()  # address over inputs -> input symbol
    entries: list[SummaryEntry] = field(default_factory=list)
    partial: bool = False
    states_explored: int = 0
    paths: int = 0

    @property
    def inputs(self) -> frozenset:
        names = {n for _, n in self.registers}
        names.update(n for _, n in self.globals)
        names.update(n for _, n in self.memory)
        return frozenset(names)


@dataclass
class ActualBinding:
    """Caller-side values for every input a summary declares."""

    mapping: dict[str, Term]
    args: tuple[Term, ...]
    warnings: list[str] = field(default_factory=list)


class SummaryTable:
    def __init__(self):
        self.summaries: dict[str, Summary] = {}
        self.hits = 0
        self.misses = 0

    def __contains__(self, name: str) -> bool:
        return name in self.summaries

    def __getitem__(self, name: str) -> Summary:
        return self.summaries[name]

    def __len__(self) -> int:
        return len(self.summaries)

    def insert(self, s: Summary) -> None:
        if s.function in self.summaries:
            raise ValueError(f"summary for {s.function} already present")
        self.summaries[s.function] = s

    def entry_counts(self) -> dict[str, int]:
        return {n: len(s.entries) for n, s in sorted(self.summaries.items())}


# -- application ---------------------------------------------------------------

def get_preconditions(st: PathState, summary: Summary, ctx: ExecContext) -> list[tuple[PathState, ActualBinding]]:
    """Bind a summary's inputs at a call site; memory reads through symbolic pointers may fork."""
    base = {name: st.regs[r] for r, name in summary.registers}
    args = tuple(st.regs[r] for r in summary.params)
    warnings = []
    for r, kind in zip(summary.params, summary.kinds):
        v = st.regs[r]
        if kind != "value" and v.is_const and v.value in st.heap and st.heap[v.value].status == "freed":
            warnings.append(f"UAF candidate: {r} points at freed chunk {v.value:#x}")
    pending = [(st, base)]
    for addr, name in summary.globals:
        nxt = []
        for s, m in pending:
            for s2, v in peek_mem(s, ctx.const(addr), ctx):
                nxt.append((s2, {**m, name: v}))
        pending = nxt
    for key, name in summary.memory:
        nxt = []
        for s, m in pending:
            if not key.syms <= m.keys():
                nxt.append((s, m))
                continue
            addr = T.substitute(key, m)
            for s2, v in peek_mem(s, addr, ctx):
                nxt.append((s2, {**m, name: v}))
        pending = nxt
    return [(s, ActualBinding(m, args, list(warnings))) for s, m in pending]


def _replay(st: PathState, entry: SummaryEntry, mapping: dict, ctx: ExecContext,
            call_site: tuple[str, int]) -> list[tuple[PathState, dict]]:
    states = [(st, mapping)]
    for eff in entry.effects:
        nxt = []
        for s, m in states:
            if s.done:
                nxt.append((s, m))
                continue
            n_events = len(s.events)
            s.fn, s.idx = eff.origin
            sub = (lambda t, m=m: T.substitute(t, m) if t is not None else None)
            op = eff.op
            produced = [(s, m)]
            if op is Op.MALLOC:
                b = sym_malloc(s, sub(eff.value) if eff.value is not None else ctx.const(eff.size or 0), ctx)
                if b is not None:
                    m = {**m, eff.addr.name: b}
                    produced = [(s, m)]
            elif op is Op.FREE:
                sym_free(s, sub(eff.addr), ctx)
            elif op is Op.MEM_WRITE or op is Op.GLOBAL_WRITE:
                produced = [(s2, m) for s2 in write_mem(s, sub(eff.addr), sub(eff.value), ctx)]
            elif op is Op.MEM_READ:
                replay_read(s, sub(eff.addr), ctx)
            elif op is Op.INPUT:
                s.n_inputs += 1
                if s.summary_mode:
                    s.log(Op.INPUT, value=sub(eff.value))
            elif op is Op.OUTPUT:
                v = sub(eff.value)
                s.outputs.append(v)
                if s.summary_mode:
                    s.log(Op.OUTPUT, value=v)
            elif op is Op.BUG:
                s.events.append(Event(EventKind(eff.kind), eff.origin[0], eff.origin[1],
                                      sub(eff.value), eff.detail, eff.sites, True))
            for s2, m2 in produced:
                for ev in s2.events[n_events:]:
                    ev.interprocedural = True
                s2.fn, s2.idx = call_site
                nxt.append((s2, m2))
        states = nxt
    return states


def apply_summary(st: PathState, summary: Summary, binding: ActualBinding,
                  ctx: ExecContext) -> list[PathState]:
    """One successor per feasible entry; an empty result marks a dead call."""
    call_site = st.location
    caller_sp = st.regs["sp"]
    out: list[PathState] = []
    for entry in summary.entries:
        s = st.fork()
        mapping = dict(binding.mapping)
        n_in = s.n_inputs
        input_names = [e.value.name for e in entry.effects if e.op is Op.INPUT]
        malloc_names = {e.addr.name for e in entry.effects if e.op is Op.MALLOC}
        for k, name in enumerate(input_names):
            mapping[name] = T.sym(f"{s.scope}in{n_in + k}", ctx.width, T.INPUT)
        for name, kind in entry.carried:
            if name not in mapping:
                mapping[name] = s.fresh(name, ctx.width, kind)
        alpha = [T.simplify(T.substitute(c, mapping)) for c in entry.precondition]
        if any(c.is_const and not c.value for c in alpha):
            continue
        verdict = ctx.check(s.pc + tuple(alpha))
        if verdict.unsat:
            continue
        for c in alpha:
            s.add_constraint(c)
        for s2, m in _replay(s, entry, mapping, ctx, call_site):
            if malloc_names & set().union(*(c.syms for c in entry.precondition)):
                bound = [T.simplify(T.substitute(c, m)) for c in entry.precondition]
                for c in bound:
                    s2.add_constraint(c)
                if ctx.check(s2.pc).unsat:
                    continue
            if not s2.done:
                for r, t in entry.registers:
                    s2.regs[r] = T.substitute(t, m)
                    s2.written.add(r)
                s2.regs["rv"] = T.substitute(entry.ret, m)
                s2.written.add("rv")
                s2.regs["sp"] = caller_sp
                if entry.end == "return":
                    s2.idx = call_site[1] + 1
                else:
                    s2.done = entry.end
            out.append(s2)
    return out


# -- engine ----------------------------------------------------------------------

class _CompositionalExplorer(Explorer):
    def __init__(self, engine: "CompositionalEngine", summary_mode: bool):
        super().__init__(engine.program, engine.config, engine.ctx, engine.metrics, engine.sink,
                         engine.deadline)
        self.engine = engine
        self.summary_mode = summary_mode
        self.pruned: list[PathState] = []

    def advance(self, st: PathState) -> list[PathState]:
        ins = self.program.functions[st.fn].instrs[st.idx]
        if ins.op != "call":
            return step(st, self.ctx).states
        return self.engine.call(st, ins.args[0])

    def handle_events(self, st: PathState) -> None:
        if not self.summary_mode:
            super().handle_events(st)
            return
        for ev in st.events:
            st.effects.append(SideEffect(Op.BUG, value=ev.term, origin=(ev.function, ev.index),
                                         kind=ev.kind.value, sites=ev.sites, detail=ev.detail))

    def on_loop_pruned(self, st: PathState) -> None:
        if self.summary_mode and st.effects:
            st.done = "pruned"
            self.pruned.append(st)


class CompositionalEngine:
    def __init__(self, program: Program, config: ExploreConfig | None = None,
                 table: SummaryTable | None = None):
        self.program = program
        self.config = config or ExploreConfig(width=program.width)
        self.ctx = ExecContext(program, self.config.budget, self.config.fanout)
        self.metrics = Metrics()
        self.sink = BugSink()
        self.table = table if table is not None else SummaryTable()
        self.stack: list[str] = []
        self.diagnostics: list[str] = []
        self.incomplete = False
        self.deadline = None
        if self.config.time_limit is not None:
            self.deadline = time.monotonic() + self.config.time_limit

    def _explorer(self, summary_mode: bool) -> _CompositionalExplorer:
        return _CompositionalExplorer(self, summary_mode)

    def _absorb(self, ex: Explorer) -> None:
        for d in ex.diagnostics:
            if d not in self.diagnostics:
                self.diagnostics.append(d)
        self.incomplete |= ex.incomplete

    def call(self, st: PathState, name: str) -> list[PathState]:
        summary = self.lookup(name)
        if summary is None:
            # recursive cycle: the call returns an unconstrained value
            st.regs["rv"] = st.fresh(f"{name}.rv", self.ctx.width, T.FRESH)
            st.written.add("rv")
            st.idx += 1
            return [st]
        out = []
        for s, binding in get_preconditions(st, summary, self.ctx):
            for w in binding.warnings:
                if w not in self.diagnostics:
                    self.diagnostics.append(w)
            succ = apply_summary(s, summary, binding, self.ctx)
            if not succ:
                self.metrics.paths_pruned += 1
                msg = f"dead call to {name} at {s.fn}:{s.idx}"
                if msg not in self.diagnostics:
                    self.diagnostics.append(msg)
            out.extend(succ)
        return out

    def lookup(self, name: str) -> Summary | None:
        if name in self.table:
            self.table.hits += 1
            self.metrics.table_hits += 1
            return self.table[name]
        if name in self.stack:
            return None
        self.table.misses += 1
        self.metrics.table_misses += 1
        s = self.summarize(name)
        self.table.insert(s)
        self.table.hits += 1
        self.metrics.table_hits += 1
        return s

    def _summary_state(self, name: str) -> tuple[PathState, tuple[str, ...], tuple[str, ...]]:
        info = infer_param_info(self.program, name)
        w = self.ctx.width
        scope = f"{name}::"
        regs = {}
        for r in REGISTERS:
            if r == "sp":
                continue
            stem = r if r in info.registers else f"{r}@init"
            regs[r] = T.sym(f"{scope}{stem}", w, T.INPUT)
        regs["sp"] = T.const(self.ctx.layout.stack_top, w)
        st = PathState(name, regs, self.ctx.layout.heap_lo, scope=scope, summary_mode=True)
        st.bases = frozenset(t.name for t in regs.values() if t.is_sym)
        push_frame(st, RETURN_TOKEN, self.ctx)
        st.written = set()
        return st, info.registers, tuple(k.value for k in info.kinds)

    def summarize(self, name: str) -> Summary:
        self.stack.append(name)
        try:
            st, params, kinds = self._summary_state(name)
            reg_inputs = tuple((r, st.regs[r].name) for r in REGISTERS if r != "sp")
            before = self.metrics.states_explored
            ex = self._explorer(summary_mode=True)
            done = ex.run([st])
            partial = ex.incomplete
            self._absorb(ex)
        finally:
            self.stack.pop()
        self.metrics.summarizations += 1
        finished = done + ex.pruned
        globals_: dict[int, str] = {}
        memory: dict[Term, str] = {}
        for s in finished:
            globals_.update(s.global_inputs)
            for k, v in s.mem_inputs.items():
                memory.setdefault(k, v)
        inputs = {n for _, n in reg_inputs} | set(globals_.values()) | set(memory.values())
        entries: list[SummaryEntry] = []
        seen = set()
        for s in finished:
            e = self._entry(s, inputs)
            key = (e.precondition, e.ret, e.effects, e.registers, e.end)
            if key in seen:
                continue
            seen.add(key)
            entries.append(e)
        if partial:
            havoc = T.sym(f"{name}::havoc", self.ctx.width, T.FRESH)
            entries.append(SummaryEntry((), havoc, (), ((havoc.name, T.FRESH),)))
        summary = Summary(name, params, kinds, reg_inputs, tuple(sorted(globals_.items())),
                          tuple(memory.items()), entries, partial,
                          self.metrics.states_explored - before, len(finished))
        self.metrics.summary_entries[name] = len(entries)
        self.metrics.unknown_entries += sum(e.unknown for e in entries)
        return summary

    def _entry(self, s: PathState, inputs: set) -> SummaryEntry:
        regs = tuple((r, s.regs[r]) for r in REGISTERS if r in s.written and r not in ("sp", "rv"))
        ret = s.regs["rv"]
        terms_ = [ret] + [t for _, t in regs]
        for e in s.effects:
            terms_.extend(t for t in (e.addr, e.value) if t is not None)
        kinds = {}
        for t in terms_:
            for node in T.symbol_nodes(t):
                if node.name not in inputs:
                    kinds[node.name] = node.kind
        alpha = project_inputs(s.pc, inputs, kinds.keys()).terms
        verdict = self.ctx.check(alpha)
        end = s.done if s.done in ("halt", "fault", "pruned") else "return"
        return SummaryEntry(alpha, ret, tuple(s.effects), tuple(sorted(kinds.items())), regs, end,
                            verdict.unknown)

    def run(self) -> Report:
        start = time.perf_counter()
        ex = self._explorer(summary_mode=False)
        done = ex.run([initial_state(self.ctx, self.program.entry)])
        self._absorb(ex)
        m = self.metrics
        m.sat_queries = self.ctx.sat_queries
        m.unknown_verdicts = self.ctx.unknown_verdicts
        report = Report([], m, [path_result(s) for s in done], self.incomplete,
                        self.diagnostics, self.table)
        self.sink.add(combine_side_effects(report, self.table, self.ctx))
        report.bugs = self.sink.sorted()
        m.sat_queries = self.ctx.sat_queries
        m.unknown_verdicts = self.ctx.unknown_verdicts
        m.wall_ms = (time.perf_counter() - start) * 1000
        return report


def summarize_function(program: Program, name: str, config: ExploreConfig | None = None) -> Summary:
    """Summary of ``name``; callees are summarized on demand."""
    return CompositionalEngine(program, config).lookup(name)


def run_compositional(program: Program, config: ExploreConfig | None = None,
                      cache_dir: str | os.PathLike | None = None) -> Report:
    config = config or ExploreConfig(width=program.width)
    table = None
    path = None
    if cache_dir is not None:
        path = cache_path(program, config, cache_dir)
        table = load_table(path)
    engine = CompositionalEngine(program, config, table)
    report = engine.run()
    if path is not None and not report.incomplete:
        save_table(engine.table, path)
    return report


# -- heap hazards across the whole log ---------------------------------------------

def combine_side_effects(report: Report, table: SummaryTable | None = None,
                         ctx: ExecContext | None = None) -> list[BugReport]:
    """DoubleFree/UAF findings from pairs of logged effects on each completed path."""
    from .solver import check_sat

    def check(cs):
        return ctx.check(cs) if ctx is not None else check_sat(tuple(cs))

    found: dict = {}
    for path in report.paths:
        effs = path.effects
        frees = [(i, e) for i, e in enumerate(effs) if e.op is Op.FREE]
        for i, f in frees:
            a = f.addr
            for j in range(i + 1, len(effs)):
                e = effs[j]
                if e.op is Op.FREE:
                    kind, cond = BugKind.DOUBLE_FREE, T.eq(a, e.addr)
                elif e.op in (Op.MEM_WRITE, Op.MEM_READ):
                    if f.size:
                        cond = T.ult(T.sub(e.addr, a), T.const(f.size, a.width))
                    else:
                        cond = T.eq(a, e.addr)
                    kind = BugKind.UAF
                else:
                    continue
                key = (kind.value, e.origin[0], e.origin[1])
                if key in found or (cond.is_const and not cond.value):
                    continue
                v = check(path.pc + (cond,))
                if v.unsat:
                    continue
                found[key] = BugReport(kind, e.origin[0], e.origin[1],
                                       dict(v.model) if v.sat else None, path.pc + (cond,), True,
                                       f"{e.op.value} after free at {f.origin[0]}:{f.origin[1]}",
                                       (f.origin, e.origin))
    return sort_reports(found.values())


# -- persistence ---------------------------------------------------------------------

def cache_key(program: Program, config: ExploreConfig) -> str:
    h = hashlib.sha256()
    h.update(unparse(program).encode())
    h.update(f"|w={program.width}|loop={config.loop_limit}|budget={config.budget}"
             f"|fanout={config.fanout}".encode())
    return h.hexdigest()


def cache_path(program: Program, config: ExploreConfig, cache_dir) -> str:
    return os.path.join(os.fspath(cache_dir), cache_key(program, config) + ".json")


def _effect_json(e: SideEffect, enc: T.TermEncoder) -> dict:
    d = {"op": e.op.value, "origin": list(e.origin)}
    if e.addr is not None:
        d["addr"] = enc.add(e.addr)
    if e.value is not None:
        d["value"] = enc.add(e.value)
    if e.size is not None:
        d["size"] = e.size
    if e.kind:
        d["kind"] = e.kind
    if e.sites:
        d["sites"] = [list(s) for s in e.sites]
    if e.detail:
        d["detail"] = e.detail
    return d


def table_to_json(table: SummaryTable, key: str = "") -> dict:
    enc = T.TermEncoder()
    out = {}
    for name, s in sorted(table.summaries.items()):
        out[name] = {
            "params": list(s.params),
            "kinds": list(s.kinds),
            "registers": [list(r) for r in s.registers],
            "globals": [list(g) for g in s.globals],
            "memory": [[enc.add(k), n] for k, n in s.memory],
            "partial": s.partial,
            "states_explored": s.states_explored,
            "paths": s.paths,
            "entries": [
                {
                    "precondition": [enc.add(c) for c in e.precondition],
                    "ret": enc.add(e.ret),
                    "effects": [_effect_json(x, enc) for x in e.effects],
                    "carried": [list(c) for c in e.carried],
                    "registers": [[r, enc.add(t)] for r, t in e.registers],
                    "end": e.end,
                    "unknown": e.unknown,
                }
                for e in s.entries
            ],
        }
    return {"schema": CACHE_SCHEMA, "key": key, "nodes": enc.nodes, "summaries": out}


def table_from_json(doc: dict) -> SummaryTable:
    if doc.get("schema") != CACHE_SCHEMA:
        raise ValueError("not a summary cache document")
    nodes = T.decode_nodes(doc["nodes"])
    table = SummaryTable()

    def effect(d):
        return SideEffect(
            Op(d["op"]),
            nodes[d["addr"]] if "addr" in d else None,
            nodes[d["value"]] if "value" in d else None,
            d.get("size"),
            tuple(d["origin"]),
            kind=d.get("kind", ""),
            sites=tuple(tuple(x) for x in d.get("sites", ())),
            detail=d.get("detail", ""),
        )

    for name, s in doc["summaries"].items():
        entries = [
            SummaryEntry(
                tuple(nodes[i] for i in e["precondition"]),
                nodes[e["ret"]],
                tuple(effect(x) for x in e["effects"]),
                tuple(tuple(c) for c in e["carried"]),
                tuple((r, nodes[i]) for r, i in e["registers"]),
                e["end"],
                e["unknown"],
            )
            for e in s["entries"]
        ]
        table.insert(Summary(
            name, tuple(s["params"]), tuple(s["kinds"]),
            tuple(tuple(r) for r in s["registers"]),
            tuple((int(a), n) for a, n in s["globals"]),
            tuple((nodes[k], n) for k, n in s["memory"]),
            entries, s["partial"], s["states_explored"], s["paths"],
        ))
    return table


def save_table(table: SummaryTable, path) -> None:
    key = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(table_to_json(table, key), fh, sort_keys=True)
    os.replace(tmp, path)


def load_table(path) -> SummaryTable | None:
    """The cached table, or None when absent, stale or unreadable."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, ValueError):
        return None
    key = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    if doc.get("key") != key:
        return None
    try:
        return table_from_json(doc)
    except (KeyError, ValueError, TypeError, IndexError):
        return None
