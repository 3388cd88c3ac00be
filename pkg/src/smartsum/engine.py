"""Whole-program symbolic exploration with eager feasibility checks."""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

from .bugs import BugReport, check_state, report_document, sort_reports
from .cfg import build_cfg
from .ir import BRANCH_OPS, Program
from .solver import DEFAULT_BUDGET
from .state import DEFAULT_FANOUT, ExecContext, PathState, SideEffect, initial_state, step
from .terms import Term


@dataclass(frozen=True)
class ExploreConfig:
    search: str = "bfs"
    loop_limit: int = 32
    max_live: int = 10_000
    max_states: int = 1_000_000
    budget: int = DEFAULT_BUDGET
    width: int = 16
    fanout: int = DEFAULT_FANOUT
    max_call_depth: int = 64
    time_limit: float | None = None

    def __post_init__(self):
        if self.search not in ("bfs", "dfs"):
            raise ValueError(f"unknown search order {self.search!r}")
        for name in ("loop_limit", "max_live", "max_states", "budget", "fanout", "max_call_depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.width not in (8, 16, 32):
            raise ValueError("width must be 8, 16 or 32")


@dataclass
class Metrics:
    states_explored: int = 0
    paths_completed: int = 0
    paths_pruned: int = 0
    infeasible_pruned: int = 0
    loop_pruned: int = 0
    sat_queries: int = 0
    unknown_verdicts: int = 0
    wall_ms: float = 0.0
    summarizations: int = 0
    table_hits: int = 0
    table_misses: int = 0
    summary_entries: dict = field(default_factory=dict)
    unknown_entries: int = 0

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["summary_entries"] = dict(sorted(self.summary_entries.items()))
        d["wall_ms"] = round(self.wall_ms, 3)
        return d


@dataclass
class PathResult:
    end: str  # halt | return | fault
    outputs: tuple[Term, ...]
    pc: tuple[Term, ...]
    effects: tuple[SideEffect, ...]
    location: tuple[str, int]
    rv: Term | None = None


@dataclass
class Report:
    bugs: list[BugReport]
    metrics: Metrics
    paths: list[PathResult]
    incomplete: bool = False
    diagnostics: list[str] = field(default_factory=list)
    table: object = None

    @property
    def bug_pairs(self) -> set[tuple[str, str]]:
        return {b.pair for b in self.bugs}

    @property
    def bug_kinds(self) -> list[str]:
        return sorted({b.kind.value for b in self.bugs})

    def document(self, program: str = "", engine: str = "") -> dict:
        return report_document(self.bugs, self.metrics.as_dict(), program, engine,
                               self.incomplete, self.diagnostics)


class BugSink:
    """Run-wide bug collection, deduplicated by (kind, function, index)."""

    def __init__(self):
        self._bugs: dict = {}

    def add(self, reports) -> None:
        for r in reports:
            self._bugs.setdefault(r.key, r)

    def sorted(self) -> list[BugReport]:
        return sort_reports(self._bugs.values())


class Explorer:
    """Worklist exploration shared by the baseline and the summary engine."""

    def __init__(self, program: Program, config: ExploreConfig, ctx: ExecContext | None = None,
                 metrics: Metrics | None = None, sink: BugSink | None = None,
                 deadline: float | None = None):
        self.program = program
        self.config = config
        self.ctx = ctx or ExecContext(program, config.budget, config.fanout)
        self.metrics = metrics or Metrics()
        self.sink = sink or BugSink()
        self.diagnostics: list[str] = []
        self.incomplete = False
        self.deadline = deadline
        if deadline is None and config.time_limit is not None:
            self.deadline = time.monotonic() + config.time_limit
        self._loops: dict[str, tuple[set, dict]] = {}

    # -- loop bookkeeping ---------------------------------------------------
    def _loop_info(self, fn: str) -> tuple[set, dict]:
        info = self._loops.get(fn)
        if info is None:
            edges = build_cfg(self.program.functions[fn]).instr_back_edges()
            heads: dict[int, list] = {}
            for tail, head in edges:
                heads.setdefault(head, []).append((fn, tail, head))
            info = self._loops[fn] = (edges, heads)
        return info

    def _track_loops(self, s: PathState, old: tuple[str, int]) -> bool:
        """Update back-edge counters; False when the loop limit is exceeded."""
        edges, heads = self._loop_info(s.fn)
        if s.fn == old[0] and (old[1], s.idx) in edges:
            key = (s.fn, old[1], s.idx)
            n = s.loops.get(key, 0) + 1
            s.loops[key] = n
            return n <= self.config.loop_limit
        if s.idx in heads:
            # fresh entry into the loop: counters are per activation
            for key in heads[s.idx]:
                s.loops.pop(key, None)
        return True

    # -- hooks ----------------------------------------------------------------
    def advance(self, st: PathState) -> list[PathState]:
        return step(st, self.ctx).states

    def finish(self, st: PathState) -> None:
        self.completed.append(st)

    def handle_events(self, st: PathState) -> None:
        self.sink.add(check_state(st, ctx=self.ctx))

    def on_loop_pruned(self, st: PathState) -> None:
        pass

    # -- main loop --------------------------------------------------------------
    def run(self, initial: list[PathState]) -> list[PathState]:
        self.completed: list[PathState] = []
        cfg = self.config
        work = deque(initial)
        pop = work.popleft if cfg.search == "bfs" else work.pop
        while work:
            if self.metrics.states_explored >= cfg.max_states:
                self._stop(f"state cap {cfg.max_states} reached", len(work))
                break
            if self.deadline is not None and time.monotonic() > self.deadline:
                self._stop("time limit reached", len(work))
                break
            st = pop()
            st.events = []
            old = st.location
            ins = self.program.functions[st.fn].instrs[st.idx]
            succs = self.advance(st)
            self.metrics.states_explored += 1
            branched = ins.op in BRANCH_OPS and len(succs) > 1
            for s in succs:
                if branched:
                    if self.ctx.check(s.pc).unsat:
                        self.metrics.paths_pruned += 1
                        self.metrics.infeasible_pruned += 1
                        continue
                if s.events:
                    self.handle_events(s)
                if s.done == "pruned":
                    self.metrics.paths_pruned += 1
                    continue
                if s.done:
                    self.metrics.paths_completed += 1
                    self.finish(s)
                    continue
                if not self._track_loops(s, old):
                    self.metrics.paths_pruned += 1
                    self.metrics.loop_pruned += 1
                    self.on_loop_pruned(s)
                    continue
                if len(s.frames) > cfg.max_call_depth:
                    self.metrics.paths_pruned += 1
                    self.diagnostics.append(f"call depth limit at {s.fn}:{s.idx}")
                    continue
                if len(work) >= cfg.max_live:
                    self.metrics.paths_pruned += 1
                    self._stop(f"live-state cap {cfg.max_live} reached", 0)
                    continue
                work.append(s)
        return self.completed

    def _stop(self, why: str, dropped: int) -> None:
        if why not in self.diagnostics:
            self.diagnostics.append(why)
        self.incomplete = True
        self.metrics.paths_pruned += dropped


def path_result(s: PathState) -> PathResult:
    return PathResult(s.done or "", tuple(s.outputs), s.pc, tuple(s.effects), s.location,
                      s.regs.get("rv"))


def explore(program: Program, config: ExploreConfig | None = None) -> Report:
    """Baseline whole-program exploration from the entry function."""
    config = config or ExploreConfig(width=program.width)
    start = time.perf_counter()
    ex = Explorer(program, config)
    done = ex.run([initial_state(ex.ctx, program.entry)])
    m = ex.metrics
    m.sat_queries = ex.ctx.sat_queries
    m.unknown_verdicts = ex.ctx.unknown_verdicts
    m.wall_ms = (time.perf_counter() - start) * 1000
    return Report(ex.sink.sorted(), m, [path_result(s) for s in done], ex.incomplete,
                  ex.diagnostics)
