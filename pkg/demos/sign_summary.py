"""Summarize a two-way sign function, then apply the summary at concrete and symbolic call sites."""
from __future__ import annotations

from smartsum import terms as T
from smartsum.engine import ExploreConfig
from smartsum.ir import parse_program
from smartsum.programs import SIGN_FUNCTION
from smartsum.summary import run_compositional, summarize_function


def main() -> None:
    program = parse_program(SIGN_FUNCTION, 8)
    print(SIGN_FUNCTION)
    summary = summarize_function(program, "f", ExploreConfig(width=8))
    for k, e in enumerate(summary.entries):
        pre = " and ".join(T.to_str(c) for c in e.precondition) or "true"
        print(f"entry {k}: if {pre} then rv = {T.to_str(e.ret)}")

    report = run_compositional(program, ExploreConfig(width=8))
    m = report.metrics
    print(f"\nwhole program: {len(report.paths)} top-level paths, {m.paths_completed} paths counting "
          f"the summarization run, {m.summarizations} summarization(s), {m.table_hits} table hit(s)")
    for path in report.paths:
        pc = " and ".join(T.to_str(c) for c in path.pc) or "true"
        print(f"  {pc} -> outputs {[T.to_str(o) for o in path.outputs]}")


if __name__ == "__main__":
    main()
