"""Find heap misuse across a call boundary from logged side effects, and replay each witness."""
from __future__ import annotations

from smartsum.bench import load_corpus, max_inputs
from smartsum.engine import ExploreConfig
from smartsum.interp import interpret
from smartsum.summary import combine_side_effects, run_compositional


def main() -> None:
    [prog] = [c for c in load_corpus() if c.name == "SimpleUAF"]
    print(prog.text)
    program = prog.parse()
    report = run_compositional(program, ExploreConfig(width=8))
    for bug in combine_side_effects(report):
        inputs = [bug.witness.get(f"in{k}", 0) for k in range(max_inputs(program))]
        trace = interpret(program, inputs)
        print(f"{bug.kind.value} at {bug.function}:{bug.index} ({bug.detail})")
        print(f"  witness inputs {inputs}; concrete heap log {trace.heap_events}")


if __name__ == "__main__":
    main()
