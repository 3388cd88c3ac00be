"""State counts for nested counting loops: baseline versus summaries over outlined loops."""
from __future__ import annotations

import time

from smartsum.bench import run_engine
from smartsum.engine import ExploreConfig
from smartsum.generate import gen_nested_loops
from smartsum.ir import parse_program


def main() -> None:
    print(f"{'depth':>5} {'engine':>16} {'states':>8} {'paths':>6} {'status':>10} {'seconds':>8}")
    for depth in range(1, 6):
        program = parse_program(gen_nested_loops(depth, 8), 8)
        for engine in ("baseline", "summary+outline"):
            cfg = ExploreConfig(width=8, loop_limit=16, max_states=100_000)
            t0 = time.perf_counter()
            rep = run_engine(program, engine, cfg)
            status = "capped" if rep.incomplete else "complete"
            print(f"{depth:>5} {engine:>16} {rep.metrics.states_explored:>8} "
                  f"{rep.metrics.paths_completed:>6} {status:>10} {time.perf_counter() - t0:>8.2f}")


if __name__ == "__main__":
    main()
