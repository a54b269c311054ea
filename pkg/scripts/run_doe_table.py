#!/usr/bin/env python3
"""Design-of-experiments cost study over the benchmark suite.

For each benchmark: build designs with 10 failure points over several
seeds and compare the realized true-call counts against the
(d + 1) + 10 log(1/p) law evaluated at the benchmark's reference
probability.
"""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from statistics import median

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from splitmove.doe import expected_doe_calls  # noqa: E402
from splitmove.experiments import doe_run_calls  # noqa: E402
from splitmove.limit_states import get_benchmark  # noqa: E402

ROWS = ["waarts", "parabolic", "concave2", "concave20", "concave50",
        "oscillator15", "oscillator21.5", "oscillator27.5", "watermark"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-fail", type=int, default=10)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--jobs", type=int, default=2)
    ap.add_argument("--out", default="results/doe_table.json")
    args = ap.parse_args()

    table = {}
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        for name in ROWS:
            bench = get_benchmark(name)
            calls = list(pool.map(doe_run_calls, [name] * args.seeds,
                                  [args.n_fail] * args.seeds, range(args.seeds)))
            expected = expected_doe_calls(bench.ls.dim, args.n_fail,
                                          bench.reference_p)
            table[name] = {"dim": bench.ls.dim, "reference_p": bench.reference_p,
                           "expected_calls": round(expected, 2),
                           "median_calls": median(calls), "calls": calls}
            print(f"{name:15s} dim={bench.ls.dim:3d} expected={expected:7.1f} "
                  f"median={median(calls):6.1f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(table, indent=2))


if __name__ == "__main__":
    main()
