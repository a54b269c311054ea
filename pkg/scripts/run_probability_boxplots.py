#!/usr/bin/env python3
"""Replicated probability estimation across worker/particle layouts.

Reproduces the layout study on the watermark benchmark: the same total
particle count split as "n_workers x n_particles" cells, 100 replications
each, with boxplot-ready CSV per cell.  Layouts with fewer than 10
particles per worker are included for comparison but warn about poor
conditional mixing.
"""

import argparse
import json
import sys
import warnings
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from splitmove.experiments import ExperimentConfig, replicate  # noqa: E402

LAYOUTS = [(1, 1000), (10, 100), (20, 50), (50, 20), (100, 10),
           (200, 5), (500, 2), (1000, 1)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--benchmark", default="watermark")
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=2025)
    ap.add_argument("--jobs", type=int, default=2)
    ap.add_argument("--out-dir", default="results/probability_boxplots")
    args = ap.parse_args()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = {}
    for n_workers, n_particles in LAYOUTS:
        label = f"{n_workers}x{n_particles}"
        cfg = ExperimentConfig(
            benchmark_id=args.benchmark, mode="prob", n_particles=n_particles,
            n_workers=n_workers, reps=args.reps, seed=args.seed,
            output=str(out_dir / f"{label}.csv"))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if n_particles < 10 else "default")
            summary = replicate(cfg, jobs=args.jobs)
        summaries[label] = {
            "quartiles": summary.quartiles,
            "whiskers": summary.whiskers,
            "mean_calls": sum(summary.per_rep_calls) / len(summary.per_rep_calls),
        }
        print(label, json.dumps(summaries[label]))
    (out_dir / "summary.json").write_text(json.dumps(summaries, indent=2))


if __name__ == "__main__":
    main()
