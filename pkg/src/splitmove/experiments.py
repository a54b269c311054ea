"""Replicated experiments with per-replication derived seeds.

A replication re-runs a full estimation with the stream derived from
(master seed, replication index), so any cell of a study is reproducible
in isolation and process-level parallelism cannot change the results.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import List, Optional

from .kernels import KernelConfig
from .limit_states import get_benchmark
from .probability import run_probability
from .quantile import run_quantile_sequential, run_quantile_two_pass
from .stats_checks import ReplicationSummary, boxplot_summary

_MODES = ("prob", "quantile2pass", "quantileseq", "doe", "plan")


@dataclass
class ExperimentConfig:
    """One replicated-experiment cell.

    `p` is required by the quantile modes (the target exceedance
    probability); `ideal` switches to exact-sampling descents for
    benchmarks that carry an analytic hazard.
    """

    benchmark_id: str
    mode: str = "prob"
    n_particles: int = 100
    n_workers: int = 10
    burn_in: int = 20
    sigma: float = 0.3
    alpha: float = 0.05
    reps: int = 100
    seed: int = 0
    p: Optional[float] = None
    ideal: bool = False
    kernel_kind: str = "direct_gaussian"
    output: Optional[str] = None

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        for name in ("n_particles", "n_workers", "burn_in", "reps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.mode.startswith("quantile") and self.p is None:
            raise ValueError("quantile modes need the target probability p")

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(sigma=self.sigma, burn_in=self.burn_in,
                            kind=self.kernel_kind)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        flat = dict(data)
        # accept dotted kernel keys as used by config files
        for src, dst in (("kernel.kind", "kernel_kind"),
                         ("kernel.sigma", "sigma"),
                         ("kernel.burn_in", "burn_in")):
            if src in flat:
                flat[dst] = flat.pop(src)
        unknown = set(flat) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**flat)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def run_one_rep(config: ExperimentConfig, rep: int):
    """Run a single replication with the (seed, rep)-derived streams."""
    bench = get_benchmark(config.benchmark_id)
    mode = "ideal" if config.ideal else "mcmc"
    if config.ideal and bench.hazard is None:
        raise ValueError(f"benchmark {config.benchmark_id} has no analytic hazard")
    common = dict(seed=config.seed, base_key=(rep,), hazard=bench.hazard,
                  mode=mode, kernel_cfg=config.kernel_config())
    if config.mode == "prob":
        return run_probability(bench.ls, config.n_particles, config.n_workers,
                               alpha=config.alpha, **common)
    if config.mode == "quantile2pass":
        return run_quantile_two_pass(bench.ls, config.p, config.n_particles,
                                     config.n_workers, alpha=config.alpha,
                                     **common)
    if config.mode == "quantileseq":
        return run_quantile_sequential(bench.ls, config.p, config.n_particles,
                                       config.n_workers, alpha=config.alpha,
                                       **common)
    raise ValueError(f"mode {config.mode!r} is not replicable here")


def doe_run_calls(benchmark_id: str, n_fail: int, seed: int) -> int:
    """True-call count of one design build (top-level, so pools can map it)."""
    from .doe import build_doe

    bench = get_benchmark(benchmark_id)
    result = build_doe(bench.ls, n_fail, seed=seed)
    if result.capped_chains:
        raise RuntimeError(
            f"{benchmark_id}: chains {result.capped_chains} hit the move cap")
    return result.n_calls


def _rep_row(config: ExperimentConfig, rep: int) -> dict:
    est = run_one_rep(config, rep)
    data = est.to_dict()
    row = {"rep": rep, "seed": config.seed}
    if config.mode == "prob":
        row.update(estimate=data["p_hat"], ci_lo=data["ci"][0],
                   ci_hi=data["ci"][1], moves=data["M"],
                   n_calls=data["n_calls"],
                   max_worker_calls=max(data["per_worker_calls"]))
    else:
        row.update(estimate=data["q_hat"], ci_lo=data["ci"][0],
                   ci_hi=data["ci"][1], events=data["events_obtained"],
                   shortfall=int(data["shortfall"]), n_calls=data["n_calls"],
                   max_worker_calls=max(data["per_worker_calls"]))
    return row


def replicate(config: ExperimentConfig, jobs: int = 1) -> ReplicationSummary:
    """Run `config.reps` replications; optionally across processes.

    Emits one CSV row per replication to `config.output` when set and
    returns the boxplot summary of the estimates.  Results are identical
    for any `jobs` value.
    """
    reps = range(config.reps)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_rep_row, [config] * config.reps, reps,
                                 chunksize=max(1, config.reps // (4 * jobs))))
    else:
        rows = [_rep_row(config, r) for r in reps]
    if config.output:
        write_rows_csv(config.output, rows)
    return boxplot_summary([row["estimate"] for row in rows],
                           per_rep_calls=[row["n_calls"] for row in rows])


def write_rows_csv(path_or_buffer, rows: List[dict]):
    own = isinstance(path_or_buffer, (str, bytes))
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if own:
            fh.close()


def read_rows_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]
