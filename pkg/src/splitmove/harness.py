"""Reproducible worker orchestration.

Every random stream is derived from a master seed and an explicit integer
key (worker index, replication index, ...) through a counter-based seed
split, so any single worker or replication can be reproduced in isolation
and results never depend on scheduling: running workers serially or on a
thread pool yields bit-identical logs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from .kernels import KernelConfig
from .mover import EventLog, IdealDescent, McmcDescent


class WorkerError(RuntimeError):
    """A worker failed; carries the logs collected so far."""

    def __init__(self, worker_index, cause, partial_logs):
        super().__init__(f"worker {worker_index} failed: {cause!r}")
        self.worker_index = worker_index
        self.cause = cause
        self.partial_logs = partial_logs


def stream(master_seed, *key) -> np.random.Generator:
    """Derive an independent generator from (master_seed, key...)."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def make_descents(ls, n_particles: int, n_workers: int, master_seed,
                  kernel_cfg: Optional[KernelConfig] = None, hazard=None,
                  mode: str = "mcmc", base_key=()):
    """Build the per-worker descent objects with derived random streams."""
    if n_workers < 1:
        raise ValueError(f"need at least one worker, got {n_workers}")
    descents = []
    for i in range(n_workers):
        rng = stream(master_seed, *base_key, i)
        if mode == "ideal":
            if hazard is None:
                raise ValueError("ideal mode needs a hazard view")
            descents.append(IdealDescent(hazard, n_particles, rng))
        elif mode == "mcmc":
            cfg = kernel_cfg if kernel_cfg is not None else KernelConfig()
            descents.append(McmcDescent(ls, n_particles, cfg, rng))
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return descents


def run_descents(descents, stop, executor: str = "serial"):
    """Run `stop` on every descent; output order is worker order.

    executor "serial" runs in the calling thread; "thread" dispatches to a
    thread pool (results are identical either way, since each descent owns
    its stream).  The first worker failure aborts the whole run and
    surfaces the logs collected so far.
    """
    logs: List[Optional[EventLog]] = [None] * len(descents)
    if executor == "serial":
        for i, d in enumerate(descents):
            try:
                logs[i] = d.run(stop)
            except Exception as exc:
                raise WorkerError(i, exc, [lg for lg in logs if lg is not None]) from exc
        return logs
    if executor == "thread":
        with ThreadPoolExecutor(max_workers=len(descents)) as pool:
            futures = [pool.submit(d.run, stop) for d in descents]
            for i, fut in enumerate(futures):
                try:
                    logs[i] = fut.result()
                except Exception as exc:
                    raise WorkerError(i, exc, [lg for lg in logs if lg is not None]) from exc
        return logs
    raise ValueError(f"unknown executor {executor!r}")


def run_workers(ls, n_particles: int, stop, n_workers: int, master_seed,
                kernel_cfg: Optional[KernelConfig] = None, hazard=None,
                mode: str = "mcmc", base_key=(), executor: str = "serial"):
    """Launch n_workers independent descents and collect their logs."""
    descents = make_descents(ls, n_particles, n_workers, master_seed,
                             kernel_cfg=kernel_cfg, hazard=hazard, mode=mode,
                             base_key=base_key)
    return run_descents(descents, stop, executor=executor)
