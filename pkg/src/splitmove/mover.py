"""Particle descents toward high levels and their event logs.

A descent maintains N particles; at each iteration the lowest particle is
resampled conditionally above its own level.  Every draw (the N initial
ones and each move's resulting level) is logged as an event; after the
integrated-hazard time change the logged levels of a descent are the
arrival times of a rate-N Poisson process, which is what the probability
and quantile estimators consume.

Two engines share the same log format: `McmcDescent` performs conditional
resampling with a reversible kernel (seeded from another particle, with
son/replica avoidance), while `IdealDescent` samples the conditional laws
exactly through the inverse integrated hazard and serves as the oracle in
distribution-level tests.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .kernels import KernelConfig, select_seed, transition


class UnsupportedStateError(ValueError):
    """The hazard view lacks the inverse needed for exact sampling."""


class ContractViolation(ValueError):
    """A caller broke a documented precondition."""


# ---------------------------------------------------------------------------
# Stop conditions.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelStop:
    """Stop once the population minimum level reaches `q` (inclusive)."""

    q: float

    def done(self, descent) -> bool:
        return descent.min_level >= self.q


@dataclass(frozen=True)
class MoveCountStop:
    """Stop once `count` moves have been counted."""

    count: int

    def done(self, descent) -> bool:
        return descent.total_moves >= self.count


# ---------------------------------------------------------------------------
# Event log.
# ---------------------------------------------------------------------------

class EventLog:
    """Ordered record of every draw performed by a descent.

    Events carry the resulting level, the particle mark, whether at least
    one kernel transition was accepted, whether the move was counted
    (uncounted moves arise when a replica is produced from a fallback
    seed), and the cumulative number of limit-state calls.  Initial draws
    are events too; they are not moves.

    The "arrival" levels (initial draws plus counted moves) are the
    empirical marked-Poisson-process times used by the estimators.
    """

    def __init__(self, n_particles: int = 0, note: str = ""):
        self.n_particles = n_particles
        self.total_moves = 0
        self.note = note
        self._levels: List[float] = []
        self._marks: List[int] = []
        self._accepted: List[bool] = []
        self._counted: List[bool] = []
        self._initial: List[bool] = []
        self._calls: List[int] = []

    def __len__(self):
        return len(self._levels)

    def append(self, level, mark, accepted, counted, initial, calls_so_far):
        self._levels.append(float(level))
        self._marks.append(int(mark))
        self._accepted.append(bool(accepted))
        self._counted.append(bool(counted))
        self._initial.append(bool(initial))
        self._calls.append(int(calls_so_far))

    def extend(self, levels, marks, accepted, counted, initial, calls):
        self._levels.extend(levels)
        self._marks.extend(marks)
        self._accepted.extend(accepted)
        self._counted.extend(counted)
        self._initial.extend(initial)
        self._calls.extend(calls)

    @property
    def levels(self) -> np.ndarray:
        return np.asarray(self._levels, dtype=float)

    @property
    def marks(self) -> np.ndarray:
        return np.asarray(self._marks, dtype=np.int64)

    @property
    def counted(self) -> np.ndarray:
        return np.asarray(self._counted, dtype=bool)

    @property
    def initial(self) -> np.ndarray:
        return np.asarray(self._initial, dtype=bool)

    @property
    def accepted(self) -> np.ndarray:
        return np.asarray(self._accepted, dtype=bool)

    @property
    def n_calls(self) -> int:
        return self._calls[-1] if self._calls else 0

    def arrival_levels(self) -> np.ndarray:
        """Levels of initial draws and counted moves, in event order."""
        keep = self.counted | self.initial
        return self.levels[keep]

    def to_csv(self, path_or_buffer):
        """Write `m,level,mark,accepted,calls_so_far` rows with a metadata header."""
        own = isinstance(path_or_buffer, (str, bytes))
        fh = open(path_or_buffer, "w") if own else path_or_buffer
        try:
            fh.write(f"# n_particles={self.n_particles} total_moves={self.total_moves}\n")
            if self.note:
                fh.write(f"# {self.note}\n")
            fh.write("m,level,mark,accepted,calls_so_far\n")
            for m, (lv, mk, acc, calls) in enumerate(
                    zip(self._levels, self._marks, self._accepted, self._calls)):
                fh.write(f"{m},{lv!r},{mk},{int(acc)},{calls}\n")
        finally:
            if own:
                fh.close()

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def merge_logs(logs) -> EventLog:
    """Merge descent logs into one log sorted by level (ascending).

    Particle marks are offset per source log so they stay distinct;
    `n_particles` and `total_moves` add up.
    """
    logs = list(logs)
    if not logs:
        raise ValueError("nothing to merge")
    merged = EventLog(n_particles=sum(lg.n_particles for lg in logs),
                      note="merged; sorted by level")
    merged.total_moves = sum(lg.total_moves for lg in logs)
    levels = np.concatenate([lg.levels for lg in logs]) if logs else np.empty(0)
    offsets = np.cumsum([0] + [lg.n_particles for lg in logs[:-1]])
    marks = np.concatenate([lg.marks + off for lg, off in zip(logs, offsets)])
    accepted = np.concatenate([lg.accepted for lg in logs])
    counted = np.concatenate([lg.counted for lg in logs])
    initial = np.concatenate([lg.initial for lg in logs])
    calls = np.concatenate([np.asarray(lg._calls, dtype=np.int64) for lg in logs])
    order = np.argsort(levels, kind="stable")
    merged.extend(levels[order].tolist(), marks[order].tolist(),
                  accepted[order].tolist(), counted[order].tolist(),
                  initial[order].tolist(), calls[order].tolist())
    return merged


# ---------------------------------------------------------------------------
# Particles (MCMC engine state).
# ---------------------------------------------------------------------------

@dataclass
class Lineage:
    parent_id: Optional[int] = None       # seed of the last move
    is_replica_of: Optional[int] = None   # seed id when every transition was rejected


@dataclass
class Particle:
    id: int
    position: np.ndarray
    level: float
    moves: int = 0
    lineage: Lineage = field(default_factory=Lineage)
    # Particle whose position this one's was generated from, with replica
    # chains resolved to the position's true generator (None for initial
    # draws).  Seed selection excludes candidates whose origin is the mover.
    origin_id: Optional[int] = None


class McmcDescent:
    """Move-the-minimum descent with kernel-based conditional resampling."""

    def __init__(self, ls, n_particles: int, kernel_cfg: KernelConfig, rng,
                 k_batch: int = 1):
        if n_particles < 1:
            raise ContractViolation(f"need at least one particle, got {n_particles}")
        if not 1 <= k_batch <= max(1, n_particles - 1):
            raise ContractViolation(
                f"k_batch must lie in [1, N-1], got k={k_batch} with N={n_particles}")
        self.ls = ls
        self.kernel_cfg = kernel_cfg
        self.rng = rng
        self.k_batch = k_batch
        self.n_particles = n_particles
        self.calls = 0
        # level from which the latest counted move departed; the successive
        # departure levels enumerate the sorted merged arrivals
        self.last_departed_level = -math.inf
        note = ""
        if k_batch > 1:
            note = (f"k_batch={k_batch}; batched move events are logged in "
                    "ascending order of their resulting level")
        self.log = EventLog(n_particles=n_particles, note=note)
        self.particles: List[Particle] = []
        self.levels = np.empty(n_particles)
        if ls.sample_input is None:
            raise ValueError("limit state has no input sampler")
        for i in range(n_particles):
            x = np.asarray(ls.sample_input(rng), dtype=float)
            lv = ls.evaluate(x)
            self.calls += 1
            self.particles.append(Particle(id=i, position=x, level=lv))
            self.levels[i] = lv
            self.log.append(lv, i, True, False, True, self.calls)

    @property
    def min_level(self) -> float:
        return float(self.levels.min())

    @property
    def total_moves(self) -> int:
        return self.log.total_moves

    def _argmin_uniform(self) -> int:
        # One rng draw is consumed whether or not there is a tie, so replay
        # of a stored stream stays aligned.
        u = self.rng.random()
        lv = self.levels
        m = lv.min()
        ties = np.flatnonzero(lv == m)
        if ties.size == 1:
            return int(ties[0])
        return int(ties[int(u * ties.size)])

    def _move_one(self, i: int, exclude=()):
        """Resample particle i above its own level; log and count the move."""
        mover = self.particles[i]
        q = mover.level
        candidates = [p for p in self.particles
                      if p.id != i and p.id not in exclude and p.level > q]
        if candidates:
            seed, fallback = select_seed(candidates, i, self.rng)
        else:
            seed, fallback = mover, True   # restart from the mover itself
        res = transition(seed.position, seed.level, q, self.kernel_cfg,
                         self.ls, self.rng)
        self.calls += res.calls
        counted = (not fallback) or res.any_accepted
        mover.position = np.asarray(res.x, dtype=float)
        mover.level = res.level
        mover.lineage = Lineage(parent_id=seed.id,
                                is_replica_of=None if res.any_accepted else seed.id)
        mover.origin_id = seed.id if res.any_accepted else seed.origin_id
        if counted:
            mover.moves += 1
            self.log.total_moves += 1
            self.last_departed_level = q
        self.levels[i] = res.level
        return res.level, i, res.any_accepted, counted

    def step(self, level_cap=None):
        """One iteration: move the k lowest particles (k = 1 by default).

        With a level cap (a level-stop in progress), particles already at
        or above the cap are finished and are not dragged into a batch.
        """
        if self.k_batch == 1:
            i = self._argmin_uniform()
            level, mark, accepted, counted = self._move_one(i)
            self.log.append(level, mark, accepted, counted, False, self.calls)
            return
        # Concurrent move of the k lowest particles, each conditioned on its
        # own pre-batch level; seeds are taken outside the batch.
        order = np.argsort(self.levels, kind="stable")
        batch = [int(j) for j in order[:self.k_batch]]
        if level_cap is not None:
            batch = [j for j in batch if self.levels[j] < level_cap] or batch[:1]
        results = [self._move_one(i, exclude=set(batch)) for i in batch]
        results.sort(key=lambda r: r[0])   # log order: resulting level
        for level, mark, accepted, counted in results:
            self.log.append(level, mark, accepted, counted, False, self.calls)

    def run(self, stop) -> EventLog:
        cap = stop.q if isinstance(stop, LevelStop) else None
        while not stop.done(self):
            self.step(level_cap=cap)
        return self.log

    def run_extra_moves(self, extra: int) -> EventLog:
        return self.run(MoveCountStop(self.total_moves + extra))

    def arrival_levels(self) -> np.ndarray:
        return self.log.arrival_levels()


class IdealDescent:
    """Exact-sampling descent driven by the inverse integrated hazard.

    Particles live on the integrated-hazard time axis, where conditional
    resampling above the current level is exactly "add a standard
    exponential".  Generation is vectorized: each particle owns a buffered
    stream of future arrival times, and a batch of moves reveals, in
    departure order, the stream element following each departed arrival.
    """

    def __init__(self, hazard, n_particles: int, rng):
        if hazard.inverse_lambda is None:
            raise UnsupportedStateError("exact sampling needs inverse_lambda")
        if n_particles < 1:
            raise ContractViolation(f"need at least one particle, got {n_particles}")
        self.hazard = hazard
        self.rng = rng
        self.n_particles = n_particles
        self.draws = n_particles
        self.last_departed_level = -math.inf
        self.log = EventLog(n_particles=n_particles)
        first = rng.exponential(size=n_particles)
        self._streams = [np.array([t]) for t in first]
        self._head_times = first.copy()
        levels = np.asarray(hazard.inverse_lambda(first), dtype=float)
        self._head_levels = levels.copy()
        self.log.extend(levels.tolist(), list(range(n_particles)),
                        [True] * n_particles, [False] * n_particles,
                        [True] * n_particles, list(range(1, n_particles + 1)))

    @property
    def calls(self) -> int:
        # Each conditional draw is the ideal-mode analogue of one call.
        return self.draws

    @property
    def min_level(self) -> float:
        return float(self._head_levels.min())

    @property
    def total_moves(self) -> int:
        return self.log.total_moves

    def _extend(self, i: int, upto: float, block: int = 16):
        s = self._streams[i]
        while s[-1] <= upto:
            gaps = self.rng.exponential(size=block)
            s = np.concatenate([s, s[-1] + np.cumsum(gaps)])
        self._streams[i] = s

    def _emit(self, dep_counts):
        """Log, in departure order, the reveals implied by per-stream counts."""
        dep_vals, rev_vals, marks, movers = [], [], [], []
        for i, c in enumerate(dep_counts):
            if c == 0:
                continue
            s = self._streams[i]
            dep_vals.append(s[:c])
            rev_vals.append(s[1:c + 1])
            marks.append(np.full(c, i, dtype=np.int64))
            movers.append(i)
            self._streams[i] = s[c:]
            self._head_times[i] = s[c]
        if not dep_vals:
            return
        dep = np.concatenate(dep_vals)
        rev = np.concatenate(rev_vals)
        mk = np.concatenate(marks)
        order = np.argsort(dep, kind="stable")
        rev = rev[order]
        mk = mk[order]
        n = rev.size
        self.last_departed_level = float(
            np.asarray(self.hazard.inverse_lambda(dep.max()), dtype=float))
        levels = np.asarray(self.hazard.inverse_lambda(rev), dtype=float)
        new_heads = np.asarray(
            self.hazard.inverse_lambda(self._head_times[movers]), dtype=float)
        self._head_levels[movers] = new_heads
        self.draws += n
        self.log.total_moves += int(n)
        calls = np.arange(self.draws - n + 1, self.draws + 1)
        self.log.extend(levels.tolist(), mk.tolist(), [True] * n, [True] * n,
                        [False] * n, calls.tolist())

    def run_to_level(self, q: float) -> EventLog:
        tstar = float(np.asarray(self.hazard.lam(q), dtype=float))
        if math.isinf(tstar) and tstar > 0:
            raise ValueError(f"level {q} has zero exceedance probability")
        dep_counts = []
        for i in range(self.n_particles):
            self._extend(i, tstar)
            # depart strictly-below arrivals; a head at exactly tstar stays
            dep_counts.append(int(np.searchsorted(self._streams[i], tstar, side="left")))
        self._emit(dep_counts)
        return self.log

    def run_n_moves(self, extra: int) -> EventLog:
        if extra <= 0:
            return self.log
        if extra == 1:
            # Fast path: depart the single lowest head.
            i = int(np.argmin(self._head_times))
            self._extend(i, self._head_times[i])
            self._emit([1 if j == i else 0 for j in range(self.n_particles)])
            return self.log
        while True:
            pool = np.concatenate(self._streams)
            if pool.size <= extra:
                for i in range(self.n_particles):
                    self._extend(i, self._streams[i][-1])
                continue
            cut = float(np.partition(pool, extra - 1)[extra - 1])
            short = [i for i in range(self.n_particles) if self._streams[i][-1] <= cut]
            if not short:
                break
            for i in short:
                self._extend(i, cut)
        dep_counts = [int(np.searchsorted(s, cut, side="right")) for s in self._streams]
        # Ties at the floating cut are measure-zero; trim any excess greedily.
        excess = sum(dep_counts) - extra
        for i in range(self.n_particles):
            while excess > 0 and dep_counts[i] > 0 and \
                    self._streams[i][dep_counts[i] - 1] == cut:
                dep_counts[i] -= 1
                excess -= 1
        self._emit(dep_counts)
        return self.log

    def run_kbatch_to_level(self, k: int, q: float) -> EventLog:
        """Batched variant: advance the k lowest distinct heads per round.

        Each batch moves k distinct particles below the target level by one
        arrival; batch events are logged in ascending order of their
        resulting level.  The total-move law to a level stop is the same as
        for single moves, since every particle advances until it crosses
        the target regardless of scheduling.
        """
        if not 1 <= k <= max(1, self.n_particles - 1):
            raise ContractViolation(
                f"k must lie in [1, N-1], got k={k} with N={self.n_particles}")
        self.log.note = (f"k_batch={k}; batched move events are logged in "
                         "ascending order of their resulting level")
        tstar = float(np.asarray(self.hazard.lam(q), dtype=float))
        while self.min_level < q:
            below = np.flatnonzero(self._head_times < tstar)
            if below.size == 0:
                break
            batch = below[np.argsort(self._head_times[below], kind="stable")][:k]
            departed_max = float(np.max(self._head_levels[batch]))
            rev_times = np.empty(batch.size)
            for j, i in enumerate(batch):
                self._extend(int(i), self._head_times[i])
                s = self._streams[i]
                rev_times[j] = s[1]
                self._streams[i] = s[1:]
                self._head_times[i] = s[1]
            order = np.argsort(rev_times, kind="stable")
            rev = rev_times[order]
            mk = batch[order]
            levels = np.asarray(self.hazard.inverse_lambda(rev), dtype=float)
            self._head_levels[mk] = levels
            n = rev.size
            self.last_departed_level = max(self.last_departed_level, departed_max)
            self.draws += n
            self.log.total_moves += n
            calls = np.arange(self.draws - n + 1, self.draws + 1)
            self.log.extend(levels.tolist(), mk.tolist(), [True] * n, [True] * n,
                            [False] * n, calls.tolist())
        return self.log

    def run(self, stop) -> EventLog:
        if isinstance(stop, LevelStop):
            return self.run_to_level(stop.q)
        if isinstance(stop, MoveCountStop):
            return self.run_n_moves(stop.count - self.total_moves)
        # Generic predicate: fall back to single moves.
        while not stop.done(self):
            self.run_n_moves(1)
        return self.log

    def run_extra_moves(self, extra: int) -> EventLog:
        return self.run_n_moves(extra)

    def arrival_levels(self) -> np.ndarray:
        return self.log.arrival_levels()


# ---------------------------------------------------------------------------
# One-shot descent helpers.
# ---------------------------------------------------------------------------

def descend_single(ls, stop, kernel_cfg: KernelConfig, rng) -> EventLog:
    """Move one particle until `stop`; equivalent to a population of one."""
    return descend_population(ls, 1, stop, kernel_cfg, rng)


def descend_population(ls, n_particles: int, stop, kernel_cfg: KernelConfig,
                       rng) -> EventLog:
    """Draw N particles then repeatedly move the minimum until `stop`."""
    descent = McmcDescent(ls, n_particles, kernel_cfg, rng)
    return descent.run(stop)


def descend_population_kbatch(ls, n_particles: int, k: int, stop,
                              kernel_cfg: KernelConfig, rng) -> EventLog:
    """Population descent moving the k lowest particles per iteration."""
    if n_particles > 1 and not 1 <= k <= n_particles - 1:
        raise ContractViolation(f"k must lie in [1, N-1], got k={k}, N={n_particles}")
    descent = McmcDescent(ls, n_particles, kernel_cfg, rng, k_batch=k)
    return descent.run(stop)


def ideal_descend(hazard, n_particles: int, stop, rng) -> EventLog:
    """Population descent with exact conditional sampling (oracle mode)."""
    descent = IdealDescent(hazard, n_particles, rng)
    return descent.run(stop)
