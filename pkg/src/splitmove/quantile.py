"""Extreme-quantile estimation from merged descent logs.

Given a target exceedance probability p, the merged levels of n_c
independent descents of N particles each enumerate, in sorted order, the
arrival times of a rate-(n_c N) Poisson process after the hazard time
change.  The quantile estimate is the midpoint of the (M-1)-th and M-th
smallest merged levels with M = ceil(-n_c N log p).

Two drivers assemble enough complete events: a two-pass scheme (a
move-budget pass, then a catch-up pass to the highest first-pass level)
that may fall short with a controlled risk and is then topped up, and a
lock-step sequential scheme that never falls short.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import stats

from .harness import make_descents
from .mover import LevelStop, MoveCountStop


class QuantileConfigError(ValueError):
    """Invalid quantile-estimation parameters."""


class ShortfallError(RuntimeError):
    """Merged log does not contain enough complete events."""


# ---------------------------------------------------------------------------
# Order-statistic estimator and confidence interval.
# ---------------------------------------------------------------------------

def estimate_q(merged, m: int) -> float:
    """Midpoint of the (m-1)-th and m-th smallest merged levels (1-based).

    `merged` may be an EventLog (its arrival levels are used) or an array
    of levels.
    """
    levels = _arrivals(merged)
    if m < 2:
        raise QuantileConfigError(f"m must be >= 2, got {m}")
    if levels.size < m:
        raise ShortfallError(f"need {m} events, have {levels.size}")
    low = np.partition(levels, (m - 2, m - 1))
    return 0.5 * (low[m - 2] + low[m - 1])


def ci_q_indices(m: int, alpha: float) -> Tuple[int, int]:
    """Order-statistic ranks (m-, m+) of the (1-alpha) interval."""
    if not 0.0 < alpha < 1.0:
        raise QuantileConfigError(f"alpha must lie in (0,1), got {alpha}")
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    m_lo = int(math.floor(m - z * math.sqrt(m)))
    m_hi = int(math.ceil(m + z * math.sqrt(m)))
    return m_lo, m_hi


def ci_q(merged, m: int, alpha: float) -> Tuple[float, float]:
    """(1-alpha) confidence interval (q_{m-}, q_{m+}) from merged levels."""
    levels = _arrivals(merged)
    m_lo, m_hi = ci_q_indices(m, alpha)
    if m_lo < 1:
        raise QuantileConfigError(f"m={m} too small for alpha={alpha}")
    if levels.size < m_hi:
        raise ShortfallError(
            f"confidence interval needs {m_hi} events, have {levels.size}; "
            "widen the run")
    part = np.partition(levels, (m_lo - 1, m_hi - 1))
    return float(part[m_lo - 1]), float(part[m_hi - 1])


def _arrivals(merged) -> np.ndarray:
    if hasattr(merged, "arrival_levels"):
        return merged.arrival_levels()
    return np.asarray(merged, dtype=float)


# ---------------------------------------------------------------------------
# First-pass move budget.
# ---------------------------------------------------------------------------

def extreme_value_location(n: int) -> float:
    """Location parameter b_n of the maximum of n standard normals."""
    s = math.sqrt(2.0 * math.log(n))
    return s - (math.log(math.log(n)) + math.log(4.0 * math.pi)) / (2.0 * s)


def choose_m0(n_particles: int, n_workers: int, p: float, alpha: float) -> int:
    """Per-worker move budget so the merged process covers the target rank
    except with probability about alpha.

    Solves the quadratic reduction of the extreme-value risk equation:
    m0 = ceil(N t + beta^2/2 - beta sqrt(beta^2 + 4 N t)/2), t = -log p,
    beta = b_{n_c} - log log(1/alpha) / sqrt(2 log n_c).
    """
    if n_workers < 2:
        raise QuantileConfigError(f"n_workers must be >= 2, got {n_workers}")
    if not 0.0 < p < 1.0:
        raise QuantileConfigError(f"p must lie in (0,1), got {p}")
    if not 0.0 < alpha < 1.0 / math.e:
        raise QuantileConfigError(
            f"alpha must lie in (0, 1/e) for the extreme-value approximation, "
            f"got {alpha}; the safe fallback budget is m0 = ceil(-N log p) = "
            f"{math.ceil(-n_particles * math.log(p))}")
    t = -math.log(p)
    beta = extreme_value_location(n_workers) \
        - math.log(math.log(1.0 / alpha)) / math.sqrt(2.0 * math.log(n_workers))
    disc = beta * beta + 4.0 * n_particles * t
    return int(math.ceil(n_particles * t + beta * beta / 2.0
                         - beta * math.sqrt(disc) / 2.0))


def expected_iters_two_pass(n_particles: int, n_workers: int, p: float) -> float:
    """Expected per-worker iterations: -N log p + sqrt(2 N log(1/p) log n_c)."""
    t = -math.log(p)
    return n_particles * t + math.sqrt(2.0 * n_particles * t * math.log(n_workers))


# ---------------------------------------------------------------------------
# Asymptotic diagnostics.
# ---------------------------------------------------------------------------

def clt_sd(p: float, f_q: float, n_total: int) -> float:
    """Asymptotic standard deviation sqrt(-p^2 log p / f(q)^2 / N)."""
    if f_q <= 0:
        raise QuantileConfigError(f"f(q) must be positive, got {f_q}")
    return math.sqrt(-p * p * math.log(p) / (f_q * f_q) / n_total)


def quantile_cov(p: float, f_q: float, n_total: int, k1: int = 0, k2: int = 0) -> float:
    """Limit covariance of neighbouring order statistics around the target.

    The limit matrix is rank one: the value -p^2 log p / f(q)^2 / N does
    not depend on the offsets (k1, k2).
    """
    del k1, k2
    if f_q <= 0:
        raise QuantileConfigError(f"f(q) must be positive, got {f_q}")
    return -p * p * math.log(p) / (f_q * f_q) / n_total


def bias_bounds(p: float, f_q: float, fp_q: float, n_total: int,
                k_offset: int = 0) -> Tuple[float, float]:
    """O(1/N) bias bracket of the (m + k_offset)-th level around the target.

    Returns (p/(N f(q))) * (B + k, B + k + 1) with
    B = (-log p / 2) (1 + f'(q) p / f(q)^2).
    """
    if f_q <= 0:
        raise QuantileConfigError(f"f(q) must be positive, got {f_q}")
    base = -math.log(p) / 2.0 * (1.0 + fp_q * p / (f_q * f_q))
    scale = p / (n_total * f_q)
    return scale * (base + k_offset), scale * (base + k_offset + 1.0)


def estimator_bias_bounds(p: float, f_q: float, fp_q: float, n_total: int) -> Tuple[float, float]:
    """Bias bracket of the midpoint estimator: offsets -1 and 0 averaged."""
    lo_a, hi_a = bias_bounds(p, f_q, fp_q, n_total, -1)
    lo_b, hi_b = bias_bounds(p, f_q, fp_q, n_total, 0)
    return 0.5 * (lo_a + lo_b), 0.5 * (hi_a + hi_b)


def gamma_q(p: float, q: float, f_q: float) -> float:
    """Relative-cost factor gamma(q) = q f(q) / (-p log p)."""
    return q * f_q / (-p * math.log(p))


@dataclass
class QuantileDiagnostics:
    """Asymptotic diagnostics of a quantile run.

    Density-dependent entries are NaN when no density information is
    available (densities are user-supplied or analytic; none is estimated
    from the run itself).
    """

    clt_sd: float
    bias_lower: float
    bias_upper: float
    gamma: float
    expected_iters: float


def diagnostics(p: float, n_particles: int, n_workers: int,
                f_q: Optional[float] = None, fp_q: Optional[float] = None,
                q: Optional[float] = None) -> QuantileDiagnostics:
    """Assemble the closed-form diagnostics for a planned quantile run."""
    n_total = n_particles * n_workers
    if f_q is not None and f_q > 0:
        sd = clt_sd(p, f_q, n_total)
        lo, hi = estimator_bias_bounds(p, f_q, fp_q if fp_q is not None else 0.0,
                                       n_total)
        gam = gamma_q(p, q, f_q) if q is not None else math.nan
    else:
        sd = lo = hi = gam = math.nan
    return QuantileDiagnostics(
        clt_sd=sd, bias_lower=lo, bias_upper=hi, gamma=gam,
        expected_iters=expected_iters_two_pass(n_particles, n_workers, p)
        if n_workers > 1 else -n_particles * math.log(p))


def t_par_quantile(p: float, delta: float, q: float, f_q: float,
                   n_workers: int, burn_in: int = 20) -> float:
    """Per-core calls for parallel quantile estimation at CV target delta."""
    lead = burn_in / n_workers * (p * math.log(p) / (delta * q * f_q)) ** 2
    extra = 1.0 / (burn_in * math.log(1.0 / p)) \
        + delta * gamma_q(p, q, f_q) * math.sqrt(2.0 * n_workers * math.log(n_workers))
    return lead * (1.0 + extra)


# ---------------------------------------------------------------------------
# Runners.
# ---------------------------------------------------------------------------

@dataclass
class QuantileEstimate:
    """Quantile estimate with order-statistic interval and run accounting.

    `events_obtained` counts the complete merged events available at the
    end of the plain algorithm (before any top-up); `shortfall` records
    whether that count missed the target rank.
    """

    q_hat: float
    m: int
    m0: Optional[int]
    alpha_risk: float
    events_obtained: int
    shortfall: bool
    ci: Tuple[float, float]
    ci_indices: Tuple[int, int]
    n_particles: int
    n_workers: int
    n_calls: int
    per_worker_calls: List[int]
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "q_hat": self.q_hat,
            "ci": [self.ci[0], self.ci[1]],
            "ci_indices": [self.ci_indices[0], self.ci_indices[1]],
            "m": self.m,
            "m0": self.m0,
            "alpha_risk": self.alpha_risk,
            "events_obtained": self.events_obtained,
            "shortfall": self.shortfall,
            "N": self.n_particles,
            "K": self.n_workers,
            "n_calls": self.n_calls,
            "per_worker_calls": list(self.per_worker_calls),
            "seed": self.seed,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _complete_events(descents) -> Tuple[np.ndarray, float]:
    """Sorted merged arrivals and the frontier below which they are complete."""
    arrivals = np.sort(np.concatenate([d.arrival_levels() for d in descents]))
    frontier = min(d.min_level for d in descents)
    return arrivals, frontier


def _finalize(descents, m, m0, alpha, events_obtained, shortfall, seed,
              topup: bool):
    arrivals, frontier = _complete_events(descents)
    complete = int(np.searchsorted(arrivals, frontier, side="right"))
    m_lo, m_hi = ci_q_indices(m, alpha)
    needed = max(m, m_hi)
    if topup:
        # Restart the workers for the missing events until the merged
        # process provably covers the needed rank.
        while complete < needed:
            deficit = needed - complete
            per_worker = math.ceil(deficit / len(descents))
            for d in descents:
                d.run_extra_moves(per_worker)
            arrivals, frontier = _complete_events(descents)
            complete = int(np.searchsorted(arrivals, frontier, side="right"))
    if complete < m:
        raise ShortfallError(
            f"only {complete} complete events for target rank {m}")
    q_hat = 0.5 * (arrivals[m - 2] + arrivals[m - 1])
    if complete >= m_hi and m_lo >= 1:
        interval = (float(arrivals[m_lo - 1]), float(arrivals[m_hi - 1]))
    else:
        interval = (math.nan, math.nan)
    per_calls = [d.calls for d in descents]
    return QuantileEstimate(
        q_hat=float(q_hat), m=m, m0=m0, alpha_risk=alpha,
        events_obtained=events_obtained, shortfall=shortfall,
        ci=interval, ci_indices=(m_lo, m_hi),
        n_particles=descents[0].n_particles, n_workers=len(descents),
        n_calls=sum(per_calls), per_worker_calls=per_calls, seed=seed)


def run_quantile_two_pass(ls, p: float, n_particles: int, n_workers: int,
                          alpha: float = 0.05, kernel_cfg=None, seed=None,
                          hazard=None, mode: str = "mcmc", base_key=(),
                          topup: bool = True, m0: Optional[int] = None) -> QuantileEstimate:
    """Two-pass quantile run: budgeted first pass, catch-up second pass.

    Pass one runs every worker for m0 counted moves; pass two restarts
    them until each population minimum reaches the highest first-pass
    frontier.  If the merged process still misses the target rank (risk
    about `alpha`), the workers are restarted for the missing events
    unless `topup` is disabled, in which case a ShortfallError is raised.
    """
    if m0 is None:
        m0 = choose_m0(n_particles, n_workers, p, alpha)
    m = math.ceil(-n_workers * n_particles * math.log(p))
    if m < 2:
        raise QuantileConfigError(f"target rank m={m} must be >= 2")
    descents = make_descents(ls, n_particles, n_workers, seed,
                             kernel_cfg=kernel_cfg, hazard=hazard, mode=mode,
                             base_key=base_key)
    for d in descents:
        d.run(MoveCountStop(m0))
    # highest per-worker frontier: the level the m0-th counted move left from
    q_max = max(d.last_departed_level for d in descents)
    for d in descents:
        d.run(LevelStop(q_max))
    merged_sorted = np.sort(np.concatenate([d.arrival_levels() for d in descents]))
    events_obtained = int(np.searchsorted(merged_sorted, q_max, side="right"))
    shortfall = events_obtained < m
    if shortfall and not topup:
        raise ShortfallError(
            f"two-pass run obtained {events_obtained} events for target {m} "
            "and top-up is disabled")
    return _finalize(descents, m, m0, alpha, events_obtained, shortfall,
                     seed, topup)


def run_quantile_sequential(ls, p: float, n_particles: int, n_workers: int,
                            alpha: float = 0.05, kernel_cfg=None, seed=None,
                            hazard=None, mode: str = "mcmc",
                            base_key=()) -> QuantileEstimate:
    """Lock-step quantile run: every worker advances one move per round.

    After round k the merged events below the lowest k-th per-worker level
    are complete; rounds continue until the target rank (and the interval
    endpoint) is covered, so this driver never falls short.
    """
    m = math.ceil(-n_workers * n_particles * math.log(p))
    if m < 2:
        raise QuantileConfigError(f"target rank m={m} must be >= 2")
    _, m_hi = ci_q_indices(m, alpha)
    needed = max(m, m_hi)
    descents = make_descents(ls, n_particles, n_workers, seed,
                             kernel_cfg=kernel_cfg, hazard=hazard, mode=mode,
                             base_key=base_key)
    # incremental merged count: arrivals sit in a heap until the frontier
    # (lowest per-worker departure level) passes them
    pending: list = []
    cursors = [0] * len(descents)

    def drain_new_events():
        for i, d in enumerate(descents):
            log = d.log
            keep = np.asarray(log._counted[cursors[i]:], dtype=bool) \
                | np.asarray(log._initial[cursors[i]:], dtype=bool)
            new_levels = np.asarray(log._levels[cursors[i]:], dtype=float)[keep]
            cursors[i] = len(log)
            for lv in new_levels:
                heapq.heappush(pending, float(lv))

    drain_new_events()
    complete = 0
    rounds = 0
    while True:
        rounds += 1
        for d in descents:
            d.run(MoveCountStop(rounds))
        drain_new_events()
        frontier = min(d.last_departed_level for d in descents)
        while pending and pending[0] <= frontier:
            heapq.heappop(pending)
            complete += 1
        if complete >= needed:
            break
    return _finalize(descents, m, None, alpha, complete, False, seed,
                     topup=False)
