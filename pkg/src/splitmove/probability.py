"""Extreme-probability estimation from counted particle moves.

The estimator is p_hat = (1 - 1/(K*N))^M, where M is the total number of
counted moves accumulated by K independent descents of N particles each,
all run until their minimum level reaches the failure threshold.  M is
Poisson with parameter -K*N*log(p), which gives closed-form moments, an
asymptotic confidence interval, and the computing-time models used by the
planner.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from .harness import run_workers
from .mover import LevelStop


class InvalidConfigError(ValueError):
    """Estimator parameters outside their valid range."""


class PlannerError(RuntimeError):
    """Cost-model equation has no admissible solution."""


def estimate_p(m_total: int, k_workers: int, n_particles: int) -> float:
    """Unbiased splitting estimator (1 - 1/(K*N))^M.

    Computed as exp(M * log1p(-1/(K*N))) so that very large move counts do
    not underflow the plain power.
    """
    kn = k_workers * n_particles
    if kn < 2:
        raise InvalidConfigError(f"K*N must be at least 2, got {kn}")
    if m_total < 0:
        raise InvalidConfigError(f"move count must be >= 0, got {m_total}")
    return math.exp(m_total * math.log1p(-1.0 / kn))


def variance_p(p: float, n_total: int) -> float:
    """Exact estimator variance p^2 (p^(-1/N) - 1) for N total particles."""
    if not 0.0 < p < 1.0:
        raise InvalidConfigError(f"p must lie in (0,1), got {p}")
    if n_total < 1:
        raise InvalidConfigError(f"n_total must be >= 1, got {n_total}")
    return p * p * math.expm1(-math.log(p) / n_total)


def cramer_rao_bound(p: float, n_total: int) -> float:
    """Reference lower bound -p^2 log(p) / N that the estimator approaches."""
    return -p * p * math.log(p) / n_total


def ci_p(p_hat: float, n_total: int, alpha: float) -> Tuple[float, float]:
    """Asymptotic (1-alpha) confidence interval around p_hat.

    Based on log p_hat being approximately normal with variance
    -log(p)/N; the interval is p_hat * exp(-Z^2/2N -+ sqrt(Delta)) with
    Delta = (Z^2/N) (t_hat + Z^2/4N), t_hat = -log p_hat.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidConfigError(f"alpha must lie in (0,1), got {alpha}")
    if not 0.0 < p_hat < 1.0:
        raise InvalidConfigError(f"p_hat must lie in (0,1), got {p_hat}")
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    t_hat = -math.log(p_hat)
    delta = z * z / n_total * (t_hat + z * z / (4.0 * n_total))
    centre = -z * z / (2.0 * n_total)
    return (p_hat * math.exp(centre - math.sqrt(delta)),
            p_hat * math.exp(centre + math.sqrt(delta)))


@dataclass
class ProbEstimate:
    """Probability estimate with confidence interval and call accounting."""

    p_hat: float
    m_total: int
    k_workers: int
    n_particles: int
    alpha: float
    ci: Tuple[float, float]
    n_calls: int
    per_worker_calls: List[int]
    per_worker_moves: List[int]
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "p_hat": self.p_hat,
            "ci": [self.ci[0], self.ci[1]],
            "M": self.m_total,
            "K": self.k_workers,
            "N": self.n_particles,
            "n_calls": self.n_calls,
            "per_worker_calls": list(self.per_worker_calls),
            "seed": self.seed,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def run_probability(ls, n_particles: int, n_workers: int, kernel_cfg=None,
                    alpha: float = 0.05, seed=None, hazard=None,
                    mode: str = "mcmc", base_key=(), executor="serial",
                    threshold=None) -> ProbEstimate:
    """Estimate the exceedance probability of `ls.threshold`.

    Runs `n_workers` independent descents of `n_particles` each until the
    population minimum reaches the threshold, sums the counted moves and
    applies the closed-form estimator.  With mode="ideal" the descents use
    exact conditional sampling through `hazard` (oracle runs).

    A warning is emitted for very small populations, whose conditional
    sampling degrades; populations of at least 10 are recommended.
    """
    import warnings

    q = ls.threshold if threshold is None else threshold
    if q is None:
        raise InvalidConfigError("limit state has no threshold to target")
    if n_particles < 2 and n_workers * n_particles < 2:
        raise InvalidConfigError("need K*N >= 2 for the estimator")
    if n_particles < 10:
        warnings.warn(f"N={n_particles} is small; populations below 10 "
                      "mix poorly", stacklevel=2)
    stop = LevelStop(q)
    logs = run_workers(ls, n_particles, stop, n_workers, seed,
                       kernel_cfg=kernel_cfg, hazard=hazard, mode=mode,
                       base_key=base_key, executor=executor)
    m_total = sum(lg.total_moves for lg in logs)
    per_calls = [lg.n_calls for lg in logs]
    per_moves = [lg.total_moves for lg in logs]
    p_hat = estimate_p(m_total, n_workers, n_particles)
    interval = ci_p(p_hat, n_workers * n_particles, alpha) if p_hat < 1.0 else (p_hat, p_hat)
    return ProbEstimate(p_hat=p_hat, m_total=m_total, k_workers=n_workers,
                        n_particles=n_particles, alpha=alpha, ci=interval,
                        n_calls=sum(per_calls), per_worker_calls=per_calls,
                        per_worker_moves=per_moves, seed=seed)


# ---------------------------------------------------------------------------
# Computing-time models (limit-state calls per core).
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostModel:
    """Inputs of the effective-computing-time comparisons.

    delta is the target coefficient of variation of the estimator; p0 the
    per-level conditional probability of the fixed-level splitting scheme
    used as the baseline.
    """

    p: float
    delta: float
    n_cores: int = 1
    burn_in: int = 20
    p0: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise InvalidConfigError(f"p must lie in (0,1), got {self.p}")
        if self.delta <= 0:
            raise InvalidConfigError(f"delta must be positive, got {self.delta}")
        if self.n_cores < 1 or self.burn_in < 1:
            raise InvalidConfigError("n_cores and burn_in must be >= 1")
        if not 0.0 < self.p0 < 1.0:
            raise InvalidConfigError(f"p0 must lie in (0,1), got {self.p0}")


def t_mc(cm: CostModel) -> float:
    """Per-core calls for naive Monte-Carlo at the target CV."""
    return math.ceil(1.0 / (cm.n_cores * cm.delta ** 2 * cm.p))


def delta_sq_ms(p: float, p0: float, n_particles: float) -> float:
    """Squared CV of fixed-level splitting: (log p/log p0)(1-p0)/(N p0)."""
    return math.log(p) / math.log(p0) * (1.0 - p0) / (n_particles * p0)


def _n_for_cv(cm: CostModel, p0: float) -> float:
    # Population size needed by fixed-level splitting to reach the CV target.
    return math.log(cm.p) / math.log(p0) * (1.0 - p0) / (cm.delta ** 2 * p0)


def t_ms(cm: CostModel, p0: Optional[float] = None) -> float:
    """Per-core calls for fixed-level splitting at per-level probability p0.

    N initial samples plus N(1-p0) regenerated chains (each burn_in calls)
    per level, spread over the cores; an iteration can never cost less
    than one sequential chain, so the per-core load floors at 1.
    """
    p0 = cm.p0 if p0 is None else p0
    n = _n_for_cv(cm, p0)
    # continuous level count: the integer floor only adds sawtooth noise
    # around the smooth cost the planner compares against
    levels = math.log(cm.p) / math.log(p0)
    return n / cm.n_cores + levels * cm.burn_in * max(n * (1.0 - p0) / cm.n_cores, 1.0)


def optimal_p0(cm: CostModel) -> float:
    """Per-level probability equalizing the two splitting cost regimes.

    Solves (log p / log p0) (1-p0)^2 / (delta^2 p0) = n_cores, i.e.
    N(1-p0) = n_cores at the CV-matched population size, by bisection.
    """
    def f(p0):
        return _n_for_cv(cm, p0) * (1.0 - p0) - cm.n_cores

    lo, hi = 1e-12, 1.0 - 1e-12
    flo, fhi = f(lo), f(hi)
    if not (flo > 0 > fhi or flo < 0 < fhi):
        raise PlannerError(
            f"no p0 in (0,1) solves N(1-p0)={cm.n_cores} for p={cm.p}, "
            f"delta={cm.delta}; f(0+)={flo:.3g}, f(1-)={fhi:.3g}")
    return float(brentq(f, lo, hi, xtol=1e-10))


def t_par_expected(cm: CostModel) -> float:
    """Expected per-core calls of the fully parallel moving-particles run.

    Leading term T (log p)^2 / (n_c delta^2), inflated by the expected
    excess of the slowest worker (extreme-value term in sqrt(2 log n_c))
    and by the initial-sample term 1/(T log 1/p).
    """
    lp2 = math.log(cm.p) ** 2
    lead = cm.burn_in * lp2 / (cm.n_cores * cm.delta ** 2)
    evt = math.sqrt(cm.n_cores * cm.delta ** 2 / lp2) * math.sqrt(2.0 * math.log(cm.n_cores)) \
        if cm.n_cores > 1 else 0.0
    return lead * (1.0 + evt + 1.0 / (cm.burn_in * math.log(1.0 / cm.p)))


def t_par_over_t_mc(p: float, burn_in: int = 20) -> float:
    """Cost ratio of moving particles to naive Monte-Carlo, T p (log p)^2.

    Uses the sequentially parallelized computing time (no straggler term),
    under which the CV and core counts cancel; below 1 the splitting run
    is cheaper.
    """
    if not 0.0 < p < 1.0:
        raise InvalidConfigError(f"p must lie in (0,1), got {p}")
    return burn_in * p * math.log(p) ** 2
