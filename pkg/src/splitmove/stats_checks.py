"""Goodness-of-fit utilities and replication summaries.

The chi-square Poisson test pools low-expectation bins from both tails
inward until every bin carries at least `min_expected` expected counts;
the rate is taken as known, so no degree of freedom is spent on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats


class InsufficientDataError(ValueError):
    """Not enough data to form a valid test after pooling."""


def chi2_poisson_test(counts: Sequence[int], lam: float,
                      min_expected: float = 5.0) -> float:
    """Chi-square goodness-of-fit p-value of integer draws against Poisson(lam).

    Bins are the integer values; adjacent cells are pooled from both tails
    toward the mode until each pooled bin has expected count at least
    `min_expected` (the right tail bin absorbs the full residual mass).
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0 or lam <= 0:
        raise InsufficientDataError("need draws and a positive rate")
    n = counts.size
    # support wide enough to carry the hypothesized mass, not just the data
    kmax = max(int(counts.max()), int(math.ceil(lam + 6.0 * math.sqrt(lam) + 10.0)))
    ks = np.arange(kmax + 1)
    pmf = stats.poisson.pmf(ks, lam)
    upper_tail = stats.poisson.sf(kmax, lam)
    observed = np.bincount(counts, minlength=kmax + 1).astype(float)
    expected = n * pmf
    # close the support with the residual upper tail
    cells_obs = list(observed) + [0.0]
    cells_exp = list(expected) + [n * upper_tail]

    pooled_obs: List[float] = []
    pooled_exp: List[float] = []
    acc_o = acc_e = 0.0
    for o, e in zip(cells_obs, cells_exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            pooled_obs.append(acc_o)
            pooled_exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if pooled_exp:
            pooled_obs[-1] += acc_o
            pooled_exp[-1] += acc_e
        else:
            raise InsufficientDataError("all mass pooled into a single bin")
    if len(pooled_exp) < 2:
        raise InsufficientDataError(
            f"only {len(pooled_exp)} bin(s) after pooling; test not informative")
    obs = np.asarray(pooled_obs)
    exp = np.asarray(pooled_exp)
    # expected counts renormalized to the observed total guard against
    # floating residue; they already sum to n by construction
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(exp) - 1
    return float(stats.chi2.sf(stat, dof))


def ks_test(samples, cdf) -> float:
    """One-sample Kolmogorov-Smirnov p-value against a given cdf (asymptotic)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise InsufficientDataError("need samples")
    return float(stats.kstest(samples, cdf, method="asymp").pvalue)


def ks_2sample(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov p-value (asymptotic)."""
    return float(stats.ks_2samp(a, b, method="asymp").pvalue)


@dataclass
class ReplicationSummary:
    """Five-number view of replicated estimates, whiskers at the extremes."""

    estimates: List[float]
    quartiles: Tuple[float, float, float]
    whiskers: Tuple[float, float]
    per_rep_calls: Optional[List[int]] = None

    @property
    def median(self) -> float:
        return self.quartiles[1]


def boxplot_summary(estimates, per_rep_calls=None) -> ReplicationSummary:
    """Summarize replicated estimates; whiskers extend to the extreme values."""
    arr = np.asarray(list(estimates), dtype=float)
    if arr.size == 0:
        raise InsufficientDataError("need at least one estimate")
    q1, med, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    return ReplicationSummary(
        estimates=arr.tolist(),
        quartiles=(float(q1), float(med), float(q3)),
        whiskers=(float(arr.min()), float(arr.max())),
        per_rep_calls=None if per_rep_calls is None else list(per_rep_calls))
