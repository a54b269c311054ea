"""First designs of experiments that reach the failure domain cheaply.

The builder runs surrogate-guided particle chains: kernel proposals are
scored by a Gaussian-process regressor instead of the true limit state, a
single true call per move controls the chain, and every true call enriches
the design.  The GP mean is pinned at the failure threshold so unexplored
regions are never implicitly ruled out; the expected total cost is
(d + 1) + N_fail * log(1/p) true calls.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg, optimize

from .kernels import KernelConfig


class GPFitError(RuntimeError):
    """Covariance could not be factorized even after nugget escalation."""


@dataclass
class GPModel:
    """Trend-fixed Gaussian-process regressor (simple kriging).

    Anisotropic squared-exponential covariance; the constant mean is fixed
    at `trend` and never re-estimated.  Prediction interpolates the
    training values up to the nugget.
    """

    points: np.ndarray
    values: np.ndarray
    trend: float
    length_scales: np.ndarray
    process_sd: float
    nugget: float
    _alpha: np.ndarray = field(repr=False, default=None)

    def predict(self, x) -> np.ndarray:
        """Posterior mean at one point (shape (d,)) or a batch (n, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        scaled = x / self.length_scales
        train = self.points / self.length_scales
        d2 = np.sum(scaled * scaled, axis=1)[:, None] \
            + np.sum(train * train, axis=1)[None, :] - 2.0 * scaled @ train.T
        k = np.exp(-0.5 * np.maximum(d2, 0.0))
        return self.trend + k @ self._alpha

    def predict_one(self, x) -> float:
        return float(self.predict(x)[0])

    def to_dict(self) -> dict:
        return {
            "trend": self.trend,
            "length_scales": self.length_scales.tolist(),
            "process_sd": self.process_sd,
            "nugget": self.nugget,
            "n_points": int(len(self.values)),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _pairwise_sq(points):
    diff = points[:, None, :] - points[None, :, :]
    return diff * diff                    # (n, n, d) per-axis squared distances


def _profile_nll_and_grad(log_ls, sq, resid, nugget):
    """Negative profile log-likelihood over log length-scales.

    The process variance is profiled out in closed form:
    sigma^2 = r' A^{-1} r / n with A = C + nugget*I.
    """
    n = len(resid)
    inv2 = np.exp(-2.0 * log_ls)
    c = np.exp(-0.5 * (sq @ inv2))
    a = c + nugget * np.eye(n)
    try:
        cf = linalg.cho_factor(a, lower=True)
    except linalg.LinAlgError:
        return np.inf, np.zeros_like(log_ls)
    alpha = linalg.cho_solve(cf, resid)
    s2 = float(resid @ alpha) / n
    if s2 <= 0.0:
        s2 = 1e-300
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    nll = 0.5 * (n * math.log(s2) + logdet)
    a_inv = linalg.cho_solve(cf, np.eye(n))
    weight = (a_inv - np.outer(alpha, alpha) / s2) * c
    grad = 0.5 * np.tensordot(weight, sq, axes=([0, 1], [0, 1])) * inv2
    return nll, grad


def _optimize_log_ls(sq, resid, nugget, starts, bounds, maxiter):
    best = None
    for x0 in starts:
        res = optimize.minimize(
            _profile_nll_and_grad, x0, jac=True, method="L-BFGS-B",
            bounds=bounds, args=(sq, resid, nugget),
            options={"maxiter": maxiter})
        if math.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    return None if best is None else best.x


def _optimize_tied_log_ls(sq, resid, nugget, starts, bounds, maxiter):
    """Shared-scale variant: one log length-scale for every axis."""
    d = sq.shape[2]

    def obj(theta):
        nll, grad = _profile_nll_and_grad(np.full(d, theta[0]), sq, resid, nugget)
        return nll, np.array([grad.sum()])

    lo = min(b[0] for b in bounds)
    hi = max(b[1] for b in bounds)
    best = None
    for x0 in starts:
        res = optimize.minimize(obj, [float(np.mean(x0))], jac=True,
                                method="L-BFGS-B", bounds=[(lo, hi)],
                                options={"maxiter": maxiter})
        if math.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    return None if best is None else np.full(d, best.x[0])


def _scale_box(points):
    ranges = points.max(axis=0) - points.min(axis=0)
    ranges = np.where(ranges > 0, ranges, 1.0)
    return np.log(1e-2 * ranges), np.log(1e1 * ranges)


def condition_gp(points, values, trend_q: float, length_scales,
                 nugget: float = 1e-8) -> GPModel:
    """Train the GP at fixed hyperparameters (Cholesky + weights only).

    Escalates the nugget tenfold a few times if the covariance cannot be
    factorized, then fails.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    length_scales = np.asarray(length_scales, dtype=float)
    resid = values - trend_q
    n = len(values)
    x = points / length_scales
    d2 = np.sum(x * x, axis=1)[:, None] + np.sum(x * x, axis=1)[None, :] - 2.0 * x @ x.T
    c = np.exp(-0.5 * np.maximum(d2, 0.0))
    current = nugget
    for _ in range(6):
        try:
            cf = linalg.cho_factor(c + current * np.eye(n), lower=True)
            break
        except linalg.LinAlgError:
            current *= 10.0
    else:
        raise GPFitError("covariance not factorizable even with an escalated nugget")
    alpha = linalg.cho_solve(cf, resid)
    s2 = max(float(resid @ alpha) / n, 0.0)
    return GPModel(points=points, values=values, trend=trend_q,
                   length_scales=length_scales, process_sd=math.sqrt(s2),
                   nugget=current, _alpha=alpha)


def fit_gp(points, values, trend_q: float, nugget: float = 1e-8,
           n_restarts: int = 8, rng=None, initial_log_ls=None,
           maxiter: int = 60, search_subsample: int = 150,
           tied: bool = False) -> GPModel:
    """Maximum-likelihood fit of the trend-fixed GP.

    Length scales are optimized over a multi-start L-BFGS search with
    log-uniform initial scales spanning [1e-2, 1e1] times the per-axis
    input range; the process sd follows in closed form.  Half the restarts
    are tied across axes (the likelihood of strongly anisotropic random
    starts is flat in high dimension) and one start uses the
    sqrt(d)-scaled spread heuristic.  A warm start can be passed through
    `initial_log_ls` (prepended).  Past `search_subsample` points, the
    scale search runs on a random subsample; the returned model is always
    conditioned on the full data.  With `tied=True` a single shared scale
    is optimized (per-axis maximum likelihood overfits designs that
    concentrate along chains and degrades proposal ranking).  On a
    non-factorizable covariance the nugget escalates tenfold a few times
    before failing.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    n, d = points.shape
    if n < d + 1:
        raise ValueError(f"need at least d+1={d + 1} training points, got {n}")
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = _scale_box(points)
    starts = []
    if initial_log_ls is not None:
        starts.append(np.clip(np.asarray(initial_log_ls, dtype=float), lo - 3.0, hi + 3.0))
    if n_restarts > 0:
        spread = np.log(math.sqrt(d) * np.maximum(points.std(axis=0), 1e-3))
        starts.append(np.clip(spread, lo, hi))
        n_tied = n_restarts // 2
        gmean = float(np.mean(lo))
        gspan = float(np.mean(hi)) - gmean
        starts.extend(np.full(d, gmean + gspan * rng.random()) for _ in range(n_tied))
        starts.extend(rng.uniform(lo, hi) for _ in range(n_restarts - n_tied))
    bounds = list(zip(lo - 3.0, hi + 3.0))

    if n > search_subsample:
        subset = rng.choice(n, size=search_subsample, replace=False)
        search_pts, search_resid = points[subset], values[subset] - trend_q
    else:
        search_pts, search_resid = points, values - trend_q
    sq = _pairwise_sq(search_pts)

    optimizer = _optimize_tied_log_ls if tied else _optimize_log_ls
    current_nugget = nugget
    for _ in range(6):
        log_ls = optimizer(sq, search_resid, current_nugget, starts, bounds, maxiter)
        if log_ls is not None:
            break
        current_nugget *= 10.0
    else:
        raise GPFitError("covariance not factorizable even with an escalated nugget")
    return condition_gp(points, values, trend_q, np.exp(log_ls), current_nugget)


# ---------------------------------------------------------------------------
# Surrogate-guided moves and the design builder.
# ---------------------------------------------------------------------------

def surrogate_climb(x, y: float, model: GPModel, kernel_cfg: KernelConfig,
                    rng, burn_in: Optional[int] = None):
    """Score `burn_in` kernel proposals with the surrogate, keep the best.

    Starts from (x, y) and retains each proposal whose surrogate value
    exceeds the running best; costs zero true limit-state calls.  Returns
    (x_best, surrogate_running_best).
    """
    x = np.asarray(x, dtype=float)
    t_burn = kernel_cfg.burn_in if burn_in is None else burn_in
    sigma = kernel_cfg.sigma
    inv = 1.0 / math.sqrt(1.0 + sigma * sigma)
    best_x, best_y = x, float(y)
    w_block = rng.standard_normal((t_burn, x.shape[0]))
    for t in range(t_burn):
        xs = (best_x + sigma * w_block[t]) * inv
        ys = model.predict_one(xs)
        if ys > best_y:
            best_x, best_y = xs, ys
    return best_x, best_y


@dataclass
class DoEResult:
    """Design produced by the builder, with per-chain accounting.

    `per_chain_moves` counts the true calls attributed to each chain (the
    start evaluation plus one call per climb move, reverted or not), so
    n_calls = (d + 1) + sum(per_chain_moves).
    """

    design_points: np.ndarray
    design_values: np.ndarray
    threshold: float
    n_fail: int
    n_calls: int
    per_chain_moves: List[int]
    chain_ids: np.ndarray       # -1 for the initial space-filling draws
    move_indices: np.ndarray    # 0 for chain starts and initial draws
    capped_chains: List[int]
    model: GPModel

    @property
    def is_failure(self) -> np.ndarray:
        return self.design_values > self.threshold

    def to_csv(self, path_or_buffer):
        own = isinstance(path_or_buffer, (str, bytes))
        fh = open(path_or_buffer, "w") if own else path_or_buffer
        try:
            d = self.design_points.shape[1]
            cols = ",".join(f"x{j + 1}" for j in range(d))
            fh.write(f"{cols},g,is_failure,chain_id,move_index\n")
            fail = self.is_failure
            for i in range(len(self.design_values)):
                xs = ",".join(repr(v) for v in self.design_points[i])
                fh.write(f"{xs},{self.design_values[i]!r},{int(fail[i])},"
                         f"{self.chain_ids[i]},{self.move_indices[i]}\n")
        finally:
            if own:
                fh.close()


def expected_doe_calls(d: int, n_fail: int, p: float) -> float:
    """Expected true calls (d + 1) + n_fail * log(1/p)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0,1), got {p}")
    return (d + 1) + n_fail * math.log(1.0 / p)


_DEFAULT_CAP = 50 * math.ceil(math.log(1e12))   # per-chain move cap


def build_doe(ls, n_fail: int, kernel_cfg: Optional[KernelConfig] = None,
              seed=None, rng=None, move_cap: int = _DEFAULT_CAP,
              reopt_every: int = 5, full_fit_every: int = 25) -> DoEResult:
    """Grow a design containing `n_fail` failure points of `ls`.

    After d+1 initial draws, each chain alternates a surrogate-scored
    climb with a single controlling true call; the chain position reverts
    when the true value regressed, but the evaluated point stays in the
    training set.  The GP is retrained after every true call; its length
    scales are re-optimized from a warm start every `reopt_every` calls
    and from a fresh multi-start every `full_fit_every` calls (exact
    retraining at fixed hyperparameters is cheap, the hyperparameter
    search is not).  Chains that exceed `move_cap` moves are reported in
    `capped_chains` and the result is partial.
    """
    if n_fail < 1:
        raise ValueError(f"n_fail must be >= 1, got {n_fail}")
    if ls.threshold is None:
        raise ValueError("limit state needs a threshold for DoE construction")
    cfg = kernel_cfg if kernel_cfg is not None else KernelConfig()
    rng = np.random.default_rng(seed) if rng is None else rng
    q = ls.threshold
    d = ls.dim

    calls_before = ls.call_count
    xs: List[np.ndarray] = []
    ys: List[float] = []
    chain_ids: List[int] = []
    move_idx: List[int] = []
    for _ in range(d + 1):
        x = np.asarray(ls.sample_input(rng), dtype=float)
        xs.append(x)
        ys.append(ls.evaluate(x))
        chain_ids.append(-1)
        move_idx.append(0)

    model = fit_gp(np.array(xs), np.array(ys), q, rng=rng, tied=True)
    calls_since_full = 0

    def retrain():
        nonlocal model, calls_since_full
        calls_since_full += 1
        pts, vals = np.array(xs), np.array(ys)
        n = len(vals)
        if calls_since_full >= full_fit_every:
            model = fit_gp(pts, vals, q, rng=rng, n_restarts=4, maxiter=40,
                           initial_log_ls=np.log(model.length_scales), tied=True)
            calls_since_full = 0
        elif n <= 3 * (d + 1) or calls_since_full % reopt_every == 0:
            # warm single-start re-optimization; cheap while n is moderate
            model = fit_gp(pts, vals, q, rng=rng, n_restarts=0, maxiter=30,
                           initial_log_ls=np.log(model.length_scales), tied=True)
        else:
            model = condition_gp(pts, vals, q, model.length_scales)

    per_chain_moves: List[int] = []
    capped: List[int] = []
    for chain in range(n_fail):
        x = np.asarray(ls.sample_input(rng), dtype=float)
        y = ls.evaluate(x)
        xs.append(x)
        ys.append(y)
        chain_ids.append(chain)
        move_idx.append(0)
        retrain()
        moves = 0
        while y <= q:
            if moves >= move_cap:
                capped.append(chain)
                break
            cand, _ = surrogate_climb(x, y, model, cfg, rng)
            y_cand = ls.evaluate(cand)
            moves += 1
            xs.append(cand)
            ys.append(y_cand)
            chain_ids.append(chain)
            move_idx.append(moves)
            retrain()
            if y_cand >= y:
                x, y = cand, y_cand
            # else: revert the position, keep the evaluation in the design
        per_chain_moves.append(moves + 1)   # +1: the chain's start call

    n_calls = ls.call_count - calls_before
    return DoEResult(design_points=np.array(xs), design_values=np.array(ys),
                     threshold=q, n_fail=n_fail, n_calls=n_calls,
                     per_chain_moves=per_chain_moves,
                     chain_ids=np.array(chain_ids, dtype=int),
                     move_indices=np.array(move_idx, dtype=int),
                     capped_chains=capped, model=model)
