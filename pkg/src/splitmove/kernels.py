"""Reversible Markov kernels for conditional sampling above a level.

Both kernels target the input distribution restricted to {g > q}: the
Metropolis-Hastings random walk works for any input density, while the
direct construction x* = (x + sigma*W) / sqrt(1 + sigma^2) is exact for a
standard Gaussian input space (it preserves N(0, I) without any
accept/reject on the density).

A `transition` chains `burn_in` kernel steps and reports whether at least
one step was accepted together with the exact number of limit-state calls
spent.  Kernels are stateless: concurrent use is safe as long as each
caller owns its own random generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_KERNEL_KINDS = ("direct_gaussian", "metropolis_hastings")
_PROPOSALS = ("gaussian", "uniform")


class SeedSelectionError(ValueError):
    """No candidate particle is available to start a transition from."""


@dataclass(frozen=True)
class KernelConfig:
    """Transition-kernel settings: proposal scale, burn-in length and kind.

    `proposal` selects the random-walk increment for Metropolis-Hastings:
    standard Gaussian (default) or symmetric uniform on a compact box of
    half-width `uniform_halfwidth` (the direct kernel always uses Gaussian
    increments).
    """

    sigma: float = 0.3
    burn_in: int = 20
    kind: str = "direct_gaussian"
    proposal: str = "gaussian"
    uniform_halfwidth: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.burn_in < 1:
            raise ValueError(f"burn_in must be >= 1, got {self.burn_in}")
        if self.kind not in _KERNEL_KINDS:
            raise ValueError(f"kind must be one of {_KERNEL_KINDS}, got {self.kind!r}")
        if self.proposal not in _PROPOSALS:
            raise ValueError(f"proposal must be one of {_PROPOSALS}, got {self.proposal!r}")


class StepResult(NamedTuple):
    x: np.ndarray
    level: float          # g at the returned state
    accepted: bool
    calls: int


class TransitionResult(NamedTuple):
    x: np.ndarray
    level: float
    any_accepted: bool
    calls: int


def _draw_increment(cfg: KernelConfig, dim: int, rng) -> np.ndarray:
    if cfg.proposal == "uniform":
        return rng.uniform(-cfg.uniform_halfwidth, cfg.uniform_halfwidth, size=dim)
    return rng.standard_normal(dim)


def mh_step(x, level, q, cfg: KernelConfig, ls, pdf, rng) -> StepResult:
    """One Metropolis-Hastings step targeting the input law on {g > q}.

    The density ratio and the acceptance uniform are resolved before g is
    evaluated, so a step that the ratio already rejects costs no
    limit-state call; otherwise exactly one call is spent.
    """
    x = np.asarray(x, dtype=float)
    w = _draw_increment(cfg, x.shape[0], rng)
    xs = x + cfg.sigma * w
    ratio = pdf(xs) / pdf(x)
    u = rng.random()
    if u >= ratio:
        return StepResult(x, level, False, 0)
    lv = ls.evaluate(xs)
    if lv > q:
        return StepResult(xs, lv, True, 1)
    return StepResult(x, level, False, 1)


def direct_gaussian_step(x, level, q, cfg: KernelConfig, ls, rng) -> StepResult:
    """One exact reversible step for a standard Gaussian input space.

    Always spends exactly one limit-state call; accepts iff the proposal
    lands above q.
    """
    x = np.asarray(x, dtype=float)
    w = rng.standard_normal(x.shape[0])
    xs = (x + cfg.sigma * w) / math.sqrt(1.0 + cfg.sigma * cfg.sigma)
    lv = ls.evaluate(xs)
    if lv > q:
        return StepResult(xs, lv, True, 1)
    return StepResult(x, level, False, 1)


def transition(x, level, q, cfg: KernelConfig, ls, rng) -> TransitionResult:
    """Apply `cfg.burn_in` successive kernel steps above level q.

    Returns the final state and level, whether at least one step was
    accepted, and the exact number of limit-state calls (equal to the
    burn-in length for the direct kernel, at most that for MH).
    """
    x = np.asarray(x, dtype=float)
    t_burn = cfg.burn_in
    calls = 0
    any_accepted = False
    if cfg.kind == "direct_gaussian":
        # Hot path: pre-draw all increments, inline the step.
        sigma = cfg.sigma
        inv = 1.0 / math.sqrt(1.0 + sigma * sigma)
        w_block = rng.standard_normal((t_burn, x.shape[0]))
        evaluate = ls.evaluate
        for t in range(t_burn):
            xs = (x + sigma * w_block[t]) * inv
            lv = evaluate(xs)
            calls += 1
            if lv > q:
                x = xs
                level = lv
                any_accepted = True
        return TransitionResult(x, level, any_accepted, calls)
    pdf = ls.input_pdf
    if pdf is None:
        raise ValueError("Metropolis-Hastings kernel needs the state's input_pdf")
    for _ in range(t_burn):
        res = mh_step(x, level, q, cfg, ls, pdf, rng)
        x, level = res.x, res.level
        calls += res.calls
        any_accepted = any_accepted or res.accepted
    return TransitionResult(x, level, any_accepted, calls)


def select_seed(population, mover_id, rng):
    """Pick a chain starting point among particles strictly above the mover.

    The caller passes only candidates whose level exceeds the mover's.
    Particles whose current position was generated from the mover (its
    sons, and replicas sitting on a son's position) are avoided; when no
    other candidate exists the choice falls back to the full population
    and the move must then be counted only if some transition is accepted.

    Returns (particle, fallback_used).
    """
    if not population:
        raise SeedSelectionError("empty candidate population for seed selection")
    eligible = [p for p in population if p.origin_id != mover_id]
    if eligible:
        pool, fallback = eligible, False
    else:
        pool, fallback = population, True
    idx = int(rng.integers(len(pool)))
    return pool[idx], fallback
