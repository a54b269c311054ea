"""Limit-state functions, benchmark problems and their analytic references.

A limit state is a scalar performance function g over a d-dimensional input
space; "failure" is the event {g(X) > threshold}.  Benchmarks that are
naturally written with a g(x) < 0 failure convention are exposed negated so
that every state handed to the particle movers satisfies "larger level means
closer to failure".

Each state carries an exact call counter (thread safe) and, when available,
the analytic cdf/pdf of g(X) together with the integrated hazard
Lambda(y) = -log(1 - F(y)) and its inverse, which enable exact conditional
sampling for oracle runs.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special


class DimensionMismatchError(ValueError):
    """Input vector length does not match the state's dimension."""


class EvaluationError(RuntimeError):
    """The performance function produced a non-finite value."""


class UnknownBenchmarkError(KeyError):
    """Requested benchmark id is not registered."""


@dataclass(frozen=True)
class LognormalSpec:
    """Lognormal marginal given by its mean and coefficient of variation.

    The log-scale parameters follow from
    sigma_log^2 = log(1 + cv^2) and mu_log = log(mean) - sigma_log^2 / 2,
    so that the transformed variable has exactly the prescribed mean and cv.
    """

    mean: float
    cv: float

    def __post_init__(self):
        if self.mean <= 0:
            raise ValueError(f"mean must be positive, got {self.mean}")
        if self.cv < 0:
            raise ValueError(f"cv must be non-negative, got {self.cv}")

    @property
    def sigma_log(self) -> float:
        return math.sqrt(math.log1p(self.cv * self.cv))

    @property
    def mu_log(self) -> float:
        return math.log(self.mean) - 0.5 * math.log1p(self.cv * self.cv)


def std_to_lognormal(u, spec: LognormalSpec):
    """Map a standard-normal value (or array) to the lognormal marginal."""
    return np.exp(spec.mu_log + np.asarray(u) * spec.sigma_log)


@dataclass
class HazardView:
    """Integrated hazard Lambda(y) = -log(1 - F(y)) of g(X), with inverse.

    Both callables must accept floats or numpy arrays.  `inverse_lambda`
    is optional; it is required only for exact-sampling (oracle) descents.
    """

    lam: Callable
    inverse_lambda: Optional[Callable] = None


class LimitState:
    """Evaluable performance function with dimension and call accounting.

    Parameters
    ----------
    dim : input dimension d.
    func : map from a length-d vector to a float (the level).
    threshold : failure level q, or None when the state is used for
        quantile estimation (q is then the unknown).
    sample_input : draws one input point from the underlying distribution;
        signature (rng) -> ndarray of shape (dim,).
    input_pdf : density of the input distribution (may be unnormalized),
        needed by the Metropolis-Hastings kernel.
    analytic_cdf / analytic_pdf : cdf / pdf of g(X) when known.
    """

    def __init__(self, dim, func, threshold=None, sample_input=None,
                 input_pdf=None, analytic_cdf=None, analytic_pdf=None,
                 name=""):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self.threshold = threshold
        self.sample_input = sample_input
        self.input_pdf = input_pdf
        self.analytic_cdf = analytic_cdf
        self.analytic_pdf = analytic_pdf
        self.name = name
        self._func = func
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._calls

    def reset_call_count(self):
        with self._lock:
            self._calls = 0

    def evaluate(self, x) -> float:
        """Evaluate the level at x, incrementing the call counter by one."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatchError(
                f"expected a vector of length {self.dim}, got shape {x.shape}")
        with self._lock:
            self._calls += 1
        value = float(self._func(x))
        if not math.isfinite(value):
            raise EvaluationError(
                f"{self.name or 'limit state'} returned {value} at x={x!r}")
        return value

    __call__ = evaluate


# ---------------------------------------------------------------------------
# Watermarking detection: double cone of axis u (the first basis vector).
# ---------------------------------------------------------------------------

def watermark_phi(x) -> float:
    """Normalized projection |x . u| / ||x|| onto the first axis."""
    x = np.asarray(x, dtype=float)
    return abs(x[0]) / math.sqrt(float(x @ x))


def watermark_analytic_p(d: int, q: float) -> float:
    """Exact exceedance probability P(phi(X) > q) for X standard normal in R^d.

    phi(X)^2 is Beta(1/2, (d-1)/2) distributed, so the tail reduces to a
    regularized incomplete beta value (equivalently the upper tail of a
    Fisher variable with (1, d-1) degrees of freedom).
    """
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    return float(special.betainc((d - 1) / 2.0, 0.5, 1.0 - q * q))


def _watermark_cdf(d):
    a = (d - 1) / 2.0

    def cdf(y):
        y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
        return 1.0 - special.betainc(a, 0.5, 1.0 - y * y)

    return cdf


def _watermark_pdf(d):
    a = (d - 1) / 2.0
    lognorm = special.betaln(a, 0.5)

    def pdf(y):
        y = np.asarray(y, dtype=float)
        inside = (y > 0.0) & (y < 1.0)
        y = np.where(inside, y, 0.5)
        # density of sqrt(B), B ~ Beta(1/2, (d-1)/2)
        val = 2.0 * np.exp(-lognorm) * (1.0 - y * y) ** (a - 1.0)
        return np.where(inside, val, 0.0)

    return pdf


def _watermark_hazard(d) -> HazardView:
    a = (d - 1) / 2.0

    def lam(y):
        y = np.asarray(y, dtype=float)
        tail = special.betainc(a, 0.5, np.clip(1.0 - y * y, 0.0, 1.0))
        return -np.log(tail)

    def inverse(t):
        t = np.asarray(t, dtype=float)
        return np.sqrt(1.0 - special.betaincinv(a, 0.5, np.exp(-t)))

    return HazardView(lam=lam, inverse_lambda=inverse)


# ---------------------------------------------------------------------------
# Two-degrees-of-freedom damped oscillator under white-noise base excitation.
# ---------------------------------------------------------------------------

# Marginals in input order: m_p, m_s, k_p, k_s, zeta_p, zeta_s, F_s, S0.
# F_s mean is replaced at construction (15 / 21.5 / 27.5).
OSCILLATOR_MARGINALS = (
    LognormalSpec(1.5, 0.10),
    LognormalSpec(0.01, 0.10),
    LognormalSpec(1.0, 0.20),
    LognormalSpec(0.01, 0.20),
    LognormalSpec(0.05, 0.40),
    LognormalSpec(0.02, 0.50),
    LognormalSpec(15.0, 0.10),
    LognormalSpec(100.0, 0.10),
)

_OSCILLATOR_PEAK_FACTOR = 3.0


def oscillator_g(u, fs_mean: float = 15.0) -> float:
    """Secondary-spring capacity margin of the 2-dof damped oscillator.

    `u` is an 8-vector in standard-normal space; each coordinate is mapped
    to its lognormal marginal before evaluating the physical model.  The
    mean-square relative displacement of the secondary spring uses the
    white-noise response of the coupled system (cubic natural-frequency
    scaling in the leading S0 factor).  Failure convention: g < 0.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (8,):
        raise DimensionMismatchError(f"oscillator input must be an 8-vector, got {u.shape}")
    x = np.empty(8)
    for j, spec in enumerate(OSCILLATOR_MARGINALS):
        mean = fs_mean if j == 6 else spec.mean
        s2 = math.log1p(spec.cv * spec.cv)
        x[j] = math.exp(math.log(mean) - 0.5 * s2 + u[j] * math.sqrt(s2))
    mp, ms, kp, ks, zp, zs, fs, s0 = x
    wp = math.sqrt(kp / mp)
    ws = math.sqrt(ks / ms)
    wa = 0.5 * (wp + ws)
    za = 0.5 * (zp + zs)
    gamma = ms / mp
    theta = (wp - ws) / wa
    ex2 = (math.pi * s0 / (4.0 * zs * ws ** 3)
           * (za * zs / (zp * zs * (4.0 * za * za + theta * theta) + gamma * za * za))
           * ((zp * wp ** 3 + zs * ws ** 3) * wp / (4.0 * za * wa ** 4)))
    if not (math.isfinite(ex2) and ex2 >= 0.0):
        raise EvaluationError(f"non-finite mean-square displacement at u={u!r}")
    return fs - _OSCILLATOR_PEAK_FACTOR * ks * math.sqrt(ex2)


# ---------------------------------------------------------------------------
# Planar benchmarks used by the design-of-experiments builder.
# ---------------------------------------------------------------------------

def waarts_g(x) -> float:
    """Four-branch serial system in standard-normal R^2; failure g < 0."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[0], x[1]
    return min(3.0 + 0.1 * (x1 - x2) ** 2 - abs(x1 + x2) / math.sqrt(2.0),
               7.0 / math.sqrt(2.0) - abs(x1 - x2))


def parabolic_g(x, b: float = 5.0, kappa: float = 0.5, eps: float = 0.1) -> float:
    """Parabolic boundary in standard-normal R^2; failure g < 0."""
    x = np.asarray(x, dtype=float)
    return b - x[1] - kappa * (x[0] - eps) ** 2


def concave_g(u, d: int, a: float = 3.0, sigma: float = 0.2) -> float:
    """Concave failure domain in dimension d; failure g < 0.

    Defined for iid lognormal inputs with mean 1 and standard deviation
    `sigma`; the standard-normal coordinates are transformed before the sum.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (d,):
        raise DimensionMismatchError(f"expected a {d}-vector, got shape {u.shape}")
    s2 = math.log1p(sigma * sigma)
    total = float(np.sum(np.exp(-0.5 * s2 + u * math.sqrt(s2))))
    return d + a * sigma * math.sqrt(d) - total


# ---------------------------------------------------------------------------
# One-dimensional toy states with exact hazards (oracle fixtures).
# ---------------------------------------------------------------------------

def toy_ideal_state(kind: str):
    """Return (LimitState, HazardView) for a 1-D state with exact hazard.

    kind "uniform01": g(X) = X ~ U(0,1), Lambda(q) = -log(1-q);
    kind "exponential1": g(X) = X ~ Exp(1), Lambda(q) = q.
    """
    if kind == "uniform01":
        def lam(y):
            y = np.asarray(y, dtype=float)
            return -np.log1p(-np.clip(y, 0.0, None))

        hazard = HazardView(lam=lam, inverse_lambda=lambda t: -np.expm1(-np.asarray(t, dtype=float)))
        ls = LimitState(
            dim=1,
            func=lambda x: x[0],
            sample_input=lambda rng: rng.random(1),
            analytic_cdf=lambda y: np.clip(np.asarray(y, dtype=float), 0.0, 1.0),
            analytic_pdf=lambda y: np.where((np.asarray(y) >= 0) & (np.asarray(y) <= 1), 1.0, 0.0),
            name="toy-uniform",
        )
        return ls, hazard
    if kind == "exponential1":
        def lam(y):
            return np.clip(np.asarray(y, dtype=float), 0.0, None)

        hazard = HazardView(lam=lam, inverse_lambda=lambda t: np.asarray(t, dtype=float))
        ls = LimitState(
            dim=1,
            func=lambda x: x[0],
            sample_input=lambda rng: rng.exponential(size=1),
            analytic_cdf=lambda y: -np.expm1(-np.clip(np.asarray(y, dtype=float), 0.0, None)),
            analytic_pdf=lambda y: np.where(np.asarray(y) >= 0, np.exp(-np.clip(np.asarray(y), 0.0, None)), 0.0),
            name="toy-exp",
        )
        return ls, hazard
    raise ValueError(f"unknown toy state kind {kind!r}")


# ---------------------------------------------------------------------------
# Benchmark registry.
# ---------------------------------------------------------------------------

def standard_normal_sampler(d):
    def sample(rng):
        return rng.standard_normal(d)

    return sample


def standard_normal_pdf(x) -> float:
    """Unnormalized standard multivariate normal density (for MH ratios)."""
    x = np.asarray(x, dtype=float)
    return math.exp(-0.5 * float(x @ x))


@dataclass
class Benchmark:
    ls: LimitState
    hazard: Optional[HazardView] = None
    reference_p: Optional[float] = None
    notes: str = ""


def _make_watermark(d=20, q=0.95) -> Benchmark:
    ls = LimitState(
        dim=d,
        func=watermark_phi,
        threshold=q,
        sample_input=standard_normal_sampler(d),
        input_pdf=standard_normal_pdf,
        analytic_cdf=_watermark_cdf(d),
        analytic_pdf=_watermark_pdf(d),
        name="watermark",
    )
    return Benchmark(ls=ls, hazard=_watermark_hazard(d),
                     reference_p=watermark_analytic_p(d, q))


def _negated(func):
    def level(x):
        return -func(x)

    return level


def _make_oscillator(fs_mean, reference_p) -> Benchmark:
    ls = LimitState(
        dim=8,
        func=_negated(lambda x: oscillator_g(x, fs_mean)),
        threshold=0.0,
        sample_input=standard_normal_sampler(8),
        input_pdf=standard_normal_pdf,
        name=f"oscillator{fs_mean:g}",
    )
    return Benchmark(ls=ls, reference_p=reference_p)


def _make_planar(name, func, d, reference_p) -> Benchmark:
    ls = LimitState(
        dim=d,
        func=_negated(func),
        threshold=0.0,
        sample_input=standard_normal_sampler(d),
        input_pdf=standard_normal_pdf,
        name=name,
    )
    return Benchmark(ls=ls, reference_p=reference_p)


def _make_toy(kind) -> Benchmark:
    ls, hazard = toy_ideal_state(kind)
    return Benchmark(ls=ls, hazard=hazard)


_REGISTRY = {
    "watermark": _make_watermark,
    "oscillator15": lambda: _make_oscillator(15.0, 4.8015e-3),
    "oscillator21.5": lambda: _make_oscillator(21.5, 4.34e-5),
    "oscillator27.5": lambda: _make_oscillator(27.5, 3.745e-7),
    "waarts": lambda: _make_planar("waarts", waarts_g, 2, 2.275e-3),
    "parabolic": lambda: _make_planar("parabolic", parabolic_g, 2, 2.946e-3),
    "concave2": lambda: _make_planar("concave2", lambda x: concave_g(x, 2), 2, 4.821e-3),
    "concave20": lambda: _make_planar("concave20", lambda x: concave_g(x, 20), 20, 2.273e-3),
    "concave50": lambda: _make_planar("concave50", lambda x: concave_g(x, 50), 50, 1.861e-3),
    "toy-uniform": lambda: _make_toy("uniform01"),
    "toy-exp": lambda: _make_toy("exponential1"),
}

BENCHMARK_IDS = tuple(sorted(_REGISTRY))


def get_benchmark(name: str) -> Benchmark:
    """Build a fresh benchmark instance (own call counter) by string id."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UnknownBenchmarkError(
            f"unknown benchmark {name!r}; available: {', '.join(BENCHMARK_IDS)}") from None
    return factory()
