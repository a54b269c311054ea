import math
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from splitmove.limit_states import (
    BENCHMARK_IDS,
    DimensionMismatchError,
    LimitState,
    LognormalSpec,
    concave_g,
    get_benchmark,
    oscillator_g,
    parabolic_g,
    std_to_lognormal,
    toy_ideal_state,
    waarts_g,
    watermark_analytic_p,
    watermark_phi,
)
from splitmove.stats_checks import ks_test


class TestWatermark:
    def test_along_axis_is_one(self):
        x = np.zeros(20)
        x[0] = 2.5
        assert watermark_phi(x) == pytest.approx(1.0)

    def test_orthogonal_is_zero(self):
        x = np.zeros(20)
        x[3] = -1.7
        x[11] = 0.4
        assert watermark_phi(x) == pytest.approx(0.0)

    def test_analytic_p_reference(self):
        # q = 0.95, d = 20 is the standard hard case
        assert watermark_analytic_p(20, 0.95) == pytest.approx(4.704e-11, rel=5e-4)

    def test_analytic_p_vs_fisher_tail(self):
        # independent route: upper tail of a Fisher(1, d-1) variable
        for d, q in [(5, 0.3), (20, 0.5), (20, 0.95), (50, 0.8)]:
            fisher = stats.f.sf((d - 1) * q * q / (1 - q * q), 1, d - 1)
            assert watermark_analytic_p(d, q) == pytest.approx(fisher, rel=1e-10)

    def test_whole_space_fails_as_q_vanishes(self):
        assert watermark_analytic_p(2, 1e-12) == pytest.approx(1.0, abs=1e-9)

    def test_analytic_p_vs_monte_carlo(self, rng):
        d, q = 20, 0.5
        hits = 0
        n = 10_000_000
        chunk = 1_000_000
        for _ in range(n // chunk):
            x = rng.standard_normal((chunk, d))
            hits += int(np.sum(np.abs(x[:, 0]) / np.linalg.norm(x, axis=1) > q))
        p_mc = hits / n
        p = watermark_analytic_p(d, q)
        assert abs(p - p_mc) < 4 * math.sqrt(p * (1 - p) / n)

    def test_empirical_cdf_matches_analytic(self, rng):
        bench = get_benchmark("watermark")
        x = rng.standard_normal((100_000, 20))
        phi = np.abs(x[:, 0]) / np.linalg.norm(x, axis=1)
        assert ks_test(phi, bench.ls.analytic_cdf) > 0.01

    def test_hazard_of_levels_is_standard_exponential(self, rng):
        bench = get_benchmark("watermark")
        x = rng.standard_normal((100_000, 20))
        phi = np.abs(x[:, 0]) / np.linalg.norm(x, axis=1)
        t = bench.hazard.lam(phi)
        assert ks_test(t, stats.expon.cdf) > 0.01

    def test_hazard_inverse_roundtrip(self):
        bench = get_benchmark("watermark")
        y = np.array([0.1, 0.5, 0.9, 0.95])
        back = bench.hazard.inverse_lambda(bench.hazard.lam(y))
        np.testing.assert_allclose(back, y, rtol=1e-9)


class TestLognormal:
    def test_median_point(self):
        spec = LognormalSpec(mean=1.0, cv=0.2)
        assert std_to_lognormal(0.0, spec) == pytest.approx(0.980581, rel=1e-5)

    def test_degenerate_cv(self):
        spec = LognormalSpec(mean=1.0, cv=0.0)
        assert std_to_lognormal(0.0, spec) == pytest.approx(1.0)
        assert std_to_lognormal(2.0, spec) == pytest.approx(1.0)

    def test_sample_mean_and_cv(self, rng):
        spec = LognormalSpec(mean=3.5, cv=0.4)
        x = std_to_lognormal(rng.standard_normal(1_000_000), spec)
        mean = x.mean()
        cv = x.std() / mean
        assert abs(mean / spec.mean - 1) < 0.005
        assert abs(cv / spec.cv - 1) < 0.01

    @given(mean=st.floats(0.01, 1e3), cv=st.floats(0.0, 2.0))
    def test_log_scale_identities(self, mean, cv):
        spec = LognormalSpec(mean=mean, cv=cv)
        assert spec.sigma_log ** 2 == pytest.approx(math.log1p(cv * cv), rel=1e-12)
        assert spec.mu_log == pytest.approx(math.log(mean) - spec.sigma_log ** 2 / 2, rel=1e-9, abs=1e-12)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            LognormalSpec(mean=-1.0, cv=0.1)
        with pytest.raises(ValueError):
            LognormalSpec(mean=1.0, cv=-0.1)


class TestOscillator:
    def test_median_point_is_safe(self):
        assert oscillator_g(np.zeros(8), fs_mean=15.0) > 0.0

    def test_scalar_matches_vectorized_oracle(self, rng):
        u = rng.standard_normal((50, 8))
        from_scalar = np.array([oscillator_g(row, 21.5) for row in u])
        from_vector = _oscillator_values(u, 21.5)
        np.testing.assert_allclose(from_scalar, from_vector, rtol=1e-12)

    def test_monte_carlo_reference_fs15(self, rng):
        # reference value 4.8015e-3 was computed with 2e6 samples (cv ~ 1%)
        n = 2_000_000
        p_mc = float(np.mean(_oscillator_values(rng.standard_normal((n, 8)), 15.0) < 0))
        assert abs(p_mc - 4.8015e-3) < 4 * math.sqrt(4.8e-3 / n) + 4.8015e-3 * 0.04

    def test_dimension_checked(self):
        with pytest.raises(DimensionMismatchError):
            oscillator_g(np.zeros(7), 15.0)


def _oscillator_values(u, fs_mean):
    """Vectorized oracle re-implementation of the oscillator margin."""
    from splitmove.limit_states import OSCILLATOR_MARGINALS

    cols = []
    for j, spec in enumerate(OSCILLATOR_MARGINALS):
        mean = fs_mean if j == 6 else spec.mean
        s2 = math.log1p(spec.cv ** 2)
        cols.append(np.exp(math.log(mean) - 0.5 * s2 + u[:, j] * math.sqrt(s2)))
    mp, ms, kp, ks_, zp, zs, fs, s0 = cols
    wp = np.sqrt(kp / mp)
    ws = np.sqrt(ks_ / ms)
    wa = 0.5 * (wp + ws)
    za = 0.5 * (zp + zs)
    gamma = ms / mp
    theta = (wp - ws) / wa
    ex2 = (np.pi * s0 / (4 * zs * ws ** 3)
           * (za * zs / (zp * zs * (4 * za ** 2 + theta ** 2) + gamma * za ** 2))
           * ((zp * wp ** 3 + zs * ws ** 3) * wp / (4 * za * wa ** 4)))
    return fs - 3.0 * ks_ * np.sqrt(ex2)


class TestPlanarBenchmarks:
    def test_waarts_origin(self):
        assert waarts_g(np.zeros(2)) == pytest.approx(3.0)

    def test_parabolic_origin(self):
        assert parabolic_g(np.zeros(2)) == pytest.approx(4.995)

    def test_concave_origin_d2(self):
        assert concave_g(np.zeros(2), 2) == pytest.approx(0.887367, rel=1e-5)

    def test_concave_rejects_bad_dim(self):
        with pytest.raises(DimensionMismatchError):
            concave_g(np.zeros(3), 2)

    @pytest.mark.parametrize("name,ref", [
        ("waarts", 2.275e-3),
        ("parabolic", 2.946e-3),
        ("concave2", 4.821e-3),
    ])
    def test_failure_fractions_near_reference(self, rng, name, ref):
        bench = get_benchmark(name)
        n = 400_000
        fails = 0
        for _ in range(4):
            u = rng.standard_normal((n // 4, bench.ls.dim))
            vals = np.apply_along_axis(bench.ls._func, 1, u)
            fails += int(np.sum(vals > bench.ls.threshold))
        p_mc = fails / n
        assert abs(p_mc - ref) < 5 * math.sqrt(ref / n) + 0.05 * ref


class TestToyStates:
    def test_uniform_hazard_value(self):
        _, hazard = toy_ideal_state("uniform01")
        assert float(hazard.lam(0.9)) == pytest.approx(2.302585, rel=1e-6)

    def test_exponential_quantile_and_pdf(self):
        ls, hazard = toy_ideal_state("exponential1")
        q = float(hazard.inverse_lambda(-math.log(1e-6)))
        assert q == pytest.approx(13.8155, rel=1e-4)
        assert float(ls.analytic_pdf(q)) == pytest.approx(1e-6, rel=1e-4)

    @pytest.mark.parametrize("kind", ["uniform01", "exponential1"])
    def test_hazard_of_draws_is_exp1(self, rng, kind):
        ls, hazard = toy_ideal_state(kind)
        draws = rng.random(100_000) if kind == "uniform01" else rng.exponential(size=100_000)
        assert ks_test(hazard.lam(draws), stats.expon.cdf) > 0.01

    @pytest.mark.parametrize("kind", ["uniform01", "exponential1"])
    def test_empirical_cdf_matches(self, rng, kind):
        ls, _ = toy_ideal_state(kind)
        draws = rng.random(100_000) if kind == "uniform01" else rng.exponential(size=100_000)
        assert ks_test(draws, ls.analytic_cdf) > 0.01

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            toy_ideal_state("gauss")


class TestLimitStateWrapper:
    def test_call_counting_exact(self):
        ls = LimitState(dim=2, func=lambda x: x[0] + x[1])
        assert ls.call_count == 0
        for i in range(17):
            ls.evaluate(np.array([1.0, float(i)]))
        assert ls.call_count == 17

    def test_dimension_mismatch_rejected_without_count(self):
        ls = LimitState(dim=3, func=lambda x: x.sum())
        with pytest.raises(DimensionMismatchError):
            ls.evaluate(np.zeros(2))
        assert ls.call_count == 0

    def test_concurrent_counting_is_exact(self):
        ls = LimitState(dim=1, func=lambda x: x[0])
        x = np.array([0.5])

        def hammer():
            for _ in range(5000):
                ls.evaluate(x)

        threads = [threading.Thread(target=hammer) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert ls.call_count == 20_000

    def test_non_finite_value_raises(self):
        from splitmove.limit_states import EvaluationError

        ls = LimitState(dim=1, func=lambda x: float("nan"))
        with pytest.raises(EvaluationError):
            ls.evaluate(np.zeros(1))

    def test_registry_ids_complete(self):
        expected = {"watermark", "oscillator15", "oscillator21.5", "oscillator27.5",
                    "waarts", "parabolic", "concave2", "concave20", "concave50",
                    "toy-uniform", "toy-exp"}
        assert set(BENCHMARK_IDS) == expected
        for name in expected:
            bench = get_benchmark(name)
            assert bench.ls.dim >= 1

    def test_registry_instances_are_fresh(self):
        a = get_benchmark("waarts")
        b = get_benchmark("waarts")
        a.ls.evaluate(np.zeros(2))
        assert a.ls.call_count == 1
        assert b.ls.call_count == 0

    def test_unknown_benchmark(self):
        from splitmove.limit_states import UnknownBenchmarkError

        with pytest.raises(UnknownBenchmarkError):
            get_benchmark("nope")

    def test_analytic_cdf_monotone_in_range(self):
        bench = get_benchmark("watermark")
        ys = np.linspace(0.0, 1.0, 200)
        cdf = bench.ls.analytic_cdf(ys)
        assert np.all(np.diff(cdf) >= -1e-12)
        assert cdf.min() >= 0.0 and cdf.max() <= 1.0
