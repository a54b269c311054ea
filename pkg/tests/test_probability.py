import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import stats

from splitmove.harness import stream
from splitmove.limit_states import get_benchmark
from splitmove.probability import (
    CostModel,
    InvalidConfigError,
    PlannerError,
    ci_p,
    cramer_rao_bound,
    delta_sq_ms,
    estimate_p,
    optimal_p0,
    run_probability,
    t_mc,
    t_ms,
    t_par_expected,
    t_par_over_t_mc,
    variance_p,
)


class TestEstimateP:
    def test_zero_moves_gives_one(self):
        assert estimate_p(0, 10, 100) == 1.0

    def test_high_precision_reference(self):
        # frozen from exact Decimal arithmetic: (999/1000)^23781
        getcontext().prec = 50
        exact = float((Decimal(1) - Decimal(1) / Decimal(1000)) ** 23781)
        assert exact == pytest.approx(4.6438213308723e-11, rel=1e-10)
        assert estimate_p(23781, 10, 100) == pytest.approx(exact, rel=1e-12)

    def test_symmetry_in_workers_and_particles(self):
        assert estimate_p(4321, 2, 500) == estimate_p(4321, 500, 2)

    @given(m=st.integers(0, 10_000), kn=st.sampled_from([(2, 5), (5, 2), (10, 100)]))
    def test_strictly_decreasing_in_moves(self, m, kn):
        k, n = kn
        assume(-(m + 1) * math.log1p(-1.0 / (k * n)) < 600)  # stay above underflow
        assert estimate_p(m + 1, k, n) < estimate_p(m, k, n)

    def test_invalid_config(self):
        with pytest.raises(InvalidConfigError):
            estimate_p(10, 1, 1)
        with pytest.raises(InvalidConfigError):
            estimate_p(-1, 10, 10)


class TestVariance:
    def test_closed_form_value(self):
        assert variance_p(1e-3, 1000) == pytest.approx(6.9317e-9, rel=1e-4)
        cv = math.sqrt(variance_p(1e-3, 1000)) / 1e-3
        assert cv == pytest.approx(0.0833, abs=2e-4)

    def test_approaches_cramer_rao(self):
        p = 1e-3
        ratio = variance_p(p, 10 ** 6) / cramer_rao_bound(p, 10 ** 6)
        assert abs(ratio - 1.0) < 1e-5

    def test_empirical_variance_ideal_mode(self):
        bench = get_benchmark("toy-exp")
        p, n_tot = 1e-4, 100
        t = -math.log(p)
        estimates = []
        for r in range(10_000):
            rng = stream(7, r)
            m = rng.poisson(n_tot * t)   # oracle: counted moves are Poisson
            estimates.append(estimate_p(m, 1, n_tot))
        emp = float(np.var(estimates, ddof=1))
        assert abs(emp / variance_p(p, n_tot) - 1.0) < 0.10


class TestCI:
    def test_reference_interval(self):
        lo, hi = ci_p(1e-6, 1000, 0.05)
        assert lo == pytest.approx(7.927e-7, rel=1e-3)
        assert hi == pytest.approx(1.2567e-6, rel=1e-3)

    def test_contains_shifted_center(self):
        p_hat, n = 3.2e-5, 500
        lo, hi = ci_p(p_hat, n, 0.05)
        z = stats.norm.ppf(0.975)
        center = p_hat * math.exp(-z * z / (2 * n))
        assert lo < center < hi

    @given(alpha=st.floats(0.01, 0.5), p=st.floats(1e-12, 0.99),
           n=st.integers(10, 10 ** 6))
    def test_interval_ordered(self, alpha, p, n):
        lo, hi = ci_p(p, n, alpha)
        assert 0 < lo < hi

    def test_coverage_ideal_oracle(self):
        # Poisson oracle for the move count; nominal 95% coverage
        p, n_tot = 1e-4, 1000
        t = -math.log(p)
        rng = stream(12345)
        covered = 0
        reps = 1000
        for _ in range(reps):
            m = rng.poisson(n_tot * t)
            p_hat = estimate_p(m, 1, n_tot)
            lo, hi = ci_p(p_hat, n_tot, 0.05)
            covered += lo <= p <= hi
        assert 0.93 <= covered / reps <= 0.97


class TestRunProbability:
    def test_ideal_mode_unbiased_quick(self):
        bench = get_benchmark("toy-exp")
        p = 1e-3
        vals = []
        for r in range(200):
            est = run_probability(bench.ls, 50, 2, seed=5, base_key=(r,),
                                  hazard=bench.hazard, mode="ideal",
                                  threshold=-math.log(p))
            vals.append(est.p_hat)
        se = math.sqrt(variance_p(p, 100) / len(vals))
        assert abs(np.mean(vals) - p) < 3 * se

    def test_result_fields_consistent(self):
        bench = get_benchmark("toy-uniform")
        est = run_probability(bench.ls, 20, 3, seed=2, hazard=bench.hazard,
                              mode="ideal", threshold=0.99)
        assert est.p_hat == pytest.approx(estimate_p(est.m_total, 3, 20))
        assert est.n_calls == sum(est.per_worker_calls)
        assert len(est.per_worker_calls) == 3
        assert est.ci[0] < est.p_hat * math.exp(-stats.norm.ppf(0.975) ** 2 / 120) < est.ci[1]
        data = est.to_dict()
        assert set(data) == {"p_hat", "ci", "M", "K", "N", "n_calls",
                             "per_worker_calls", "seed"}

    def test_small_population_warns(self):
        bench = get_benchmark("toy-uniform")
        with pytest.warns(UserWarning):
            run_probability(bench.ls, 5, 2, seed=1, hazard=bench.hazard,
                            mode="ideal", threshold=0.9)

    def test_log_estimate_approximately_normal(self):
        # in exact-sampling mode log p_hat is asymptotically normal with
        # variance -log p / N_total
        from splitmove.stats_checks import ks_test

        bench = get_benchmark("toy-exp")
        p, n_tot = 1e-6, 1000
        t = -math.log(p)
        logs = []
        for r in range(400):
            est = run_probability(bench.ls, n_tot, 1, seed=59, base_key=(r,),
                                  hazard=bench.hazard, mode="ideal", threshold=t)
            logs.append(math.log(est.p_hat))
        z = (np.array(logs) - math.log(p)) / math.sqrt(t / n_tot)
        assert ks_test(z, stats.norm.cdf) > 0.01

    def test_mcmc_watermark_mild_target(self):
        # cheap MCMC end-to-end check at q = 0.6 (p ~ 4.7e-3)
        from splitmove.limit_states import watermark_analytic_p

        p_true = watermark_analytic_p(20, 0.6)
        vals = []
        for r in range(30):
            bench = get_benchmark("watermark")
            est = run_probability(bench.ls, 25, 2, seed=31, base_key=(r,),
                                  threshold=0.6)
            vals.append(est.p_hat)
        mean = float(np.mean(vals))
        se = math.sqrt(variance_p(p_true, 50) / len(vals))
        assert abs(mean - p_true) < 4 * se + 0.1 * p_true


class TestCostModels:
    def test_t_mc_value(self):
        cm = CostModel(p=1e-3, delta=0.1, n_cores=10)
        assert t_mc(cm) == math.ceil(1 / (10 * 0.01 * 1e-3))

    def test_delta_ms_recovers_limit(self):
        # p0 = 1 - 1/N approaches the moving-particles CV as N grows
        p, n = 1e-5, 10 ** 5
        val = delta_sq_ms(p, 1.0 - 1.0 / n, n)
        assert abs(val / (-math.log(p) / n) - 1.0) < 1e-3

    def test_optimal_p0_consistency(self):
        cm = CostModel(p=1e-6, delta=0.1, n_cores=100, burn_in=20)
        star = optimal_p0(cm)
        assert 0.0 < star < 1.0
        t_star = t_ms(cm, star)
        for p0 in np.arange(0.1, 0.95, 0.1):
            assert t_ms(cm, float(p0)) >= t_star * (1.0 - 1e-9)

    def test_t_par_expected_reference(self):
        # leading term 2000 * log(1/p) when delta^2 = -log p / 1000
        p = 4.704e-11
        cm = CostModel(p=p, delta=math.sqrt(-math.log(p) / 1000), n_cores=10,
                       burn_in=20)
        lead = 20 * math.log(p) ** 2 / (10 * cm.delta ** 2)
        assert lead == pytest.approx(47_560.0, rel=1e-3)
        full = t_par_expected(cm)
        assert full > lead
        evt = math.sqrt(10 * cm.delta ** 2 / math.log(p) ** 2) * math.sqrt(2 * math.log(10))
        expected = lead * (1 + evt + 1 / (20 * math.log(1 / p)))
        assert full == pytest.approx(expected, rel=1e-12)

    def test_crossover_band(self):
        assert t_par_over_t_mc(1e-3, 20) == pytest.approx(0.9543, rel=1e-3)
        assert t_par_over_t_mc(1e-3, 20) < 1.0
        assert t_par_over_t_mc(1e-2, 20) > 1.0

    def test_planner_error_when_no_root(self):
        with pytest.raises((PlannerError, InvalidConfigError)):
            optimal_p0(CostModel(p=0.9, delta=1e6, n_cores=10 ** 9))
