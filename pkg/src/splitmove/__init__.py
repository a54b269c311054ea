"""splitmove: parallel rare-event estimation by moving particles.

Each particle is repeatedly resampled conditionally above its own level,
so level crossings form a marked Poisson process after the integrated-
hazard time change.  The package provides the resulting probability and
quantile estimators, their confidence intervals and cost models, exact-
sampling oracle descents for distribution-level verification, and a
surrogate-assisted builder of first designs of experiments that reaches
the failure domain in about log(1/p) calls per failure point.
"""

__version__ = "0.1.0"

from .kernels import KernelConfig, direct_gaussian_step, mh_step, select_seed, transition
from .limit_states import (
    BENCHMARK_IDS,
    Benchmark,
    HazardView,
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
from .mover import (
    EventLog,
    IdealDescent,
    LevelStop,
    McmcDescent,
    MoveCountStop,
    descend_population,
    descend_population_kbatch,
    descend_single,
    ideal_descend,
    merge_logs,
)
from .probability import (
    CostModel,
    ProbEstimate,
    ci_p,
    cramer_rao_bound,
    estimate_p,
    optimal_p0,
    run_probability,
    t_mc,
    t_ms,
    t_par_expected,
    t_par_over_t_mc,
    variance_p,
)
from .quantile import (
    QuantileDiagnostics,
    QuantileEstimate,
    bias_bounds,
    choose_m0,
    diagnostics,
    ci_q,
    clt_sd,
    estimate_q,
    estimator_bias_bounds,
    expected_iters_two_pass,
    gamma_q,
    quantile_cov,
    run_quantile_sequential,
    run_quantile_two_pass,
    t_par_quantile,
)
from .doe import DoEResult, GPModel, build_doe, expected_doe_calls, fit_gp, surrogate_climb
from .harness import run_workers, stream
from .stats_checks import boxplot_summary, chi2_poisson_test, ks_2sample, ks_test
from .experiments import ExperimentConfig, replicate
