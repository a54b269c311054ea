"""Command-line interface.

Subcommands: `prob` (failure-probability estimation), `quantile`
(extreme-quantile estimation, two-pass or sequential), `doe` (first
design of experiments reaching the failure domain), `plan` (computing-time
models) and `replicate` (replicated studies from a JSON config).

Exit codes: 0 on success, 2 when a two-pass quantile run fell short of
events with top-up disabled, 1 on any other error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .doe import build_doe, expected_doe_calls
from .experiments import ExperimentConfig, replicate
from .kernels import KernelConfig
from .limit_states import BENCHMARK_IDS, get_benchmark
from .probability import (CostModel, optimal_p0, run_probability, t_mc, t_ms,
                          t_par_expected, t_par_over_t_mc)
from .quantile import (ShortfallError, run_quantile_sequential,
                       run_quantile_two_pass)


def _add_kernel_args(sub):
    sub.add_argument("--burn-in", type=int, default=20,
                     help="kernel transitions per conditional resampling")
    sub.add_argument("--sigma", type=float, default=0.3, help="proposal scale")
    sub.add_argument("--kernel", choices=("direct_gaussian", "metropolis_hastings"),
                     default="direct_gaussian")


def _add_run_args(sub):
    sub.add_argument("--benchmark", required=True, choices=BENCHMARK_IDS)
    sub.add_argument("--n", type=int, default=100, help="particles per worker")
    sub.add_argument("--workers", type=int, default=10)
    sub.add_argument("--alpha", type=float, default=0.05)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--ideal", action="store_true",
                     help="exact conditional sampling (needs analytic hazard)")
    sub.add_argument("--out", default=None, help="write the JSON result here")
    _add_kernel_args(sub)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitmove",
        description="Rare-event estimation by moving particles")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p_prob = subs.add_parser("prob", help="estimate a failure probability")
    _add_run_args(p_prob)
    p_prob.add_argument("--q", type=float, default=None,
                        help="override the benchmark failure threshold")

    p_quant = subs.add_parser("quantile", help="estimate an extreme quantile")
    _add_run_args(p_quant)
    p_quant.add_argument("--mode", choices=("2pass", "seq"), default="2pass")
    p_quant.add_argument("--p", type=float, required=True,
                         help="target exceedance probability")
    p_quant.add_argument("--alpha-risk", type=float, default=None,
                         help="first-pass shortfall risk (default: --alpha)")
    p_quant.add_argument("--no-topup", action="store_true",
                         help="fail instead of restarting on a shortfall")

    p_doe = subs.add_parser("doe", help="build a first design of experiments")
    p_doe.add_argument("--benchmark", required=True, choices=BENCHMARK_IDS)
    p_doe.add_argument("--n-fail", type=int, default=10)
    p_doe.add_argument("--seed", type=int, default=0)
    p_doe.add_argument("--out", default=None, help="write the design CSV here")
    p_doe.add_argument("--gp-out", default=None,
                       help="write the fitted GP hyperparameters (JSON) here")
    _add_kernel_args(p_doe)

    p_plan = subs.add_parser("plan", help="computing-time models")
    p_plan.add_argument("--p", type=float, required=True)
    p_plan.add_argument("--delta", type=float, default=0.1,
                        help="target coefficient of variation")
    p_plan.add_argument("--workers", type=int, default=100)
    p_plan.add_argument("--burn-in", type=int, default=20)
    p_plan.add_argument("--p0", type=float, default=0.1,
                        help="per-level probability of the splitting baseline")
    p_plan.add_argument("--out", default=None)

    p_rep = subs.add_parser("replicate", help="replicated study from a config")
    p_rep.add_argument("--config", required=True, help="JSON config file")
    p_rep.add_argument("--reps", type=int, default=None,
                       help="override the config replication count")
    p_rep.add_argument("--out", default=None, help="override the CSV output path")
    p_rep.add_argument("--jobs", type=int, default=1,
                       help="process-level parallelism (results unchanged)")
    return parser


def _emit(result_dict, out, stream):
    text = json.dumps(result_dict, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    print(text, file=stream)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ShortfallError as exc:
        print(f"shortfall: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:   # surface a clean message, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "prob":
        bench = get_benchmark(args.benchmark)
        cfg = KernelConfig(sigma=args.sigma, burn_in=args.burn_in, kind=args.kernel)
        est = run_probability(
            bench.ls, args.n, args.workers, kernel_cfg=cfg, alpha=args.alpha,
            seed=args.seed, hazard=bench.hazard,
            mode="ideal" if args.ideal else "mcmc", threshold=args.q)
        _emit(est.to_dict(), args.out, sys.stdout)
        return 0

    if args.command == "quantile":
        bench = get_benchmark(args.benchmark)
        cfg = KernelConfig(sigma=args.sigma, burn_in=args.burn_in, kind=args.kernel)
        alpha_risk = args.alpha if args.alpha_risk is None else args.alpha_risk
        runner = run_quantile_two_pass if args.mode == "2pass" else run_quantile_sequential
        kwargs = dict(alpha=alpha_risk, kernel_cfg=cfg, seed=args.seed,
                      hazard=bench.hazard, mode="ideal" if args.ideal else "mcmc")
        if args.mode == "2pass":
            kwargs["topup"] = not args.no_topup
        est = runner(bench.ls, args.p, args.n, args.workers, **kwargs)
        _emit(est.to_dict(), args.out, sys.stdout)
        return 0

    if args.command == "doe":
        bench = get_benchmark(args.benchmark)
        cfg = KernelConfig(sigma=args.sigma, burn_in=args.burn_in, kind=args.kernel)
        result = build_doe(bench.ls, args.n_fail, kernel_cfg=cfg, seed=args.seed)
        if args.out:
            result.to_csv(args.out)
        if args.gp_out:
            with open(args.gp_out, "w") as fh:
                fh.write(result.model.to_json(indent=2) + "\n")
        summary = {
            "benchmark": args.benchmark,
            "n_fail": int(result.is_failure.sum()),
            "n_calls": result.n_calls,
            "per_chain_moves": result.per_chain_moves,
            "capped_chains": result.capped_chains,
        }
        if bench.reference_p:
            summary["expected_calls"] = expected_doe_calls(
                bench.ls.dim, args.n_fail, bench.reference_p)
        print(json.dumps(summary, indent=2))
        return 0 if not result.capped_chains else 1

    if args.command == "plan":
        cm = CostModel(p=args.p, delta=args.delta, n_cores=args.workers,
                       burn_in=args.burn_in, p0=args.p0)
        plan = {
            "t_mc": t_mc(cm),
            "t_ms": t_ms(cm),
            "t_par_expected": t_par_expected(cm),
            "optimal_p0": optimal_p0(cm),
            "t_ms_at_optimal_p0": t_ms(cm, optimal_p0(cm)),
            "t_par_over_t_mc": t_par_over_t_mc(args.p, args.burn_in),
        }
        _emit(plan, args.out, sys.stdout)
        return 0

    if args.command == "replicate":
        with open(args.config) as fh:
            config = ExperimentConfig.from_json(fh.read())
        if args.reps is not None:
            config.reps = args.reps
        if args.out is not None:
            config.output = args.out
        summary = replicate(config, jobs=args.jobs)
        print(json.dumps({
            "reps": len(summary.estimates),
            "quartiles": list(summary.quartiles),
            "whiskers": list(summary.whiskers),
            "mean_calls": sum(summary.per_rep_calls) / len(summary.per_rep_calls),
        }, indent=2))
        return 0

    raise ValueError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
