"""Command-line entry point: ``csreduce <subcommand> ...``.

Exit codes: 0 success, 1 an inequality or guarantee failed, 2 usage error
(bad flags, unreadable files, invalid exponents or plans).
"""
import argparse
import json
import logging
import os
import sys
from importlib import resources

import numpy as np

from . import quasinorm as qn
from .base_recovery import CoSaMPRecoverer, CountSketchRecoverer, GuaranteeSpec, IHTRecoverer
from .facts import run_checks
from .harness import BASE_EXPONENTS, SWEEP_AXES, PlanError, read_plan, run_plan, sweep
from .measurement import (
    EnsembleKind,
    SignalModel,
    derive_seed,
    generate_signal,
    measure,
    read_ensemble,
    read_vector,
    realize,
    write_vector,
)
from .reduction import ExponentError, ReductionConfig, reduce

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _exponent_pair(text):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected r,s (for example 1/2,1/2)")
    try:
        return tuple(qn.parse_exponent(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _range_pair(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected lo,hi") from None
    return lo, hi


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def bundled_plan(name):
    """Path of a plan shipped with the package, or ``None``."""
    ref = resources.files("csreduce") / "plans" / name
    return str(ref) if ref.is_file() else None


def _resolve_plan(path):
    if os.path.isfile(path):
        return read_plan(path)
    bundled = bundled_plan(os.path.basename(path))
    if bundled is None:
        raise UsageError(f"plan file {path!r} not found")
    return read_plan(bundled)


def cmd_verify_facts(args):
    counts, failure = run_checks(args.cases, args.seed, args.max_n)
    for name, count in counts.items():
        print(f"{name:<22} {count:>8} cases")
    if failure:
        print(f"VIOLATION in {failure['check']}: lhs={failure['lhs']!r} > rhs={failure['rhs']!r}")
        print(json.dumps(failure, indent=2))
        return EXIT_FAIL
    print(f"all {sum(counts.values())} cases hold (rtol {qn.RTOL:g})")
    return EXIT_OK


def cmd_gen_signal(args):
    model = SignalModel(args.n, args.k, args.head_range, args.tail, args.tail_param,
                        args.tail_scale, args.noise_sigma, seed=derive_seed(args.seed, 0))
    x, truth = generate_signal(model)
    write_vector(args.out, x)
    summary = ", ".join(f"sigma_k(x)_{qn.format_exponent(q)}={v:.6g}" for q, v in truth.sigma.items())
    print(f"wrote x (n={args.n}, k={args.k}) to {args.out}; {summary}")
    if args.ensemble:
        ens = read_ensemble(args.ensemble)
        if ens.n != args.n:
            raise UsageError(f"ensemble has n={ens.n}, signal has n={args.n}")
        y = measure(realize(ens), x, args.noise_sigma, seed=derive_seed(args.seed, 1))
        write_vector(args.y, y)
        print(f"wrote y (m={y.size}) to {args.y}")
    return EXIT_OK


def _build_recoverer(algo, phi, ens, sparsity, guarantee, args):
    if algo == "cosamp":
        return CoSaMPRecoverer(phi, sparsity, iters=args.iters, guarantee=guarantee)
    if algo == "iht":
        return IHTRecoverer(phi, sparsity, iters=args.iters, guarantee=guarantee)
    if ens.kind is not EnsembleKind.COUNT_SKETCH:
        raise UsageError("countsketch recovery needs a count_sketch ensemble")
    return CountSketchRecoverer(phi, ens.rows_r, ens.buckets_b, sparsity, guarantee=guarantee)


def cmd_recover(args):
    ens = read_ensemble(args.ensemble)
    y = read_vector(args.y)
    if y.size != ens.m:
        raise UsageError(f"measurement has length {y.size}, ensemble has m={ens.m}")
    p, q = BASE_EXPONENTS[args.algo]
    config = None
    if args.reduce:
        r, s = args.reduce
        config = ReductionConfig(args.k, p, q, r, s, args.projection, args.c_prime)
    if args.k == 0:
        write_vector(args.out, np.zeros(ens.n))
        print(f"k=0: wrote the zero vector to {args.out}")
        return EXIT_OK
    if args.algo != "countsketch" and ens.kind is not EnsembleKind.DENSE_GAUSSIAN:
        raise UsageError(f"{args.algo} expects a dense_gaussian ensemble")

    phi = realize(ens)
    if config is None:
        base = _build_recoverer(args.algo, phi, ens, args.k, None, args)
        xhat = base.recover(y)
    else:
        level = config.projection_level
        spec = GuaranteeSpec(p, q, args.k, C=args.c_prime, tail_level=level)
        base = _build_recoverer(args.algo, phi, ens, config.kappa, spec, args)
        reduced = reduce(base, config)
        xhat = reduced.recover(y)
        C = config.predicted_constant()
        print(f"reduced l{qn.format_exponent(p)}/l{qn.format_exponent(q)} -> "
              f"l{qn.format_exponent(r)}/l{qn.format_exponent(s)}: kept {config.kappa} coordinates; "
              f"predicted constant {C:.6g} (C'={args.c_prime:g})")
    write_vector(args.out, xhat)
    print(f"wrote recovered vector ({qn.support_size(xhat)} nonzeros) to {args.out}")
    return EXIT_OK


def _print_report(report):
    cal = report["calibration"]
    print(f"plan {report['plan']}  digest {report['plan_digest'][:12]}")
    c = cal["c_prime"]
    print(f"  calibration: {cal['ratio_trials']} ratios, C'={c:.6g}" if c is not None
          else "  calibration: no ratio trials")
    for t in report["targets"]:
        if t["fail_rate"] is None:
            print(f"  l{t['r']}/l{t['s']}: no evaluation trials")
            continue
        print(f"  l{t['r']}/l{t['s']}: predicted C={t['predicted_C']:.6g} max ratio={t['max_ratio']:.6g} "
              f"fail rate={t['fail_rate']:.3f} (delta {report['delta']}) "
              f"implication violations={t['implication_violations']}")
    ex = report["exact"]
    if ex["trials"]:
        print(f"  exact recovery: {ex['successes']}/{ex['trials']}")
    print("  PASS" if report["passed"] else "  FAIL")


def cmd_run(args):
    plan = _resolve_plan(args.plan)
    report, _ = run_plan(plan, output_dir=args.out, threads=args.threads)
    _print_report(report)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_sweep(args):
    plan = _resolve_plan(args.plan)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values is empty")
    results = sweep(plan, args.axis, values, output_dir=args.out, threads=args.threads)
    for value, report in results:
        print(f"{args.axis}={value}")
        _print_report(report)
    return EXIT_OK if all(r["passed"] for _, r in results) else EXIT_FAIL


def build_parser():
    parser = argparse.ArgumentParser(prog="csreduce", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-facts", help="fuzz the quasinorm inequalities")
    p.add_argument("--cases", type=_nonneg_int, default=10_000, help="cases per check")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-n", type=int, default=64)
    p.set_defaults(func=cmd_verify_facts)

    p = sub.add_parser("gen-signal", help="draw a test signal (and optionally measure it)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--tail", choices=["none", "gaussian", "power_law"], default="none")
    p.add_argument("--tail-param", type=float, default=0.0)
    p.add_argument("--tail-scale", type=float, default=1.0)
    p.add_argument("--head-range", type=_range_pair, default=(1.0, 10.0))
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--out", required=True, help="CSV for x")
    p.add_argument("--ensemble", help="descriptor file; also writes y = phi x + e")
    p.add_argument("--y", help="CSV for y (with --ensemble)")
    p.set_defaults(func=cmd_gen_signal)

    p = sub.add_parser("recover", help="recover x from y, optionally through the reduction")
    p.add_argument("--y", required=True)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--algo", choices=sorted(BASE_EXPONENTS), required=True)
    p.add_argument("--k", type=_nonneg_int, required=True)
    p.add_argument("--reduce", type=_exponent_pair, metavar="R,S")
    p.add_argument("--projection", choices=["2k", "k"], default="2k")
    p.add_argument("--c-prime", type=float, default=1.0, help="base constant for the predicted constant")
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recover)

    for name, func in (("run", cmd_run), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help=f"{name} an experiment plan")
        p.add_argument("--plan", required=True, help="plan file or bundled plan name")
        p.add_argument("--out", help="output directory (default: the plan's output_dir)")
        p.add_argument("--threads", type=int, default=None)
        if name == "sweep":
            p.add_argument("--axis", choices=SWEEP_AXES, required=True)
            p.add_argument("--values", required=True, help="comma-separated grid")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gen-signal" and args.ensemble and not args.y:
        parser.error("--ensemble needs --y")
    try:
        return args.func(args)
    except (UsageError, ExponentError, PlanError) as exc:
        print(f"csreduce: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"csreduce: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
