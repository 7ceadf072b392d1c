"""Empirical base constant C' and reduced ratios along one axis of a bundled plan.

Writes ``<plan>.sweep-<axis>.csv`` for constant-versus-axis plots.

    python3 scripts/sweep_constants.py --axis n --values 512,1024,2048
    python3 scripts/sweep_constants.py --axis p --values 1/4,1/2,1
"""
import argparse
import dataclasses

from csreduce.cli import bundled_plan
from csreduce.harness import SWEEP_AXES, read_plan, sweep


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--plan", default="corollary-small-p.plan")
    parser.add_argument("--axis", choices=SWEEP_AXES, default="n")
    parser.add_argument("--values", default="512,1024,2048")
    parser.add_argument("--calibration-trials", type=int, default=100)
    parser.add_argument("--evaluation-trials", type=int, default=100)
    parser.add_argument("--out", default="runs")
    args = parser.parse_args()
    plan = read_plan(bundled_plan(args.plan) or args.plan)
    plan = dataclasses.replace(plan, calibration_trials=args.calibration_trials,
                               evaluation_trials=args.evaluation_trials, exact_trials=0)
    results = sweep(plan, args.axis, args.values.split(","), output_dir=args.out)
    print(f"{args.axis:>8} {'C_prime':>10} {'target':>9} {'max_ratio':>10} {'predicted_C':>12} {'fail_rate':>9}")
    for value, report in results:
        c = report["calibration"]["c_prime"]
        for t in report["targets"]:
            print(f"{value:>8} {c:>10.4g} {'l' + t['r'] + '/l' + t['s']:>9} {t['max_ratio']:>10.4g} "
                  f"{t['predicted_C']:>12.4g} {t['fail_rate']:>9.3f}")
    ratios = [r["calibration"]["c_prime"] for _, r in results]
    print(f"C' spread across {args.axis}: {max(ratios) / min(ratios):.2f}x")
    return 0 if all(r["passed"] for _, r in results) else 1


if __name__ == "__main__":
    raise SystemExit(main())
