"""Desk-scale l_{1/2}/l_{1/2} recovery from CountSketch heavy hitters, fresh sketch per trial.

    python3 scripts/run_nonuniform_small_p.py --out runs
"""
import argparse
import json

from csreduce.cli import bundled_plan
from csreduce.harness import read_plan, run_plan


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    plan = read_plan(bundled_plan("nonuniform-small-p.plan"))
    report, _ = run_plan(plan, output_dir=args.out, threads=args.threads)
    print(json.dumps({k: report[k] for k in ("calibration", "base", "targets", "passed")}, indent=2))
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    raise SystemExit(main())
