"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are repeated in the terminal summary under "acceptance criteria".
"""
import itertools
import time
from fractions import Fraction

import numpy as np
import pytest

from csreduce import quasinorm as qn
from csreduce.base_recovery import CountSketchRecoverer
from csreduce.cli import bundled_plan
from csreduce.facts import CHECKS, run_checks
from csreduce.harness import read_plan, run_plan
from csreduce.measurement import EnsembleKind, MeasurementEnsemble, SignalModel, generate_signal, measure, realize
from csreduce.reduction import ReductionConfig, check_implication, project_support, verify_proof_chain

from .pairs import draw_pair

HALF = Fraction(1, 2)
RTOL = 1e-9


def _median_times(funcs, runs=20):
    """Median wall time of each callable, interleaving the runs so drifting
    machine load hits every size alike."""
    for f in funcs:
        f()
    times = np.zeros((runs, len(funcs)))
    for r in range(runs):
        for j, f in enumerate(funcs):
            t0 = time.perf_counter()
            f()
            times[r, j] = time.perf_counter() - t0
    return np.median(times, axis=0)


# 1. inequality suite

def test_criterion_1_inequality_suite(criterion):
    t0 = time.perf_counter()
    counts, failure = run_checks(10_000, seed=20161101, max_n=64)
    elapsed = time.perf_counter() - t0
    ok = failure is None and all(c == 10_000 for c in counts.values()) and elapsed < 60
    detail = f"{len(counts)} checks x 10^4 cases, rtol {qn.RTOL:g}, " + (
        "0 violations" if failure is None else f"violation in {failure['check']}") + f", {elapsed:.1f}s"
    assert set(counts) == set(CHECKS)
    assert criterion(1, "quasinorm inequality suite", ok, detail), failure


# 2. oracle equivalence

def _exhaustive_sigma(v, k, q):
    best = np.inf
    for S in itertools.combinations(range(v.size), k):
        r = v.copy()
        r[list(S)] = 0.0
        best = min(best, qn.lp_norm(r, q))
    return best


def test_criterion_2_oracle_equivalence(criterion):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    sigma_bad = head_bad = cases = 0
    for q in (0.5, 1.0, 2.0):
        for _ in range(300):
            n = int(rng.integers(1, 13))
            k = int(rng.integers(0, min(4, n) + 1))
            v = rng.standard_normal(n) * rng.integers(0, 3, n) if rng.random() < 0.3 else rng.standard_normal(n)
            sigma_bad += qn.sigma_k(v, k, q) != _exhaustive_sigma(v, k, q)
            cases += 1
    for p in (0.5, 1.0, 2.0):
        for _ in range(500):
            n = int(rng.integers(1, 13))
            kappa = int(rng.integers(0, min(4, n) + 1))
            w = rng.standard_normal(n) * 10.0 ** rng.uniform(-3, 3)
            # the best approximant on a fixed support S is w_S itself
            best = _exhaustive_sigma(w, kappa, p)
            head_bad += qn.lp_norm(w - qn.head(w, kappa), p) != best
    elapsed = time.perf_counter() - t0
    ok = sigma_bad == 0 and head_bad == 0 and elapsed < 60
    detail = (f"{cases} sigma_k cases, {sigma_bad} mismatches; 1500 head cases, {head_bad} mismatches; "
              f"{elapsed:.1f}s")
    assert criterion(2, "sigma_k and head match exhaustive search exactly", ok, detail)


# 3 and 7. per-trial implication and proof chain

def _calibrate(p, q, level, rng, pairs=200):
    ratios = []
    for _ in range(pairs):
        x, w, k = draw_pair(rng)
        kappa = 2 * k if level == "2k" else k
        denom = float(k) ** (1 / p - 1 / q) * qn.sigma_k(x, kappa, q)
        if denom > 0:
            ratios.append(qn.lp_norm(x - w, p) / denom)
    return float(np.median(ratios)), float(np.max(ratios))


def _implication_suite(p, q, r, s, level, seed, pairs=1000):
    """Fuzz ``pairs`` (x, w) at a calibrated C' and at each pair's tight C'."""
    rng = np.random.default_rng(seed)
    # the median makes the hypothesis fail on part of the pairs, so both
    # the vacuous and the active side of the implication are exercised
    c_med, c_max = _calibrate(p, q, level, rng)
    stats = dict(hyp=0, violations=0, chain_bad=0, exceptions=0)
    for _ in range(pairs):
        x, w, k = draw_pair(rng)
        try:
            cfg = ReductionConfig(k, p, q, r, s, level)
            for c in (c_med, c_max):
                imp = check_implication(x, w, cfg, c_prime=c)
                ledger = verify_proof_chain(x, w, k, p, q, r, s, c_prime=c, projection_level=level)
                stats["hyp"] += imp.hypothesis
                stats["violations"] += not imp.ok
                stats["chain_bad"] += not ledger.all_hold or ledger.hypothesis_holds != imp.hypothesis
            tight = verify_proof_chain(x, w, k, p, q, r, s, projection_level=level)
            stats["chain_bad"] += not tight.all_hold
        except Exception:  # any exception fails the criterion
            stats["exceptions"] += 1
    stats.update(c_med=c_med, c_max=c_max)
    return stats


def _summary(stats, pairs):
    return (f"{pairs} pairs, C' in {{{stats['c_med']:.3g}, {stats['c_max']:.3g}}}, "
            f"{stats['hyp']}/{2 * pairs} hypotheses held, {stats['violations']} violations, "
            f"{stats['chain_bad']} broken chains, {stats['exceptions']} exceptions")


@pytest.mark.parametrize("p, q, r, s", [(2, 1, 1, 1), (2, 1, HALF, HALF), (2, 2, 2, 1), (2, 1, 2, 1)],
                         ids=["2-1-1-1", "2-1-half-half", "2-2-2-1", "2-1-2-1"])
def test_criterion_3_per_trial_implication(p, q, r, s, criterion):
    stats = _implication_suite(p, q, r, s, "2k", seed=hash((p, q, r, s)) % 2**32)
    ok = stats["violations"] == stats["chain_bad"] == stats["exceptions"] == 0 and stats["hyp"] > 0
    tup = ",".join(qn.format_exponent(e) for e in (p, q, r, s))
    assert criterion(3, f"implication and proof chain at (p,q,r,s)=({tup})", ok, _summary(stats, 1000))


def test_criterion_7_top_k_corollary(criterion):
    stats = _implication_suite(2, HALF, HALF, HALF, "k", seed=7)
    ok = stats["violations"] == stats["chain_bad"] == stats["exceptions"] == 0 and stats["hyp"] > 0
    assert criterion(7, "top-k projection at q=r=s=1/2", ok, _summary(stats, 1000))


# 4, 5 and 8. bundled plans

@pytest.fixture(scope="module")
def plan_runs(tmp_path_factory):
    runs = {}
    for name in ("corollary-small-p", "nonuniform-small-p"):
        plan = read_plan(bundled_plan(name + ".plan"))
        outs = []
        for attempt in range(2):
            out = tmp_path_factory.mktemp(f"{name}-{attempt}")
            t0 = time.perf_counter()
            report, _ = run_plan(plan, output_dir=str(out))
            outs.append((out, report, time.perf_counter() - t0))
        runs[name] = (plan, outs)
    return runs


@pytest.mark.slow
def test_criterion_4_corollary_small_p(plan_runs, criterion):
    plan, [(_, report, elapsed), _] = plan_runs["corollary-small-p"]
    rates = {f"l{t['r']}": t["fail_rate"] for t in report["targets"]}
    exact = report["exact"]["success_rate"]
    ok = (plan.n == 1024 and plan.k == 10 and plan.rows == 473
          and set(rates) == {"l1/2", "l1"} and all(v <= 0.05 for v in rates.values())
          and report["trials"] == {"calibration": 100, "evaluation": 200, "exact": 100}
          and exact >= 0.99 and report["errored"] == 0 and elapsed < 600)
    detail = (f"m={plan.rows}, C'={report['calibration']['c_prime']:.3g}, fail rates "
              + ", ".join(f"{k} {v:.3f}" for k, v in rates.items())
              + f", exact {report['exact']['successes']}/{report['exact']['trials']}, {elapsed:.1f}s")
    assert criterion(4, "corollary small-p at n=1024, k=10", ok, detail)


@pytest.mark.slow
def test_criterion_5_nonuniform_small_p(plan_runs, criterion):
    plan, [(_, report, elapsed), _] = plan_runs["nonuniform-small-p"]
    (t,) = report["targets"]
    ok = (plan.n == 4096 and plan.k == 10 and plan.rows == 1400 and not plan.uniform
          and (t["r"], t["s"]) == ("1/2", "1/2") and report["trials"]["evaluation"] == 200
          and t["fail_rate"] <= 0.05 and report["errored"] == 0 and elapsed < 300)
    detail = (f"m={plan.rows}, C'={report['calibration']['c_prime']:.3g}, predicted C={t['predicted_C']:.3g}, "
              f"fail rate {t['fail_rate']:.3f} over {report['trials']['evaluation']} trials "
              f"(base {report['base']['fail_rate']:.3f}), {elapsed:.1f}s")
    assert criterion(5, "nonuniform small-p with CountSketch at n=4096", ok, detail)


@pytest.mark.slow
def test_criterion_8_determinism(plan_runs, criterion):
    same = {}
    for name, (_, [(out_a, _, _), (out_b, _, _)]) in plan_runs.items():
        file = f"{name}.records.jsonl"
        a, b = (out_a / file).read_bytes(), (out_b / file).read_bytes()
        same[name] = (a == b and len(a) > 0, a.count(b"\n"))
    ok = all(v for v, _ in same.values())
    detail = ", ".join(f"{name}: {'identical' if v else 'DIFFERENT'} ({n} records)" for name, (v, n) in same.items())
    assert criterion(8, "bundled plans give byte-identical records", ok, detail)


# 6. runtime

def test_criterion_6_runtime(criterion):
    rng = np.random.default_rng(6)
    sizes = [2 ** e for e in range(16, 23)]
    vs = [rng.standard_normal(n) for n in sizes]
    t_sel = _median_times([lambda v=v: qn.top_support(v, 20) for v in vs])
    sel_steps = t_sel[1:] / t_sel[:-1]

    S = [2 ** e for e in range(10, 21)]
    parts = [(np.arange(s), rng.standard_normal(s)) for s in S]
    t_proj = _median_times([lambda i=i, v=v: project_support(i, v, 20) for i, v in parts])
    proj_steps = t_proj[1:] / t_proj[:-1]
    slope = np.polyfit(np.log2(S), np.log2(t_proj), 1)[0]

    # base recovery at n = 2^16: CountSketch heavy hitters reporting 4k
    n, k = 2 ** 16, 10
    phi = realize(MeasurementEnsemble(EnsembleKind.COUNT_SKETCH, n, 1, rows_r=7, buckets_b=20 * k))
    x, _ = generate_signal(SignalModel(n, k, tail_model="power_law", tail_param=0.5, seed=2))
    base = CountSketchRecoverer(phi, 7, 20 * k, 4 * k)
    y = measure(phi, x)
    idx, vals, _ = base.recover_support(y)
    t_base, t_over = _median_times([lambda: base.recover_support(y),
                                    lambda: project_support(idx, vals, 2 * k)])
    share = t_over / t_base

    ok = sel_steps.max() <= 2.5 and proj_steps.max() <= 2.5 and share <= 0.10
    detail = (f"top_support max step {sel_steps.max():.2f}x over n=2^16..2^22; "
              f"projection max step {proj_steps.max():.2f}x, slope {slope:.2f} over S=2^10..2^20; "
              f"overhead {100 * share:.3f}% of base at n=2^16")
    assert criterion(6, "selection and projection scale linearly", ok, detail)
