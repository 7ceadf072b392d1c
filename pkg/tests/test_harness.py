import csv
import dataclasses
import json

import numpy as np
import pytest

from csreduce import harness
from csreduce import quasinorm as qn
from csreduce.harness import (
    CSV_COLUMNS,
    PlanError,
    aggregate,
    parse_plan,
    read_plan,
    replay_trial,
    run_plan,
    sweep,
)
from csreduce.reduction import ExponentError

SMALL = """
name = small
master_seed = 7
n = 256
k = 4
algo = cosamp
m = auto
tail_model = power_law
tail_param = 1.5
tail_scale = 0.1
calibration_trials = 12
evaluation_trials = 16
exact_trials = 6
targets = 1/2:1/2, 1:1
"""


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    plan = parse_plan(SMALL)
    report, records = run_plan(plan, output_dir=str(out))
    return plan, report, records, out


# plan parsing

def test_parse_plan_fields():
    plan = parse_plan(SMALL)
    assert plan.master_seed == 7 and plan.m is None
    assert plan.targets == ((0.5, 0.5), (1.0, 1.0))
    assert plan.kappa == 8 and plan.uniform


def test_plan_text_round_trip():
    plan = parse_plan(SMALL)
    assert parse_plan(plan.to_text()) == plan
    assert parse_plan(plan.to_text()).digest() == plan.digest()


def test_digest_ignores_output_location():
    plan = parse_plan(SMALL)
    assert dataclasses.replace(plan, output_dir="elsewhere", threads=4).digest() == plan.digest()
    assert dataclasses.replace(plan, master_seed=8).digest() != plan.digest()


def test_count_suffix_resolves_against_k():
    plan = parse_plan(SMALL.replace("algo = cosamp", "algo = countsketch\nensemble = count_sketch\n"
                                    "rows_r = 5\nbuckets_b = 20k\nreport_sparsity = 4k")
                      .replace("m = auto\n", ""))
    assert plan.rows == 5 * 80 and not plan.uniform


@pytest.mark.parametrize("text, match", [
    (SMALL.replace("master_seed = 7", ""), "master_seed"),
    (SMALL + "colour = blue\n", "unknown key"),
    (SMALL + "k = 5\n", "duplicate"),
    (SMALL + "this line has no equals\n", "key = value"),
    (SMALL.replace("algo = cosamp", "algo = lasso"), "algo"),
    (SMALL.replace("n = 256", "n = lots"), "lots"),
    (SMALL.replace("targets = 1/2:1/2, 1:1", "targets = 1/2"), "r:s"),
])
def test_bad_plans_rejected(text, match):
    with pytest.raises(PlanError, match=match):
        parse_plan(text)


def test_invalid_target_exponents():
    with pytest.raises((PlanError, ExponentError)):
        parse_plan(SMALL.replace("targets = 1/2:1/2, 1:1", "targets = 3:1"))


def test_read_plan_missing_file(tmp_path):
    with pytest.raises(OSError):
        read_plan(tmp_path / "nope.plan")


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        run_plan(parse_plan(SMALL), output_dir=str(blocker / "sub"))


# phases and seeds

def test_phase_indices_are_disjoint():
    plan = parse_plan(SMALL)
    seen = []
    for _, start, count in plan.phases():
        seen += range(start, start + count)
    assert len(seen) == len(set(seen)) == 34
    seeds = {plan.trial_seed(i) for i in seen}
    assert len(seeds) == len(seen)


def test_records_cover_each_index_once(small_run):
    plan, _, records, _ = small_run
    assert [r["index"] for r in records] == list(range(34))
    assert [r["phase"] for r in records] == ["calibration"] * 12 + ["evaluation"] * 16 + ["exact"] * 6


# the report

def test_small_plan_passes(small_run):
    _, report, _, _ = small_run
    assert report["passed"] and report["errored"] == 0
    assert report["calibration"]["c_prime"] > 0
    assert report["exact"] == {"trials": 6, "successes": 6, "success_rate": 1.0}


def test_output_files(small_run):
    plan, report, records, out = small_run
    lines = (out / "small.records.jsonl").read_text().splitlines()
    assert [json.loads(line) for line in lines] == records
    on_disk = json.loads((out / "small.report.json").read_text())
    assert on_disk["plan_digest"] == plan.digest() and "timing" in on_disk
    with open(out / "small.report.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_COLUMNS and len(rows) == 3


def test_records_exclude_timings(small_run):
    _, _, records, _ = small_run
    assert all("timing" not in r and "time" not in json.dumps(r) for r in records)


def test_aggregate_is_order_independent(small_run):
    plan, report, records, _ = small_run
    shuffled = list(records)
    np.random.default_rng(0).shuffle(shuffled)
    expected = {k: v for k, v in report.items() if k != "timing"}
    assert aggregate(shuffled, plan) == expected


def test_aggregate_matches_reference(small_run):
    plan, report, records, _ = small_run
    calib = [r["base_ratio"] for r in records if r["phase"] == "calibration"]
    c_prime = max(calib)
    assert report["calibration"]["c_prime"] == c_prime
    evals = [r for r in records if r["phase"] == "evaluation"]
    for i, target in enumerate(report["targets"]):
        ratios = [r["targets"][i]["ratio"] for r in evals]
        assert target["max_ratio"] == max(ratios)
        assert target["median_ratio"] == float(np.median(ratios))
        assert target["p95_ratio"] == float(np.percentile(ratios, 95))
        fails = sum(not r["targets"][i]["holds"] for r in evals)
        assert target["fail_rate"] == fails / len(evals)
    base_fail = sum(not r["base_holds"] for r in evals)
    assert report["base"]["fail_rate"] == base_fail / len(evals)


def test_pass_flags_recomputable(small_run):
    plan, report, records, _ = small_run
    c_prime = report["calibration"]["c_prime"]
    for r in records:
        if r["phase"] != "evaluation":
            continue
        assert r["base_ratio"] == r["base_error"] / r["base_scale"] >= 0
        assert r["base_holds"] == qn.leq(r["base_error"], c_prime * r["base_scale"])
        for t in r["targets"]:
            assert t["ratio"] >= 0
            assert t["holds"] == qn.leq(t["error"], t["predicted_C"] * t["scale"])
            assert t["implication_ok"] == (t["holds"] or not r["base_holds"])


@pytest.mark.parametrize("phase_index", [0, 11, 12, 27, 28, 33])
def test_replay_reproduces_record(small_run, phase_index):
    plan, report, records, _ = small_run
    rec = records[phase_index]
    c_prime = None if rec["phase"] == "calibration" else report["calibration"]["c_prime"]
    assert replay_trial(plan, rec, c_prime) == rec


def test_identical_runs_are_byte_identical(small_run, tmp_path):
    plan, _, _, out = small_run
    run_plan(plan, output_dir=str(tmp_path), threads=3)
    name = "small.records.jsonl"
    assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_zero_evaluation_trials(tmp_path):
    plan = dataclasses.replace(parse_plan(SMALL), evaluation_trials=0, exact_trials=0)
    report, records = run_plan(plan, output_dir=str(tmp_path))
    assert len(records) == 12 and report["calibration"]["ratio_trials"] == 12
    assert report["base"]["fail_rate"] is None
    for t in report["targets"]:
        assert t["max_ratio"] is None and t["fail_rate"] is None
    assert report["passed"]


def test_erroring_trial_is_recorded(tmp_path, monkeypatch):
    plan = dataclasses.replace(parse_plan(SMALL), exact_trials=0)
    real = harness.generate_signal
    bad_seed = harness.derive_seed(plan.trial_seed(14), 0)

    def flaky(model):
        if model.seed == bad_seed:
            raise RuntimeError("boom")
        return real(model)

    monkeypatch.setattr(harness, "generate_signal", flaky)
    report, records = run_plan(plan, output_dir=str(tmp_path))
    assert len(records) == 28
    bad = records[14]
    assert bad["status"] == "errored" and "boom" in bad["error"]
    assert report["errored"] == 1
    assert all(t["failures"] >= 1 for t in report["targets"])


def test_nonuniform_plan_draws_fresh_matrices():
    plan = parse_plan(SMALL.replace("algo = cosamp", "algo = countsketch\nensemble = count_sketch\n"
                                    "rows_r = 5\nbuckets_b = 20k\nreport_sparsity = 4k")
                      .replace("m = auto\n", ""))
    ctx = harness._Context(plan)
    a, b = ctx.phi_for(plan.trial_seed(0)), ctx.phi_for(plan.trial_seed(1))
    assert (a != b).nnz > 0
    uni = harness._Context(parse_plan(SMALL))
    assert uni.phi_for(1) is uni.phi_for(2)


# sweeps

def test_single_point_sweep_equals_run_plan(small_run, tmp_path):
    plan, report, records, _ = small_run
    (value, swept), = sweep(plan, "n", [plan.n], output_dir=str(tmp_path))
    strip = lambda rep: {k: v for k, v in rep.items() if k not in ("timing", "plan", "plan_digest")}
    assert strip(swept) == strip(report)
    lines = (tmp_path / f"small.n={plan.n}.records.jsonl").read_text().splitlines()
    assert [json.loads(line) for line in lines] == records
    with open(tmp_path / "small.sweep-n.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_COLUMNS and len(rows) == 3


def test_sweep_n_constant_stable(tmp_path):
    plan = dataclasses.replace(parse_plan(SMALL), k=10, calibration_trials=40,
                               evaluation_trials=0, exact_trials=0)
    results = sweep(plan, "n", [512, 1024, 2048], output_dir=str(tmp_path))
    c = [rep["calibration"]["c_prime"] for _, rep in results]
    assert max(c) / min(c) < 2


def test_sweep_p_implications_hold(tmp_path):
    plan = dataclasses.replace(parse_plan(SMALL), exact_trials=0)
    results = sweep(plan, "p", ["1/4", "1/2", "1"], output_dir=str(tmp_path))
    for value, rep in results:
        (t,) = rep["targets"]
        assert t["r"] == value and t["implication_violations"] == 0
    assert (tmp_path / "small.p=1_4.records.jsonl").exists()


def test_sweep_rejects_unknown_axis(tmp_path):
    with pytest.raises(PlanError):
        sweep(parse_plan(SMALL), "delta", [0.1], output_dir=str(tmp_path))
