"""Experiment plans, per-trial records and aggregate reports.

A plan runs in three phases over disjoint trial indices:

* calibration: ratios of the base scheme's declared guarantee; their
  maximum is the empirical base constant C';
* evaluation: fresh signals; the reduced scheme is scored against the
  constant predicted from C' for each target (r, s);
* exact: noiseless, exactly k-sparse signals scored by relative error.

Trial ``i`` draws everything from ``derive_seed(master_seed, 1, i)``, so a
stored record can be regenerated from the plan and its index. Records are
JSON lines with sorted keys and no timing data, which makes them
byte-identical across runs; timings go to the report only.
"""
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import quasinorm as qn
from .base_recovery import (
    CoSaMPRecoverer,
    CountSketchRecoverer,
    GuaranteeSpec,
    IHTRecoverer,
)
from .measurement import (
    EnsembleKind,
    MeasurementEnsemble,
    SignalModel,
    TailModel,
    derive_seed,
    gaussian_rows,
    generate_signal,
    measure,
    realize,
)
from .reduction import ReductionConfig, check_implication, project_support, validate_exponents

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentPlan",
    "PlanError",
    "BASE_EXPONENTS",
    "read_plan",
    "parse_plan",
    "run_trial",
    "run_plan",
    "aggregate",
    "sweep",
    "SWEEP_AXES",
    "CSV_COLUMNS",
]

#: (p, q) of the guarantee each base algorithm is declared to satisfy.
BASE_EXPONENTS = {"cosamp": (2.0, 1.0), "iht": (2.0, 1.0), "countsketch": (2.0, 2.0)}
SWEEP_AXES = ("n", "k", "m", "p")
CSV_COLUMNS = ["axis", "value", "p", "q", "r", "s", "max_ratio", "median_ratio",
               "p95_ratio", "fail_rate", "predicted_C"]

_ENSEMBLE_TAG = 0
_TRIAL_TAG = 1


class PlanError(ValueError):
    pass


def _count(value, k):
    """Resolve ``"20k"`` style counts against the sparsity `k`."""
    if value is None:
        return None
    text = str(value).strip().lower()
    if text.endswith("k"):
        factor = text[:-1].strip() or "1"
        return int(round(float(factor) * k))
    return int(text)


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything needed to reproduce an experiment; see ``plans/*.plan``."""

    name: str
    master_seed: int
    n: int
    k: int
    algo: str = "cosamp"
    ensemble: str = "dense_gaussian"
    m: Optional[int] = None
    rows_r: Optional[int] = None
    buckets_b: Optional[str] = None
    report_sparsity: Optional[str] = None
    iters: int = 50
    tol: float = 1e-7
    step: float = 0.65
    head_range: tuple = (1.0, 10.0)
    tail_model: str = "power_law"
    tail_param: float = 1.5
    tail_scale: float = 1.0
    noise_sigma: float = 0.0
    calibration_trials: int = 100
    evaluation_trials: int = 200
    exact_trials: int = 0
    targets: tuple = ((1.0, 1.0),)
    projection: str = "2k"
    delta: float = 0.05
    exact_success_min: float = 0.99
    exact_atol: float = 1e-6
    output_dir: str = "runs"
    threads: int = 1

    def __post_init__(self):
        if self.algo not in BASE_EXPONENTS:
            raise PlanError(f"unknown algo {self.algo!r}; choose from {sorted(BASE_EXPONENTS)}")
        try:
            kind = EnsembleKind(self.ensemble)
        except ValueError:
            raise PlanError(f"unknown ensemble {self.ensemble!r}") from None
        if (self.algo == "countsketch") != (kind is EnsembleKind.COUNT_SKETCH):
            raise PlanError("countsketch recovery goes with the count_sketch ensemble and only with it")
        if kind is EnsembleKind.COUNT_SKETCH and not (self.rows_r and self.buckets_b):
            raise PlanError("count_sketch plans need rows_r and buckets_b")
        if not 1 <= self.k <= self.n:
            raise PlanError("need 1 <= k <= n")
        if min(self.calibration_trials, self.evaluation_trials, self.exact_trials) < 0:
            raise PlanError("trial counts must be non-negative")
        if not 0 < self.delta < 1:
            raise PlanError("delta must lie in (0, 1)")
        if self.threads < 1:
            raise PlanError("threads must be positive")
        if not self.targets:
            raise PlanError("plan needs at least one target r:s")
        p, q = BASE_EXPONENTS[self.algo]
        for r, s in self.targets:
            try:
                validate_exponents(p, q, r, s, self.projection)
            except ValueError as exc:
                raise PlanError(f"target r={r}, s={s}: {exc}") from None
        TailModel(self.tail_model)

    # derived quantities

    @property
    def kappa(self):
        return 2 * self.k if self.projection == "2k" else self.k

    @property
    def uniform(self):
        return self.algo != "countsketch"

    @property
    def base_exponents(self):
        return BASE_EXPONENTS[self.algo]

    @property
    def rows(self):
        if self.ensemble == EnsembleKind.COUNT_SKETCH.value:
            return self.rows_r * _count(self.buckets_b, self.k)
        return self.m if self.m is not None else gaussian_rows(self.n, self.kappa)

    def signal_model(self, seed=0, exact=False):
        if exact:
            return SignalModel(self.n, self.k, self.head_range, seed=seed)
        return SignalModel(self.n, self.k, self.head_range, self.tail_model,
                           self.tail_param, self.tail_scale, self.noise_sigma, seed)

    def ensemble_for(self, seed):
        if self.ensemble == EnsembleKind.COUNT_SKETCH.value:
            return MeasurementEnsemble(EnsembleKind.COUNT_SKETCH, self.n, seed,
                                       rows_r=self.rows_r, buckets_b=_count(self.buckets_b, self.k))
        return MeasurementEnsemble(EnsembleKind.DENSE_GAUSSIAN, self.n, seed, m=self.rows)

    def base_guarantee(self, C=None):
        p, q = self.base_exponents
        delta = None if self.uniform else self.delta
        return GuaranteeSpec(p, q, self.k, C=C, tail_level=self.projection, delta=delta)

    def build_base(self, phi, C=None):
        spec = self.base_guarantee(C)
        if self.algo == "cosamp":
            return CoSaMPRecoverer(phi, self.kappa, self.iters, self.tol, guarantee=spec)
        if self.algo == "iht":
            return IHTRecoverer(phi, self.kappa, self.iters, self.step, guarantee=spec)
        report = _count(self.report_sparsity, self.k) if self.report_sparsity else self.kappa
        return CountSketchRecoverer(phi, self.rows_r, _count(self.buckets_b, self.k), report, guarantee=spec)

    def configs(self, c_prime=None):
        p, q = self.base_exponents
        return [ReductionConfig(self.k, p, q, r, s, self.projection, c_prime) for r, s in self.targets]

    def trial_seed(self, index):
        return derive_seed(self.master_seed, _TRIAL_TAG, index)

    def phases(self):
        """``(phase, first_index, count)`` for each phase, in order."""
        nc, ne = self.calibration_trials, self.evaluation_trials
        return [("calibration", 0, nc), ("evaluation", nc, ne), ("exact", nc + ne, self.exact_trials)]

    # serialization

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["head_range"] = list(self.head_range)
        out["targets"] = [[qn.format_exponent(r), qn.format_exponent(s)] for r, s in self.targets]
        return out

    def digest(self):
        body = {k: v for k, v in self.to_dict().items() if k not in ("output_dir", "threads")}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()

    def to_text(self):
        lines = []
        for key, value in self.to_dict().items():
            if value is None:
                continue
            if key == "head_range":
                value = ", ".join(repr(v) for v in value)
            elif key == "targets":
                value = ", ".join(f"{r}:{s}" for r, s in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


_PLAN_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentPlan)}
_INT_KEYS = {"master_seed", "n", "k", "rows_r", "iters", "calibration_trials",
             "evaluation_trials", "exact_trials", "threads"}
_FLOAT_KEYS = {"tol", "step", "tail_param", "tail_scale", "noise_sigma", "delta",
               "exact_success_min", "exact_atol"}


def parse_plan(text, source="<plan>"):
    """Parse ``key = value`` lines (``#`` starts a comment) into a plan."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise PlanError(f"{source}:{lineno}: expected 'key = value'")
        if key not in _PLAN_FIELDS:
            raise PlanError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise PlanError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    if "master_seed" not in raw:
        raise PlanError(f"{source}: master_seed is mandatory")
    for key in ("name", "n", "k"):
        if key not in raw:
            raise PlanError(f"{source}: missing {key!r}")

    kwargs = {}
    try:
        for key, value in raw.items():
            if key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key == "m":
                kwargs[key] = None if value.lower() == "auto" else int(value)
            elif key == "head_range":
                kwargs[key] = tuple(float(v) for v in value.split(","))
            elif key == "targets":
                pairs = []
                for item in value.split(","):
                    r, sep, s = item.partition(":")
                    if not sep:
                        raise PlanError(f"{source}: target {item.strip()!r} is not r:s")
                    pairs.append((qn.parse_exponent(r), qn.parse_exponent(s)))
                kwargs[key] = tuple(pairs)
            else:
                kwargs[key] = value
        return ExperimentPlan(**kwargs)
    except PlanError:
        raise
    except (TypeError, ValueError) as exc:
        raise PlanError(f"{source}: {exc}") from None


def read_plan(path):
    with open(path) as fh:
        return parse_plan(fh.read(), source=str(path))


def _clean(value):
    """JSON-safe float: nan/inf become None."""
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def _sigma_table(x, k):
    return {level: {qn.format_exponent(q): _clean(qn.sigma_k(x, min(kap, x.size), q))
                    for q in (0.5, 1.0, 2.0)}
            for level, kap in (("k", k), ("2k", 2 * k))}


class _Context:
    """State shared by all trials of one plan run (read-only once built)."""

    def __init__(self, plan, c_prime=None):
        self.plan = plan
        self.c_prime = c_prime
        self.phi = None
        if plan.uniform:
            self.phi = realize(plan.ensemble_for(derive_seed(plan.master_seed, _ENSEMBLE_TAG)))

    def phi_for(self, seed):
        if self.phi is not None:
            return self.phi
        return realize(self.plan.ensemble_for(derive_seed(seed, 2)))


def run_trial(plan, phase, index, c_prime=None, context=None):
    """Run one trial; returns ``(record, timing)``."""
    ctx = context or _Context(plan, c_prime)
    c_prime = ctx.c_prime if context is not None else c_prime
    seed = plan.trial_seed(index)
    record = {"index": index, "phase": phase, "seed": seed}
    timing = {}
    try:
        model = plan.signal_model(derive_seed(seed, 0), exact=(phase == "exact"))
        x, _ = generate_signal(model)
        phi = ctx.phi_for(seed)
        y = measure(phi, x, model.noise_sigma, seed=derive_seed(seed, 1))
        base = plan.build_base(phi)

        t0 = time.perf_counter()
        idx, vals, _ = base.recover_support(y)
        t1 = time.perf_counter()
        configs = plan.configs(c_prime)
        zidx, zvals = project_support(idx, vals, plan.kappa)
        t2 = time.perf_counter()
        timing = {"base": t1 - t0, "projection": t2 - t1}

        n = plan.n
        w = np.zeros(n)
        w[idx] = vals
        z = np.zeros(n)
        z[zidx] = zvals
        record["base_support"] = int(idx.size)
        record["output_support"] = int(zidx.size)

        if phase == "exact":
            xnorm = qn.lp_norm(x, 2)
            rel = qn.lp_norm(x - z, 2) / xnorm
            record["status"] = "exact"
            record["rel_error"] = _clean(rel)
            record["exact_ok"] = bool(rel <= plan.exact_atol)
            return record, timing

        record["sigma"] = _sigma_table(x, plan.k)
        spec = plan.base_guarantee()
        scale = spec.scale(x)
        err = spec.error(x, w)
        record["base_error"] = _clean(err)
        record["base_scale"] = _clean(scale)
        if scale == 0:
            record["status"] = "exact"
            record["exact_ok"] = bool(err <= plan.exact_atol * max(qn.lp_norm(x, 2), 1e-300))
            return record, timing
        record["status"] = "ok"
        record["base_ratio"] = _clean(err / scale)
        if phase == "calibration":
            return record, timing

        record["base_holds"] = None if c_prime is None else bool(qn.leq(err, c_prime * scale))
        targets = []
        for cfg in configs:
            target = GuaranteeSpec(cfg.r, cfg.s, cfg.k, tail_level="k")
            t_err, t_scale = target.error(x, z), target.scale(x)
            entry = {
                "r": qn.format_exponent(cfg.r),
                "s": qn.format_exponent(cfg.s),
                "error": _clean(t_err),
                "scale": _clean(t_scale),
                "ratio": _clean(t_err / t_scale) if t_scale > 0 else None,
            }
            if c_prime is not None:
                imp = check_implication(x, w, cfg, c_prime)
                entry.update(predicted_C=_clean(imp.predicted), hypothesis=bool(imp.hypothesis),
                             holds=bool(imp.conclusion), implication_ok=bool(imp.ok))
            targets.append(entry)
        record["targets"] = targets
    except Exception as exc:  # recorded, never dropped
        logger.warning("trial %d (%s) errored: %r", index, phase, exc)
        record = {"index": index, "phase": phase, "seed": seed, "status": "errored",
                  "error": f"{type(exc).__name__}: {exc}"}
    return record, timing


def _quantiles(values):
    if not values:
        return {"max_ratio": None, "median_ratio": None, "p95_ratio": None}
    arr = np.asarray(values, dtype=np.float64)
    return {"max_ratio": float(arr.max()), "median_ratio": float(np.median(arr)),
            "p95_ratio": float(np.percentile(arr, 95))}


def aggregate(records, plan):
    """Summarize a record stream (any order) into the report dictionary."""
    records = sorted(records, key=lambda r: r["index"])
    by_phase = {name: [r for r in records if r["phase"] == name] for name, _, _ in plan.phases()}

    calib = by_phase["calibration"]
    calib_ratios = [r["base_ratio"] for r in calib if r["status"] == "ok"]
    c_prime = max(calib_ratios) if calib_ratios else None
    report = {
        "plan": plan.name,
        "plan_digest": plan.digest(),
        "delta": plan.delta,
        "trials": {name: len(rs) for name, rs in by_phase.items()},
        "calibration": {
            "c_prime": c_prime,
            "median_ratio": float(np.median(calib_ratios)) if calib_ratios else None,
            "ratio_trials": len(calib_ratios),
            "exact": sum(r["status"] == "exact" for r in calib),
            "errored": sum(r["status"] == "errored" for r in calib),
        },
    }

    evals = by_phase["evaluation"]
    base_ok = [r for r in evals if r["status"] == "ok"]
    n_eval = len(evals)
    base_fail = sum(1 for r in evals if r["status"] == "errored" or r.get("base_holds") is False
                    or (r["status"] == "exact" and not r["exact_ok"]))
    report["base"] = dict(_quantiles([r["base_ratio"] for r in base_ok]),
                          fail_rate=base_fail / n_eval if n_eval else None)

    p, q = plan.base_exponents
    targets = []
    for cfg in plan.configs(c_prime):
        key = (qn.format_exponent(cfg.r), qn.format_exponent(cfg.s))
        ratios, fails, violations = [], 0, 0
        for r in evals:
            if r["status"] == "errored":
                fails += 1
                continue
            if r["status"] == "exact":
                fails += not r["exact_ok"]
                continue
            entry = next(t for t in r["targets"] if (t["r"], t["s"]) == key)
            if entry["ratio"] is not None:
                ratios.append(entry["ratio"])
            if c_prime is None or not entry["holds"]:
                fails += 1
            if c_prime is not None and not entry["implication_ok"]:
                violations += 1
        targets.append(dict(
            p=qn.format_exponent(p), q=qn.format_exponent(q), r=key[0], s=key[1],
            predicted_C=cfg.predicted_constant(),
            **_quantiles(ratios),
            fail_rate=fails / n_eval if n_eval else None,
            failures=fails,
            implication_violations=violations,
        ))
    report["targets"] = targets

    exact = by_phase["exact"]
    ok = sum(1 for r in exact if r.get("exact_ok"))
    report["exact"] = {"trials": len(exact), "successes": ok,
                       "success_rate": ok / len(exact) if exact else None}
    report["errored"] = sum(r["status"] == "errored" for r in records)

    passed = all(t["implication_violations"] == 0 for t in targets)
    if n_eval:
        passed &= all(t["fail_rate"] <= plan.delta for t in targets)
    if exact:
        passed &= report["exact"]["success_rate"] >= plan.exact_success_min
    report["passed"] = bool(passed)
    return report


def _run_phase(plan, phase, start, count, c_prime, ctx, threads):
    ctx.c_prime = c_prime
    indices = range(start, start + count)
    if threads > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda i: run_trial(plan, phase, i, context=ctx), indices))
    return [run_trial(plan, phase, i, context=ctx) for i in indices]


def _paths(plan, output_dir):
    out = output_dir if output_dir is not None else plan.output_dir
    stem = os.path.join(out, plan.name)
    return out, stem + ".records.jsonl", stem + ".report.json", stem + ".report.csv"


def _dump_record(rec):
    return json.dumps(rec, sort_keys=True, allow_nan=False)


def csv_rows(report, axis="", value=""):
    return [[axis, value, t["p"], t["q"], t["r"], t["s"], t["max_ratio"], t["median_ratio"],
             t["p95_ratio"], t["fail_rate"], t["predicted_C"]] for t in report["targets"]]


def run_plan(plan, output_dir=None, threads=None, write=True):
    """Calibrate, evaluate and summarize `plan`.

    Returns ``(report, records)``. When `write` is set the records, the
    JSON report and its CSV companion go to ``output_dir`` (default
    ``plan.output_dir``).
    """
    threads = threads or plan.threads
    out, rec_path, rep_path, csv_path = _paths(plan, output_dir)
    if write:
        os.makedirs(out, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise OSError(f"output directory {out!r} is not writable")

    ctx = _Context(plan)
    results = []
    c_prime = None
    for phase, start, count in plan.phases():
        results += _run_phase(plan, phase, start, count, c_prime, ctx, threads)
        if phase == "calibration":
            ratios = [r["base_ratio"] for r, _ in results if r["status"] == "ok"]
            c_prime = max(ratios) if ratios else None

    records = [r for r, _ in results]
    report = aggregate(records, plan)
    base_t = [t["base"] for _, t in results if t]
    proj_t = [t["projection"] for _, t in results if t]
    report["timing"] = {
        "base_median_s": float(np.median(base_t)) if base_t else None,
        "projection_median_s": float(np.median(proj_t)) if proj_t else None,
        "total_base_s": float(np.sum(base_t)) if base_t else 0.0,
    }
    if write:
        with open(rec_path, "w") as fh:
            for rec in records:
                fh.write(_dump_record(rec) + "\n")
        with open(rep_path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            writer.writerows(csv_rows(report))
    return report, records


def replay_trial(plan, record, c_prime=None):
    """Regenerate a stored record from the plan and its index."""
    rec, _ = run_trial(plan, record["phase"], record["index"], c_prime=c_prime)
    return rec


def _with_axis(plan, axis, value):
    if axis == "p":
        e = qn.parse_exponent(value)
        return dataclasses.replace(plan, targets=((e, e),))
    if axis == "m":
        if plan.ensemble != EnsembleKind.DENSE_GAUSSIAN.value:
            raise PlanError("the m axis applies to dense ensembles; sweep buckets via the plan")
        return dataclasses.replace(plan, m=int(value))
    return dataclasses.replace(plan, **{axis: int(value)})


def sweep(plan, axis, values, output_dir=None, threads=None, write=True):
    """Run `plan` once per value of `axis`; returns ``[(value, report), ...]``.

    A combined CSV ``<name>.sweep-<axis>.csv`` collects one row per target
    per grid point.
    """
    if axis not in SWEEP_AXES:
        raise PlanError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    out = output_dir if output_dir is not None else plan.output_dir
    results, rows = [], []
    for value in values:
        point = _with_axis(plan, axis, value)
        tag = str(value).replace("/", "_")
        point = dataclasses.replace(point, name=f"{plan.name}.{axis}={tag}")
        report, _ = run_plan(point, output_dir=out, threads=threads, write=write)
        results.append((value, report))
        rows += csv_rows(report, axis, str(value))
    if write:
        with open(os.path.join(out, f"{plan.name}.sweep-{axis}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            writer.writerows(rows)
    return results
