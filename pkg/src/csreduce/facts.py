"""Randomized checks of the quasinorm inequalities the reduction rests on.

Each entry of :data:`CHECKS` pairs a case generator with an evaluator. A
case is a plain dict (vectors as lists) so a failing one can be dumped as
JSON and replayed. :func:`shrink` greedily drops coordinates from a failing
case while it keeps failing.
"""
import numpy as np

from . import quasinorm as qn

__all__ = ["CHECKS", "Check", "draw_exponent", "draw_vector", "run_checks", "shrink"]

_SPECIAL = (0.25, 0.5, 1.0, 2.0, 3.0)


def draw_exponent(rng, allow_inf=True):
    u = rng.random()
    if allow_inf and u < 0.05:
        return np.inf
    if u < 0.3:
        return float(rng.choice(_SPECIAL))
    return float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))


def draw_pair(rng):
    a, b = draw_exponent(rng, allow_inf=False), draw_exponent(rng)
    return (a, b) if a <= b else (b, a)


def draw_vector(rng, n):
    """A length-`n` vector from a mix of shapes: dense, sparse, flat with ties, heavy tailed."""
    kind = rng.integers(4)
    if kind == 0:
        v = rng.standard_normal(n)
    elif kind == 1:
        v = np.zeros(n)
        nnz = rng.integers(0, n + 1)
        v[rng.choice(n, nnz, replace=False)] = rng.standard_normal(nnz)
    elif kind == 2:
        v = rng.choice([-1.0, 1.0], n) * rng.integers(0, 3, n)
    else:
        v = rng.standard_cauchy(n)
    return v * 10.0 ** rng.uniform(-3, 3)


class Check:
    def __init__(self, name, draw, evaluate, valid=lambda case: True):
        self.name = name
        self.draw = draw
        self.evaluate = evaluate
        self.valid = valid

    def __repr__(self):
        return f"Check({self.name!r})"


def _vec(case, key="v"):
    return np.asarray(case[key], dtype=np.float64)


def _draw_monotone(rng, max_n):
    a, b = draw_pair(rng)
    return {"v": draw_vector(rng, rng.integers(1, max_n + 1)).tolist(), "a": a, "b": b}


def _eval_monotone(case):
    return qn.check_norm_monotone(_vec(case), case["a"], case["b"])


def _eval_holder_kappa(case):
    return qn.check_sparse_holder(_vec(case), case["a"], case["b"])


def _eval_holder_n(case):
    return qn.check_sparse_holder(_vec(case), case["a"], case["b"], dimension=True)


def _draw_shelling(rng, max_n):
    n = int(rng.integers(2, max(max_n, 2) + 1))
    a, b = draw_pair(rng)
    return {"v": draw_vector(rng, n).tolist(), "kappa": int(rng.integers(1, n // 2 + 1)), "a": a, "b": b}


def _shelling_valid(case):
    return 1 <= case["kappa"] and 2 * case["kappa"] <= len(case["v"])


def _eval_shelling(case):
    res = qn.shelling_bound(_vec(case), case["kappa"], case["a"], case["b"])
    return qn.InequalityCheck(res.lhs, res.rhs, res.holds)


def _eval_blocks(case):
    steps = qn.shelling_block_steps(_vec(case), case["kappa"], case["a"])
    bad = [st for st in steps if not st.holds]
    worst = bad[0] if bad else (max(steps, key=lambda st: st.lhs - st.rhs) if steps else None)
    if worst is None:
        return qn.InequalityCheck(0.0, 0.0, True)
    return worst


def _draw_triangle(rng, max_n):
    n = int(rng.integers(1, max_n + 1))
    r = float(rng.choice([0.5, 1.0])) if rng.random() < 0.3 else float(rng.uniform(0.05, 1.0))
    return {"u": draw_vector(rng, n).tolist(), "v": draw_vector(rng, n).tolist(), "r": r}


def _eval_triangle(case):
    return qn.check_quasi_triangle(_vec(case, "u"), _vec(case, "v"), case["r"])


def _draw_head_opt(rng, max_n):
    n = int(rng.integers(2, max(max_n, 2) + 1))
    k = int(rng.integers(1, n // 2 + 1))
    x = draw_vector(rng, n)
    w = x + draw_vector(rng, n) * 10.0 ** rng.uniform(-4, 0)
    return {"x": x.tolist(), "w": w.tolist(), "k": k, "p": draw_exponent(rng)}


def _head_opt_valid(case):
    return 1 <= case["k"] and 2 * case["k"] <= len(case["x"])


def _eval_head_opt(case):
    """``||w - head(w, 2k)||_p <= ||w - x_A||_p`` with A the top 2k of x."""
    x, w, k, p = _vec(case, "x"), _vec(case, "w"), case["k"], case["p"]
    lhs = qn.lp_norm(w - qn.head(w, 2 * k), p)
    rhs = qn.lp_norm(w - qn.restrict(x, qn.top_support(x, 2 * k)), p)
    return qn.InequalityCheck(lhs, rhs, qn.leq(lhs, rhs))


CHECKS = {
    c.name: c
    for c in [
        Check("norm_monotone", _draw_monotone, _eval_monotone),
        Check("sparse_holder_kappa", _draw_monotone, _eval_holder_kappa),
        Check("sparse_holder_n", _draw_monotone, _eval_holder_n),
        Check("shelling", _draw_shelling, _eval_shelling, _shelling_valid),
        Check("shelling_blocks", _draw_shelling, _eval_blocks, _shelling_valid),
        Check("quasi_triangle", _draw_triangle, _eval_triangle),
        Check("head_optimality", _draw_head_opt, _eval_head_opt, _head_opt_valid),
    ]
}

_VECTOR_KEYS = ("v", "u", "x", "w")


def shrink(check, case, max_rounds=50):
    """Drop coordinates from a failing `case` while it still fails."""
    keys = [k for k in _VECTOR_KEYS if k in case]
    for _ in range(max_rounds):
        progress = False
        n = len(case[keys[0]])
        for i in range(n - 1, -1, -1):
            cand = dict(case)
            for key in keys:
                cand[key] = case[key][:i] + case[key][i + 1:]
            if not cand[keys[0]] or not check.valid(cand):
                continue
            try:
                if not check.evaluate(cand).holds:
                    case, progress = cand, True
                    break
            except ValueError:
                continue
        if not progress:
            break
    return case


def run_checks(cases, seed, max_n=64, names=None):
    """Run `cases` random cases of each check.

    Returns ``(counts, failure)``, where ``counts`` maps check name to the
    number of cases run and ``failure`` is ``None`` or a dict with the
    check name, the shrunken case and its two sides.
    """
    rng = np.random.default_rng(seed)
    counts = {}
    for name in names or CHECKS:
        check = CHECKS[name]
        counts[name] = 0
        for _ in range(cases):
            case = check.draw(rng, max_n)
            res = check.evaluate(case)
            counts[name] += 1
            if not res.holds:
                small = shrink(check, case)
                res = check.evaluate(small)
                return counts, {"check": name, "case": small, "lhs": res.lhs, "rhs": res.rhs}
    return counts, None
