"""Turn an lp/lq recovery scheme into an lr/ls scheme by keeping the largest
``2k`` (or ``k``) coordinates of its output.

For ``p >= r >= s > 0`` and ``q >= s``, a base scheme satisfying

    ||x - w||_p <= C' * k**(1/p - 1/q) * ||x_tail(2k)||_q

yields ``z = head(w, 2k)`` with

    ||x - z||_r <= C * k**(1/r - 1/s) * ||x_tail(k)||_s

where ``C = (1 + 3 * 2**(1 - r/p) * C'**r) ** (1/r)`` if ``r <= 1`` and
``C = 1 + 2 * 4**(1/r - 1/p) * (1 + C')`` if ``r > 1``. When
``q = r = s <= 1`` the base may be stated at tail ``k`` and the output
projected onto ``k`` coordinates, with the ``r <= 1`` constant.
"""
import dataclasses
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import quasinorm as qn
from .base_recovery import BaseRecoverer, GuaranteeSpec

__all__ = [
    "ExponentError",
    "ReductionConfig",
    "ReducedRecoverer",
    "ProofStep",
    "ProofLedger",
    "Implication",
    "validate_exponents",
    "predicted_constant",
    "project_support",
    "reduce",
    "verify_proof_chain",
    "check_implication",
]

PROJECTION_LEVELS = ("2k", "k")


class ExponentError(ValueError):
    pass


def validate_exponents(p, q, r, s, projection_level="2k"):
    try:
        p, q, r, s = (qn.check_exponent(e) for e in (p, q, r, s))
    except ValueError as exc:
        raise ExponentError(str(exc)) from None
    if not p >= r >= s > 0:
        raise ExponentError(f"need p >= r >= s > 0, got p={p}, r={r}, s={s}")
    if not q >= s:
        raise ExponentError(f"need q >= s, got q={q}, s={s}")
    if projection_level not in PROJECTION_LEVELS:
        raise ExponentError(f"projection level must be one of {PROJECTION_LEVELS}")
    if projection_level == "k" and not (q == r == s and r <= 1):
        raise ExponentError("projection onto k coordinates needs q = r = s <= 1")
    return p, q, r, s


def predicted_constant(p, q, r, s, c_prime, projection_level="2k"):
    """Constant of the reduced guarantee given the base constant `c_prime`."""
    p, q, r, s = validate_exponents(p, q, r, s, projection_level)
    if not c_prime >= 0 or np.isnan(c_prime):
        raise ValueError(f"base constant must be non-negative, got {c_prime}")
    if r <= 1:
        return float((1 + 3 * 2 ** (1 - r / p) * c_prime ** r) ** (1 / r))
    return float(1 + 2 * 4 ** (1 / r - 1 / p) * (1 + c_prime))


@dataclass(frozen=True)
class ReductionConfig:
    """Exponents of the base (p, q) and target (r, s) guarantees at sparsity `k`.

    `c_prime` defaults to the base recoverer's calibrated constant.
    """

    k: int
    p: float
    q: float
    r: float
    s: float
    projection_level: str = "2k"
    c_prime: Optional[float] = None

    def __post_init__(self):
        p, q, r, s = validate_exponents(self.p, self.q, self.r, self.s, self.projection_level)
        for name, value in zip("pqrs", (p, q, r, s)):
            object.__setattr__(self, name, value)
        if self.k < 0:
            raise ValueError("k must be non-negative")

    @property
    def kappa(self):
        return 2 * self.k if self.projection_level == "2k" else self.k

    @property
    def base_tail_level(self):
        return self.projection_level

    def predicted_constant(self, c_prime=None):
        c_prime = self.c_prime if c_prime is None else c_prime
        if c_prime is None:
            return None
        return predicted_constant(self.p, self.q, self.r, self.s, c_prime, self.projection_level)


def project_support(idx, vals, kappa):
    """Keep the `kappa` largest-magnitude entries of a sparse vector.

    Works on the ``S`` stored entries only, so the cost is O(S).
    """
    kappa = min(int(kappa), len(vals))
    keep = qn.top_support(vals, kappa)
    return np.asarray(idx)[keep], np.asarray(vals)[keep]


class ReducedRecoverer(BaseRecoverer):
    """``z = head(base.recover(y), kappa)``.

    Shares the base's measurement matrix and adds no randomness, so a
    uniform base stays uniform and a nonuniform one keeps its failure
    probability.
    """

    name = "reduced"

    def __init__(self, base, config):
        spec = GuaranteeSpec(
            p=config.r,
            q=config.s,
            k=config.k,
            C=config.predicted_constant(),
            tail_level="k",
            delta=base.guarantee.delta,
        )
        super().__init__(base.phi, spec, output_sparsity=config.kappa)
        self.base = base
        self.config = config

    def recover_support(self, y):
        idx, vals, info = self.base.recover_support(y)
        zidx, zvals = project_support(idx, vals, self.config.kappa)
        info = dict(info, base_support=idx, base_values=vals)
        return zidx, zvals, info


def reduce(base, config):
    """Wrap `base` so its output is projected onto the largest ``config.kappa`` entries.

    The base guarantee must have exponents ``(config.p, config.q)``,
    sparsity ``config.k`` and tail level equal to the projection level
    (``2k`` for the general case).
    """
    spec = base.guarantee
    if (spec.p, spec.q) != (config.p, config.q):
        raise ExponentError(
            f"base is l{qn.format_exponent(spec.p)}/l{qn.format_exponent(spec.q)}, "
            f"config expects l{qn.format_exponent(config.p)}/l{qn.format_exponent(config.q)}"
        )
    if spec.k != config.k or spec.tail_level != config.base_tail_level:
        raise ValueError(
            f"base guarantee is stated at k={spec.k}, tail {spec.tail_level}; "
            f"reduction needs k={config.k}, tail {config.base_tail_level}"
        )
    if config.c_prime is None and spec.C is not None:
        config = dataclasses.replace(config, c_prime=spec.C)
    return ReducedRecoverer(base, config)


class ProofStep(NamedTuple):
    label: str
    reason: str
    lhs: float
    rhs: float
    holds: bool
    conditional: bool = False


@dataclass
class ProofLedger:
    """Every inequality of the reduction's analysis evaluated on one (x, w).

    Steps marked ``conditional`` depend on the base guarantee; they are
    only required to hold when ``hypothesis_holds`` is true.
    """

    branch: str
    c_prime: float
    hypothesis_holds: bool
    steps: list

    @property
    def all_hold(self):
        return all(st.holds for st in self.steps if self.hypothesis_holds or not st.conditional)

    def failures(self):
        return [st for st in self.steps if not st.holds and (self.hypothesis_holds or not st.conditional)]

    def format(self):
        lines = [f"branch {self.branch}, C'={self.c_prime:.6g}, hypothesis {'holds' if self.hypothesis_holds else 'fails'}"]
        for st in self.steps:
            mark = "ok " if st.holds else "BAD"
            lines.append(f"  [{mark}] {st.label:<28} {st.lhs:.9g} <= {st.rhs:.9g}  ({st.reason})")
        return "\n".join(lines)


class _Term(NamedTuple):
    value: float
    scale: float


def _sum(*terms):
    """Signed sum of (coef, value) pairs, tracking the magnitude for the tolerance."""
    return _Term(sum(c * v for c, v in terms), sum(abs(c * v) for c, v in terms))


def _hypothesis(x, w, k, p, q, kappa, c_prime):
    err = qn.lp_norm(x - w, p)
    tail_q = qn.sigma_k(x, min(kappa, x.size), q)
    scale = float(k) ** (1 / p - 1 / q) * tail_q if k > 0 else 0.0
    if c_prime is None:
        if scale > 0:
            c_prime = err / scale
        else:
            c_prime = 0.0 if err == 0 else np.inf
    holds = qn.leq(err, c_prime * scale) if np.isfinite(c_prime) else False
    return c_prime, holds


def verify_proof_chain(x, w, k, p, q, r, s, c_prime=None, projection_level="2k"):
    """Evaluate each inequality of the reduction's analysis on concrete data.

    ``A`` is the top-``kappa`` support of `x` and ``B`` that of `w`, with
    ``z = w_B``. With ``c_prime=None`` the tightest constant for which the
    base hypothesis holds on this pair is used.

    Returns
    -------
    ProofLedger
    """
    x, w = qn.as_signal(x), qn.as_signal(w)
    if x.size != w.size:
        raise ValueError("x and w must have the same length")
    p, q, r, s = validate_exponents(p, q, r, s, projection_level)
    k = int(k)
    if k < 1:
        raise ValueError("k must be positive")
    kappa = min(2 * k if projection_level == "2k" else k, x.size)
    c_prime, hyp = _hypothesis(x, w, k, p, q, kappa, c_prime)
    C = predicted_constant(p, q, r, s, c_prime, projection_level) if np.isfinite(c_prime) else np.inf
    if r <= 1:
        steps = _chain_small_r(x, w, k, kappa, p, q, r, s, c_prime, C)
        branch = "r<=1"
    else:
        steps = _chain_large_r(x, w, k, kappa, p, q, r, s, c_prime, C)
        branch = "r>1"
    return ProofLedger(branch, float(c_prime), hyp, steps)


def _chain(quantities):
    steps = []
    for (_, _, cond_a, lhs), (label, reason, cond_b, rhs) in zip(quantities, quantities[1:]):
        scale = max(lhs.scale, rhs.scale)
        holds = qn.leq(lhs.value, rhs.value, scale)
        steps.append(ProofStep(label, reason, lhs.value, rhs.value, holds, cond_a or cond_b))
    return steps


def _chain_small_r(x, w, k, kappa, p, q, r, s, c_prime, C):
    A, B = qn.top_support(x, kappa), qn.top_support(w, kappa)
    z = qn.restrict(w, B)
    xA, xB, wA, wB = (qn.restrict(v, S) for v, S in ((x, A), (x, B), (w, A), (w, B)))

    def pr(v, e=r):
        return qn.lp_norm(v, e) ** r

    d_B, d_A = pr(xB - wB), pr(wA - xA)
    nx, nxB, nwB, nwA, nxA = pr(x), pr(xB), pr(wB), pr(wA), pr(xA)
    tail_r = pr(qn.tail(x, kappa))
    holder = kappa ** (1 - r / p)
    tail_q = qn.sigma_k(x, kappa, q) ** r
    tail_s = qn.sigma_k(x, k, s) ** r
    hyp_c = holder * c_prime ** r * float(k) ** (r / p - r / q)
    shell = float(k) ** (1 - r / s)

    chain = [
        ("||x - z||_r^r", "", False, _Term(pr(x - z), pr(x - z))),
        ("split on B", "triangle inequality", False, _sum((1, d_B), (1, pr(x - xB)))),
        ("mass outside B", "disjoint supports", False, _sum((1, d_B), (1, nx), (-1, nxB))),
        ("lower-bound ||x_B||", "triangle inequality", False, _sum((1, d_B), (1, nx), (-1, nwB), (1, d_B))),
        ("collect", "algebra", False, _sum((2, d_B), (1, nx), (-1, nwB))),
        ("B maximizes w mass", "definition of B", False, _sum((2, d_B), (1, nx), (-1, nwA))),
        ("lower-bound ||w_A||", "triangle inequality", False, _sum((2, d_B), (1, nx), (-1, nxA), (1, d_A))),
        ("mass outside A", "disjoint supports", False, _sum((2, d_B), (1, d_A), (1, tail_r))),
        ("sparse Holder", "sparse norms compare",
         False, _sum((2 * holder, qn.lp_norm(xB - wB, p) ** r), (holder, qn.lp_norm(wA - xA, p) ** r), (1, tail_r))),
        ("pieces of x - w", "restriction shrinks the norm",
         False, _sum((3 * holder, qn.lp_norm(x - w, p) ** r), (1, tail_r))),
        ("base guarantee", "hypothesis on the base scheme", True, _sum((3 * hyp_c, tail_q), (1, tail_r))),
    ]
    if kappa == 2 * k:
        chain.append(("shelling", "shelling lemma", True,
                      _sum((3 * 2 ** (1 - r / p) * c_prime ** r * shell, tail_s), (shell, tail_s))))
    else:
        # top-k variant: tail(kappa) is already tail(k) and q = r = s
        chain.append(("same tail level", "q = r = s", True,
                      _sum((3 * hyp_c, tail_s), (1, tail_s))))
    chain.append(("closed form", "constant of the r <= 1 case", True,
                  _Term(C ** r * shell * tail_s, C ** r * shell * tail_s)))
    return _chain(chain)


def _chain_large_r(x, w, k, kappa, p, q, r, s, c_prime, C):
    A, B = qn.top_support(x, kappa), qn.top_support(w, kappa)
    xA, wB = qn.restrict(x, A), qn.restrict(w, B)
    z = wB

    def n_(v, e):
        return qn.lp_norm(v, e)

    f = (4.0 * k) ** (1 / r - 1 / p)
    T = qn.tail(x, kappa)
    tail_s = qn.sigma_k(x, k, s)
    shell = float(k) ** (1 / r - 1 / s)
    e_xa_r, e_xa_p = n_(x - xA, r), n_(x - xA, p)
    e_w = n_(x - w, p)

    chain = [
        ("||x - z||_r", "", False, _Term(n_(x - z, r), n_(x - z, r))),
        ("through x_A", "triangle inequality", False, _sum((1, e_xa_r), (1, n_(xA - wB, r)))),
        ("4k-sparse Holder", "sparse norms compare", False, _sum((1, e_xa_r), (f, n_(xA - wB, p)))),
        ("through x", "triangle inequality", False, _sum((1, e_xa_r), (f, e_xa_p), (f, n_(x - wB, p)))),
        ("through w", "triangle inequality", False,
         _sum((1, e_xa_r), (f, e_xa_p), (f, e_w), (f, n_(w - wB, p)))),
        ("head optimality", "w_B is the best 2k-term approximation of w", False,
         _sum((1, e_xa_r), (f, e_xa_p), (f, e_w), (f, n_(w - xA, p)))),
        ("through x again", "triangle inequality", False,
         _sum((1, e_xa_r), (2 * f, e_xa_p), (2 * f, e_w))),
        ("tails", "x - x_A is the 2k-tail", False,
         _sum((1, n_(T, r)), (2 * f, n_(T, p)), (2 * f, e_w))),
        ("base guarantee", "hypothesis on the base scheme", True,
         _sum((1, n_(T, r)), (2 * f, n_(T, p)),
              (2 * 4 ** (1 / r - 1 / p) * c_prime * float(k) ** (1 / r - 1 / q), n_(T, q)))),
        ("shelling", "shelling lemma", True,
         _sum((shell, tail_s), (2 * 4 ** (1 / r - 1 / p) * shell, tail_s),
              (2 * 4 ** (1 / r - 1 / p) * c_prime * shell, tail_s))),
        ("closed form", "constant of the r > 1 case", True, _Term(C * shell * tail_s, C * shell * tail_s)),
    ]
    return _chain(chain)


class Implication(NamedTuple):
    hypothesis: bool
    conclusion: bool
    base_ratio: float
    reduced_ratio: float
    predicted: float

    @property
    def ok(self):
        return self.conclusion or not self.hypothesis


def check_implication(x, w, config, c_prime=None):
    """Test "base hypothesis holds => reduced conclusion holds" on one pair.

    ``z = head(w, config.kappa)``. Ratios are ``nan`` when the relevant
    tail vanishes.
    """
    x, w = qn.as_signal(x), qn.as_signal(w)
    c_prime = config.c_prime if c_prime is None else c_prime
    if c_prime is None:
        raise ValueError("need a base constant")
    k, kappa = config.k, min(config.kappa, x.size)
    base = GuaranteeSpec(config.p, config.q, k, tail_level=config.projection_level)
    target = GuaranteeSpec(config.r, config.s, k, tail_level="k")
    C = config.predicted_constant(c_prime)
    z = qn.head(w, kappa)
    hyp = qn.leq(base.error(x, w), c_prime * base.scale(x))
    concl = qn.leq(target.error(x, z), C * target.scale(x))
    return Implication(hyp, concl, base.ratio(x, w), target.ratio(x, z), C)
