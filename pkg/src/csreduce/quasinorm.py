"""lp quasinorms, sparse projections and best k-term errors.

Vectors are 1-D float64 arrays. Exponents are positive floats, with
``numpy.inf`` standing for the max-norm. For ``0 < p < 1`` the functional
``lp_norm`` is only a quasinorm, but ``lp_norm(u + v, p) ** p`` is still
subadditive, which is what the reduction analysis relies on.
"""
import math
from fractions import Fraction
from typing import NamedTuple

import numpy as np

__all__ = [
    "RTOL",
    "InequalityCheck",
    "ShellingResult",
    "as_signal",
    "check_exponent",
    "parse_exponent",
    "format_exponent",
    "lp_norm",
    "support_size",
    "as_support",
    "restrict",
    "top_support",
    "head",
    "tail",
    "sigma_k",
    "leq",
    "check_norm_monotone",
    "check_sparse_holder",
    "check_quasi_triangle",
    "shelling_blocks",
    "shelling_block_steps",
    "shelling_bound",
]

#: Relative slack allowed on inequalities that are exact in real arithmetic.
RTOL = 1e-9


class InequalityCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool

    @property
    def slack(self):
        return self.rhs - self.lhs


class ShellingResult(NamedTuple):
    lhs: float
    rhs: float
    holds: bool
    blocks: list


def as_signal(v):
    """Return `v` as a finite 1-D float64 array (copy-free when possible)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("signal contains non-finite entries")
    return arr


def check_exponent(p):
    p = float(p)
    if np.isnan(p) or p <= 0:
        raise ValueError(f"exponent must be positive or inf, got {p}")
    return p


def parse_exponent(text):
    """Parse ``"1/2"``, ``"0.5"``, ``"2"`` or ``"inf"`` into an exponent."""
    text = str(text).strip().lower()
    if text in ("inf", "infinity", "oo"):
        return np.inf
    try:
        value = float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"cannot parse exponent {text!r}") from exc
    return check_exponent(value)


def format_exponent(p):
    if p == np.inf:
        return "inf"
    frac = Fraction(p).limit_denominator(64)
    if float(frac) == p:
        return str(frac)
    return repr(p)


def lp_norm(v, p):
    r"""Compute :math:`\|v\|_p = (\sum_i |v_i|^p)^{1/p}`, or :math:`\max_i |v_i|`
    when ``p`` is ``inf``.

    Powers are taken directly and summed with ``math.fsum``, which rounds
    once, so the result does not depend on the order of the entries. A
    log-domain evaluation is used only when the direct sum underflows to
    zero or overflows.
    """
    a = np.abs(as_signal(v))
    p = check_exponent(p)
    if a.size == 0:
        return 0.0
    if p == np.inf:
        return float(a.max())
    with np.errstate(over="ignore", under="ignore"):
        total = math.fsum(a ** p)
        if 0.0 < total < np.inf:
            out = total ** (1.0 / p)
            if 0.0 < out < np.inf:
                return float(out)
    nz = a[a > 0]
    if nz.size == 0:
        return 0.0
    logs = p * np.log(nz)
    top = logs.max()
    log_total = top + np.log(math.fsum(np.exp(logs - top)))
    with np.errstate(over="ignore", under="ignore"):
        return float(np.exp(log_total / p))


def support_size(v):
    return int(np.count_nonzero(v))


def as_support(indices, n):
    """Validate a support set: strictly increasing integers in ``[0, n)``."""
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    if idx.size:
        if idx[0] < 0 or idx[-1] >= n:
            raise IndexError(f"support index out of range for length {n}")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("support indices must be strictly increasing")
    return idx


def restrict(v, support):
    """Zero every entry of `v` outside `support`."""
    v = as_signal(v)
    idx = as_support(support, v.size)
    out = np.zeros_like(v)
    out[idx] = v[idx]
    return out


def _select(v, kappa):
    """Exact top-`kappa` selection on a validated array, lower index wins ties."""
    n = v.size
    a = np.abs(v)
    a.partition(n - kappa)
    threshold = a[n - kappa]
    del a
    mask = np.greater(v, threshold)
    mask |= np.less(v, -threshold)
    need = kappa - int(np.count_nonzero(mask))
    if need:
        ties = np.flatnonzero((v == threshold) | (v == -threshold))[:need]
        mask[ties] = True
    return np.flatnonzero(mask)


_SAMPLE = 4096


def top_support(v, kappa):
    """Indices of the `kappa` largest-magnitude entries of `v`, ascending.

    Selection uses introselect (``numpy.partition``), so the expected cost
    is linear in ``len(v)``. Among equal magnitudes the lower index wins,
    which makes the result a function of the values alone.

    For long inputs and small `kappa` a strided sample first proposes a
    cutoff; every entry at or above it is kept as a candidate and the exact
    selection runs on the candidates only. The cutoff is accepted only if
    at least `kappa` entries reach it, so the candidates always contain
    the answer; otherwise the full selection runs.
    """
    v = as_signal(v)
    n = v.size
    kappa = int(kappa)
    if kappa < 0 or kappa > n:
        raise ValueError(f"kappa={kappa} outside [0, {n}]")
    if kappa == 0:
        return np.empty(0, dtype=np.intp)
    if kappa == n:
        return np.arange(n, dtype=np.intp)
    if n >= 4 * _SAMPLE and 16 * kappa <= n:
        sample = np.abs(v[:: n // _SAMPLE])
        # aim for about twice the expected sample count above the answer
        rank = min(sample.size, 2 * kappa * sample.size // n + 16)
        cutoff = np.partition(sample, sample.size - rank)[sample.size - rank]
        keep = np.greater_equal(v, cutoff)
        keep |= np.less_equal(v, -cutoff)
        cand = np.flatnonzero(keep)
        if kappa <= cand.size <= n // 4:
            return cand[_select(v[cand], kappa)]
    return _select(v, kappa)


def head(v, kappa):
    """Projection of `v` onto its `kappa` largest-magnitude coordinates."""
    v = as_signal(v)
    out = np.zeros_like(v)
    idx = top_support(v, kappa)
    out[idx] = v[idx]
    return out


def tail(v, kappa):
    """`v` with its `kappa` largest-magnitude coordinates zeroed."""
    v = as_signal(v)
    out = v.copy()
    out[top_support(v, kappa)] = 0.0
    return out


def sigma_k(v, k, q):
    """Best `k`-term approximation error of `v` in the lq quasinorm.

    The lq cost is separable and increasing in each |v_i|, so the infimum
    over k-sparse approximants is attained by keeping the k largest entries.
    """
    return lp_norm(tail(v, k), q)


def leq(lhs, rhs, scale=0.0, rtol=RTOL):
    """``lhs <= rhs`` up to ``rtol * max(|lhs|, |rhs|, scale, 1)``."""
    if np.isinf(rhs) and rhs > 0:
        return True
    bound = max(abs(lhs), abs(rhs), scale, 1.0)
    return bool(lhs <= rhs + rtol * bound)


def _check_pair(a, b):
    a, b = check_exponent(a), check_exponent(b)
    if a > b:
        raise ValueError(f"need a <= b, got a={a}, b={b}")
    return a, b


def _power_gap(base, a, b):
    """``base ** (1/a - 1/b)`` with ``0 ** 0 == 1`` and ``1/inf == 0``."""
    expo = 1.0 / a - 1.0 / b
    if base == 0:
        return 1.0 if expo == 0 else 0.0
    return float(base) ** expo


def check_norm_monotone(v, a, b, rtol=RTOL):
    """Check ``||v||_b <= ||v||_a`` for ``0 < a <= b``."""
    a, b = _check_pair(a, b)
    lhs, rhs = lp_norm(v, b), lp_norm(v, a)
    return InequalityCheck(lhs, rhs, leq(lhs, rhs, rtol=rtol))


def check_sparse_holder(v, a, b, dimension=False, rtol=RTOL):
    """Check ``||v||_a <= s ** (1/a - 1/b) * ||v||_b``.

    ``s`` is the support size of `v`, or its length when `dimension` is set.
    """
    a, b = _check_pair(a, b)
    v = as_signal(v)
    s = v.size if dimension else support_size(v)
    lhs = lp_norm(v, a)
    rhs = _power_gap(s, a, b) * lp_norm(v, b)
    return InequalityCheck(lhs, rhs, leq(lhs, rhs, rtol=rtol))


def check_quasi_triangle(u, v, r, rtol=RTOL):
    """Check ``||u + v||_r^r <= ||u||_r^r + ||v||_r^r`` for ``0 < r <= 1``."""
    r = check_exponent(r)
    if r > 1:
        raise ValueError(f"r-th power subadditivity needs r <= 1, got {r}")
    lhs = lp_norm(as_signal(u) + as_signal(v), r) ** r
    rhs = lp_norm(u, r) ** r + lp_norm(v, r) ** r
    return InequalityCheck(lhs, rhs, leq(lhs, rhs, rtol=rtol))


def shelling_blocks(v, kappa):
    """Split the coordinates of `v` into consecutive blocks of `kappa`
    indices, in order of decreasing magnitude (lower index first on ties).

    The last block is shorter when ``kappa`` does not divide ``len(v)``.
    Block 0 is ``top_support(v, kappa)``, and the union of blocks ``j >= 2``
    is the support of ``tail(v, 2 * kappa)``.
    """
    v = as_signal(v)
    kappa = int(kappa)
    if kappa < 1:
        raise ValueError("blocks need kappa >= 1")
    order = np.argsort(-np.abs(v), kind="stable")
    return [order[i:i + kappa] for i in range(0, v.size, kappa)]


def shelling_block_steps(v, kappa, a, rtol=RTOL):
    """Per-block comparisons behind the shelling bound.

    For every ``j >= 1`` and ``i`` in block ``j``,
    ``|v_i| <= ||v_{B_{j-1}}||_a / kappa ** (1/a)``. Returns one
    :class:`InequalityCheck` per block ``j >= 1`` with the block maximum on
    the left.
    """
    v = as_signal(v)
    a = check_exponent(a)
    blocks = shelling_blocks(v, kappa)
    checks = []
    for prev, cur in zip(blocks, blocks[1:]):
        lhs = float(np.abs(v[cur]).max())
        rhs = lp_norm(v[prev], a) / _power_gap(kappa, a, np.inf)
        checks.append(InequalityCheck(lhs, rhs, leq(lhs, rhs, rtol=rtol)))
    return checks


def shelling_bound(v, kappa, a, b, rtol=RTOL):
    r"""Evaluate both sides of the shelling inequality

    .. math::
        \|v_{\mathrm{tail}(2\kappa)}\|_b \le
        \kappa^{1/b - 1/a}\, \|v_{\mathrm{tail}(\kappa)}\|_a ,
        \qquad 0 < a \le b,\ 2\kappa \le n.

    Returns
    -------
    ShellingResult
        ``lhs``, ``rhs``, whether ``lhs <= rhs`` within tolerance, and the
        sorted block decomposition (empty when ``kappa == 0``).
    """
    a, b = _check_pair(a, b)
    v = as_signal(v)
    kappa = int(kappa)
    if kappa < 0 or 2 * kappa > v.size:
        raise ValueError(f"need 0 <= 2*kappa <= n, got kappa={kappa}, n={v.size}")
    lhs = lp_norm(tail(v, 2 * kappa), b)
    if kappa == 0:
        # kappa ** (1/b - 1/a) blows up; the bound is vacuous unless v == 0.
        rhs = 0.0 if lhs == 0 else np.inf
        return ShellingResult(lhs, rhs, True, [])
    rhs = _power_gap(kappa, b, a) * lp_norm(tail(v, kappa), a)
    return ShellingResult(lhs, rhs, leq(lhs, rhs, rtol=rtol), shelling_blocks(v, kappa))
