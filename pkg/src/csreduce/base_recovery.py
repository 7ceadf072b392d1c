"""Base recovery schemes and the guarantees they are declared to satisfy.

Two families are provided:

* greedy recovery from dense Gaussian measurements (CoSaMP and iterative
  hard thresholding), declared as l2/l1 schemes;
* CountSketch median estimation followed by heavy-hitter selection,
  declared as a nonuniform l2/l2 scheme.

Every recoverer exposes ``recover_support(y) -> (indices, values)`` for its
sparse output and ``recover(y)`` for the dense vector.
"""
import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import quasinorm as qn
from .measurement import derive_seed, generate_signal, measure

logger = logging.getLogger(__name__)

__all__ = [
    "GuaranteeSpec",
    "RecoveryDivergence",
    "BaseRecoverer",
    "CoSaMPRecoverer",
    "IHTRecoverer",
    "CountSketchRecoverer",
    "ConstantEstimate",
    "cosamp_recover",
    "iht_recover",
    "countsketch_recover",
    "countsketch_estimates",
    "estimate_constant",
]

TAIL_LEVELS = ("k", "2k")


@dataclass(frozen=True)
class GuaranteeSpec:
    """The statement ``||x - R(y)||_p <= C * k**(1/p - 1/q) * ||x_tail(level)||_q``.

    ``C=None`` means the constant has not been calibrated yet. ``delta`` is
    the failure probability of a nonuniform ("for each") scheme and ``None``
    for a uniform ("for all") one.
    """

    p: float
    q: float
    k: int
    C: Optional[float] = None
    tail_level: str = "k"
    delta: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "p", qn.check_exponent(self.p))
        object.__setattr__(self, "q", qn.check_exponent(self.q))
        if self.tail_level not in TAIL_LEVELS:
            raise ValueError(f"tail_level must be one of {TAIL_LEVELS}")
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.C is not None and not self.C > 0:
            raise ValueError("constant must be positive")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def uniform(self):
        return self.delta is None

    @property
    def tail_sparsity(self):
        return 2 * self.k if self.tail_level == "2k" else self.k

    def with_constant(self, C):
        return dataclasses.replace(self, C=C)

    def scale(self, x):
        """``k**(1/p - 1/q) * ||x_tail(level)||_q`` (the right side without C)."""
        tail_norm = qn.sigma_k(x, min(self.tail_sparsity, len(x)), self.q)
        if tail_norm == 0:
            return 0.0
        return float(self.k) ** (1.0 / self.p - 1.0 / self.q) * tail_norm

    def error(self, x, xhat):
        return qn.lp_norm(np.asarray(x) - np.asarray(xhat), self.p)

    def ratio(self, x, xhat):
        """Error over scale; ``nan`` when the tail vanishes."""
        denom = self.scale(x)
        if denom == 0:
            return float("nan")
        return self.error(x, xhat) / denom

    def holds(self, x, xhat, C=None, rtol=qn.RTOL):
        C = self.C if C is None else C
        if C is None:
            raise ValueError("guarantee constant is not calibrated")
        return qn.leq(self.error(x, xhat), C * self.scale(x), rtol=rtol)


class RecoveryDivergence(RuntimeError):
    pass


def _as_operator(phi):
    if sp.issparse(phi):
        return phi.tocsc()
    return np.asarray(phi, dtype=np.float64)


def _columns(phi, idx):
    sub = phi[:, idx]
    return sub.toarray() if sp.issparse(sub) else sub


def _dense_from_support(n, idx, vals):
    out = np.zeros(n)
    out[idx] = vals
    return out


def _check_dims(phi, y):
    y = qn.as_signal(y)
    if phi.shape[0] != y.size:
        raise ValueError(f"matrix has {phi.shape[0]} rows, measurement has length {y.size}")
    return y


def _least_squares(A, y):
    sol, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank >= A.shape[1]:
        return sol, False
    gram = A.T @ A
    lam = 1e-10 * max(np.trace(gram) / gram.shape[0], 1e-300)
    return np.linalg.solve(gram + lam * np.eye(gram.shape[0]), A.T @ y), True


def cosamp_recover(phi, y, k, iters=50, tol=1e-7, full_output=False):
    """Compressive sampling matching pursuit.

    Each iteration merges the ``2k`` largest entries of the proxy
    ``phi.T @ r`` with the current support, solves least squares on the
    merged support (at most ``3k`` columns) and prunes to ``k`` terms.

    Parameters
    ----------
    phi : (m, n) array or sparse matrix
    y : (m,) array
    k : int
        Sparsity of the estimate, ``k >= 1``.
    iters : int
        Iteration cap.
    tol : float
        Stop once ``||y - phi x|| <= tol * ||y||``.
    full_output : bool
        Also return a dict with ``iterations``, ``converged``,
        ``regularized`` and ``residual``.

    Returns
    -------
    x : (n,) array with at most ``k`` nonzeros; the iterate with the
        smallest residual if the cap is reached.
    """
    phi = _as_operator(phi)
    y = _check_dims(phi, y)
    n = phi.shape[1]
    if k < 1:
        raise ValueError("cosamp needs k >= 1")
    k = min(int(k), n)

    x = np.zeros(n)
    ynorm = qn.lp_norm(y, 2)
    info = {"iterations": 0, "converged": True, "regularized": False, "residual": ynorm}
    if ynorm == 0:
        return (x, info) if full_output else x

    best_x, best_res = x, ynorm
    resid = y
    support = np.empty(0, dtype=np.intp)
    converged = False
    for it in range(1, iters + 1):
        proxy = np.asarray(phi.T @ resid).reshape(-1)
        merged = np.union1d(qn.top_support(proxy, min(2 * k, n)), support)
        coef, reg = _least_squares(_columns(phi, merged), y)
        info["regularized"] |= reg
        keep = qn.top_support(coef, min(k, merged.size))
        new_support = merged[keep]
        x = _dense_from_support(n, new_support, coef[keep])
        resid = y - np.asarray(phi @ x).reshape(-1)
        res = qn.lp_norm(resid, 2)
        info["iterations"] = it
        if res < best_res:
            best_x, best_res = x, res
        if res <= tol * ynorm:
            converged = True
            break
        if np.array_equal(new_support, support):
            # same support gives the same least-squares solution: fixed point
            converged = True
            break
        support = new_support

    info["converged"] = converged
    info["residual"] = best_res
    if not converged:
        logger.debug("cosamp hit the %d-iteration cap, residual %.3g", iters, best_res)
    return (best_x, info) if full_output else best_x


def iht_recover(phi, y, k, iters=500, step=0.65, tol=1e-10, full_output=False):
    """Iterative hard thresholding ``x <- H_k(x + step * phi.T (y - phi x))``.

    Raises
    ------
    RecoveryDivergence
        If the residual norm doubles five iterations in a row.
    """
    phi = _as_operator(phi)
    y = _check_dims(phi, y)
    n = phi.shape[1]
    k = int(k)
    if k < 0:
        raise ValueError("k must be non-negative")
    x = np.zeros(n)
    ynorm = qn.lp_norm(y, 2)
    info = {"iterations": 0, "converged": True, "residual": ynorm}
    if ynorm == 0 or k == 0:
        return (x, info) if full_output else x

    resid = y
    res = ynorm
    doublings = 0
    converged = False
    for it in range(1, iters + 1):
        x = qn.head(x + step * np.asarray(phi.T @ resid).reshape(-1), min(k, n))
        resid = y - np.asarray(phi @ x).reshape(-1)
        new_res = qn.lp_norm(resid, 2)
        doublings = doublings + 1 if new_res >= 2 * res else 0
        if doublings >= 5:
            raise RecoveryDivergence(
                f"iht diverged at iteration {it}: residual {new_res:.3g} "
                f"(step={step}; try a smaller step)"
            )
        info["iterations"] = it
        res = new_res
        if res <= tol * ynorm:
            converged = True
            break
    info["converged"] = converged
    info["residual"] = res
    return (x, info) if full_output else x


def _sketch_tables(phi, rows_r, buckets_b):
    """Recover bucket rows and signs, shaped ``(n, rows_r)``, from the CSC layout."""
    phi = sp.csc_matrix(phi)
    n = phi.shape[1]
    if phi.shape[0] != rows_r * buckets_b:
        raise ValueError("sketch shape disagrees with rows_r * buckets_b")
    if not np.array_equal(phi.indptr, np.arange(0, rows_r * n + 1, rows_r)):
        raise ValueError("each sketch column must hold exactly rows_r entries")
    rows = phi.indices.reshape(n, rows_r)
    expected_rep = rows // buckets_b
    if not np.array_equal(np.sort(expected_rep, axis=1), np.broadcast_to(np.arange(rows_r), rows.shape)):
        raise ValueError("each sketch column needs one entry per repetition")
    order = np.argsort(rows, axis=1)
    return np.take_along_axis(rows, order, 1), np.take_along_axis(phi.data.reshape(n, rows_r), order, 1)


def countsketch_estimates(phi, y, rows_r, buckets_b):
    """Per-coordinate estimates ``median_t sign_t(j) * y[row_t(j)]``."""
    rows, signs = _sketch_tables(phi, rows_r, buckets_b)
    y = _check_dims(phi, y)
    return np.median(signs * y[rows], axis=1)


def countsketch_recover(sketch_y, phi, rows_r, buckets_b, k_report):
    """Median estimates for every coordinate, pruned to the `k_report` largest."""
    if rows_r % 2 == 0:
        raise ValueError("rows_r must be odd so the median is a single estimate")
    return qn.head(countsketch_estimates(phi, sketch_y, rows_r, buckets_b), min(k_report, phi.shape[1]))


class BaseRecoverer:
    """A recovery procedure bound to a measurement matrix.

    Subclasses implement :meth:`recover_support`. Instances are immutable
    once built and may be shared across threads.
    """

    name = "base"

    def __init__(self, phi, guarantee, output_sparsity=None):
        self.phi = phi
        self.guarantee = guarantee
        self.output_sparsity = output_sparsity

    @property
    def n(self):
        return self.phi.shape[1]

    def with_guarantee(self, guarantee):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.guarantee = guarantee
        return clone

    def recover_support(self, y):
        """Return ``(indices, values, info)`` describing the sparse output."""
        raise NotImplementedError

    def recover(self, y, full_output=False):
        idx, vals, info = self.recover_support(y)
        x = _dense_from_support(self.n, idx, vals)
        return (x, info) if full_output else x

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, guarantee={self.guarantee})"


def _sparse_parts(x):
    idx = np.flatnonzero(x)
    return idx, x[idx]


class CoSaMPRecoverer(BaseRecoverer):
    """CoSaMP at sparsity `k`, declared l2/l1 (uniform)."""

    name = "cosamp"

    def __init__(self, phi, k, iters=50, tol=1e-7, guarantee=None):
        if guarantee is None:
            guarantee = GuaranteeSpec(p=2, q=1, k=k)
        super().__init__(_as_operator(phi), guarantee, output_sparsity=k)
        self.k, self.iters, self.tol = k, iters, tol

    def recover_support(self, y):
        x, info = cosamp_recover(self.phi, y, self.k, self.iters, self.tol, full_output=True)
        return (*_sparse_parts(x), info)


class IHTRecoverer(BaseRecoverer):
    """Iterative hard thresholding at sparsity `k`, declared l2/l1 (uniform)."""

    name = "iht"

    def __init__(self, phi, k, iters=500, step=0.65, guarantee=None):
        if guarantee is None:
            guarantee = GuaranteeSpec(p=2, q=1, k=k)
        super().__init__(_as_operator(phi), guarantee, output_sparsity=k)
        self.k, self.iters, self.step = k, iters, step

    def recover_support(self, y):
        x, info = iht_recover(self.phi, y, self.k, self.iters, self.step, full_output=True)
        return (*_sparse_parts(x), info)


class CountSketchRecoverer(BaseRecoverer):
    """CountSketch heavy hitters, declared l2/l2 and nonuniform.

    The recovery reads the ``rows_r`` buckets of every coordinate, takes the
    median of the sign-corrected bucket values, and reports the `k_report`
    largest estimates.
    """

    name = "countsketch"

    def __init__(self, phi, rows_r, buckets_b, k_report, delta=0.05, guarantee=None):
        if rows_r % 2 == 0:
            raise ValueError("rows_r must be odd so the median is a single estimate")
        phi = sp.csc_matrix(phi)
        self._rows, self._signs = _sketch_tables(phi, rows_r, buckets_b)
        if guarantee is None:
            guarantee = GuaranteeSpec(p=2, q=2, k=k_report, delta=delta)
        super().__init__(phi, guarantee, output_sparsity=k_report)
        self.rows_r, self.buckets_b, self.k_report = rows_r, buckets_b, k_report

    def estimates(self, y):
        y = _check_dims(self.phi, y)
        return np.median(self._signs * y[self._rows], axis=1)

    def recover_support(self, y):
        est = self.estimates(y)
        idx = qn.top_support(est, min(self.k_report, est.size))
        return idx, est[idx], {}


@dataclass
class ConstantEstimate:
    """Per-trial ratios ``error / scale`` from a calibration run.

    Trials whose tail vanishes carry no ratio; they are counted in
    ``exact_trials`` and scored by absolute error instead.
    """

    ratios: np.ndarray
    exact_trials: int = 0
    exact_ok: int = 0

    @property
    def max(self):
        return float(np.max(self.ratios)) if self.ratios.size else float("nan")

    @property
    def median(self):
        return float(np.median(self.ratios)) if self.ratios.size else float("nan")


def estimate_constant(recoverer, signal_model, trials, master_seed=0, exact_atol=1e-6):
    """Calibrate the constant of a recoverer's declared guarantee.

    Parameters
    ----------
    recoverer : BaseRecoverer or callable
        A fixed recoverer (uniform use), or ``f(seed) -> BaseRecoverer`` to
        redraw the measurement matrix for every trial (nonuniform use).
    signal_model : SignalModel
        Its ``seed`` is replaced per trial by ``derive_seed(master_seed, i)``.
    trials : int

    Returns
    -------
    ConstantEstimate
        ``max`` is the empirical constant to feed into the reduction.
    """
    ratios = []
    exact = exact_ok = 0
    for i in range(trials):
        seed = derive_seed(master_seed, i)
        rec = recoverer if isinstance(recoverer, BaseRecoverer) else recoverer(derive_seed(seed, 2))
        model = dataclasses.replace(signal_model, seed=derive_seed(seed, 0))
        x, _ = generate_signal(model)
        y = measure(rec.phi, x, model.noise_sigma, seed=derive_seed(seed, 1))
        w = rec.recover(y)
        spec = rec.guarantee
        denom = spec.scale(x)
        if denom == 0:
            exact += 1
            exact_ok += spec.error(x, w) <= exact_atol * max(qn.lp_norm(x, 2), 1e-300)
            continue
        ratios.append(spec.error(x, w) / denom)
    return ConstantEstimate(np.asarray(ratios, dtype=np.float64), exact, int(exact_ok))
