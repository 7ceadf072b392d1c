"""Measurement ensembles, the measurement map and synthetic test signals.

All randomness flows through :func:`make_rng`, a Philox-4x64 counter-based
generator keyed by a ``numpy.random.SeedSequence`` built from integer keys.
The same keys give bit-identical draws on every platform numpy supports.
"""
import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .quasinorm import as_signal, sigma_k

__all__ = [
    "EnsembleKind",
    "TailModel",
    "MeasurementEnsemble",
    "SignalModel",
    "GroundTruth",
    "make_rng",
    "derive_seed",
    "realize",
    "measure",
    "generate_signal",
    "gaussian_rows",
    "write_vector",
    "read_vector",
    "write_ensemble",
    "read_ensemble",
    "SIGMA_EXPONENTS",
]

SIGMA_EXPONENTS = (0.5, 1.0, 2.0)


class EnsembleKind(str, enum.Enum):
    DENSE_GAUSSIAN = "dense_gaussian"
    COUNT_SKETCH = "count_sketch"


class TailModel(str, enum.Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    POWER_LAW = "power_law"


def make_rng(*keys):
    """Philox generator keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def derive_seed(*keys):
    """A 63-bit integer seed derived from `keys` (stable across runs)."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1] & 0x7FFFFFFF) << 32)


def gaussian_rows(n, k):
    """Rows ``ceil(6 * k * ln(n / k))`` used for dense Gaussian recovery at sparsity `k`."""
    return int(math.ceil(6 * k * math.log(n / k)))


@dataclass(frozen=True)
class MeasurementEnsemble:
    """Descriptor of a random measurement matrix.

    For ``COUNT_SKETCH`` the row count is ``rows_r * buckets_b`` and `m`
    may be left as ``None``.
    """

    kind: EnsembleKind
    n: int
    seed: int
    m: int = None
    rows_r: int = None
    buckets_b: int = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EnsembleKind(self.kind))
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.kind is EnsembleKind.COUNT_SKETCH:
            if not self.rows_r or not self.buckets_b or self.rows_r < 1 or self.buckets_b < 1:
                raise ValueError("count sketch needs positive rows_r and buckets_b")
            m = self.rows_r * self.buckets_b
            if self.m is not None and self.m != m:
                raise ValueError(f"m={self.m} disagrees with rows_r*buckets_b={m}")
            object.__setattr__(self, "m", m)
        elif self.m is None or self.m < 1:
            raise ValueError("dense ensemble needs m >= 1")

    @property
    def shape(self):
        return (self.m, self.n)

    def to_dict(self):
        out = {"kind": self.kind.value, "m": self.m, "n": self.n, "seed": self.seed}
        if self.kind is EnsembleKind.COUNT_SKETCH:
            out.update(rows_r=self.rows_r, buckets_b=self.buckets_b)
        return out


def realize(ensemble):
    """Materialize the matrix described by `ensemble`.

    ``DENSE_GAUSSIAN`` gives an ``m x n`` array with i.i.d. N(0, 1/m)
    entries. ``COUNT_SKETCH`` gives a CSC matrix in which column ``j`` holds
    one ``+-1`` per repetition ``t``, at row ``t * buckets_b + h_t(j)``.
    """
    rng = make_rng(ensemble.seed)
    m, n = ensemble.shape
    if ensemble.kind is EnsembleKind.DENSE_GAUSSIAN:
        if m > n:
            warnings.warn(f"dense ensemble with m={m} > n={n}", stacklevel=2)
        phi = rng.standard_normal((m, n)) / math.sqrt(m)
        phi.setflags(write=False)
        return phi

    r, b = ensemble.rows_r, ensemble.buckets_b
    buckets = rng.integers(0, b, size=(r, n))
    signs = 2.0 * rng.integers(0, 2, size=(r, n)) - 1.0
    rows = buckets + (np.arange(r) * b)[:, None]
    return sp.csc_matrix(
        (signs.T.ravel(), rows.T.ravel(), np.arange(0, r * n + 1, r)),
        shape=(m, n),
    )


def measure(phi, x, noise_sigma=0.0, seed=None):
    """Return ``phi @ x + e`` with ``e ~ N(0, noise_sigma^2 I)`` drawn from `seed`."""
    x = as_signal(x)
    if phi.shape[1] != x.size:
        raise ValueError(f"matrix has {phi.shape[1]} columns, signal has length {x.size}")
    y = np.asarray(phi @ x, dtype=np.float64).reshape(-1)
    if noise_sigma:
        if seed is None:
            raise ValueError("noisy measurement needs a seed")
        y = y + noise_sigma * make_rng(seed).standard_normal(y.size)
    return y


@dataclass(frozen=True)
class SignalModel:
    """Planted k-sparse head plus an optional tail.

    Head magnitudes are uniform on `head_range` with random signs. The tail
    ``e'`` lives off the head support: i.i.d. ``N(0, tail_param^2)`` for
    ``GAUSSIAN``, or magnitudes ``tail_scale * i ** -tail_param`` (i = 1,
    2, ...) at random positions and signs for ``POWER_LAW``.
    """

    n: int
    k: int
    head_range: tuple = (1.0, 10.0)
    tail_model: TailModel = TailModel.NONE
    tail_param: float = 0.0
    tail_scale: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tail_model", TailModel(self.tail_model))
        object.__setattr__(self, "head_range", tuple(float(h) for h in self.head_range))
        if not 0 <= self.k <= self.n:
            raise ValueError(f"need 0 <= k <= n, got k={self.k}, n={self.n}")
        lo, hi = self.head_range
        if not 0 < lo <= hi:
            raise ValueError("head_range must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class GroundTruth:
    head: np.ndarray
    tail: np.ndarray
    support: np.ndarray
    sigma: dict = field(default_factory=dict)


def generate_signal(model):
    """Draw ``x = f + e'`` from `model`.

    Returns ``(x, truth)`` where ``truth.sigma[q]`` is ``sigma_k(x)_q`` for
    q in 1/2, 1, 2.
    """
    rng = make_rng(model.seed)
    n, k = model.n, model.k
    support = np.sort(rng.choice(n, size=k, replace=False)).astype(np.intp)
    lo, hi = model.head_range
    f = np.zeros(n)
    f[support] = rng.uniform(lo, hi, size=k) * rng.choice([-1.0, 1.0], size=k)

    e = np.zeros(n)
    off = np.setdiff1d(np.arange(n), support)
    if model.tail_model is TailModel.GAUSSIAN:
        e[off] = model.tail_param * rng.standard_normal(off.size)
    elif model.tail_model is TailModel.POWER_LAW:
        mags = model.tail_scale * np.arange(1, off.size + 1, dtype=np.float64) ** -model.tail_param
        e[rng.permutation(off)] = mags * rng.choice([-1.0, 1.0], size=off.size)

    x = f + e
    sigma = {q: sigma_k(x, k, q) for q in SIGMA_EXPONENTS}
    return x, GroundTruth(head=f, tail=e, support=support, sigma=sigma)


def write_vector(path, v):
    v = as_signal(v)
    with open(path, "w") as fh:
        fh.write(f"# n={v.size}\n")
        for value in v:
            fh.write(f"{float(value)!r}\n")


def read_vector(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing '# n=<n>' header")
    key, _, value = lines[0].lstrip("#").strip().partition("=")
    if key.strip() != "n":
        raise ValueError(f"{path}: malformed header {lines[0]!r}")
    n = int(value)
    values = np.array([float(ln) for ln in lines[1:]], dtype=np.float64)
    if values.size != n:
        raise ValueError(f"{path}: header says n={n}, found {values.size} values")
    return as_signal(values)


def write_ensemble(path, ensemble):
    with open(path, "w") as fh:
        for key, value in ensemble.to_dict().items():
            fh.write(f"{key} = {value}\n")


def read_ensemble(path):
    fields = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            fields[key.strip()] = value.strip()
    unknown = set(fields) - {"kind", "m", "n", "seed", "rows_r", "buckets_b"}
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    try:
        return MeasurementEnsemble(
            kind=fields["kind"],
            n=int(fields["n"]),
            seed=int(fields["seed"]),
            m=int(fields["m"]) if "m" in fields else None,
            rows_r=int(fields["rows_r"]) if "rows_r" in fields else None,
            buckets_b=int(fields["buckets_b"]) if "buckets_b" in fields else None,
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing key {exc.args[0]!r}") from None

