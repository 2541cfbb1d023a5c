"""Alphabets, distortion matrices, blocks and empirical distributions.

Symbols are dense integer indices: source letters in ``[0, K)`` and
reproduction letters in ``[0, J)``.  Distortion matrices are stored as
``K x J`` float arrays with ``entries[x, xhat] = d(x, xhat)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

# Delta detection: a ratio is accepted as rational when a fraction with
# denominator <= RATIONAL_MAX_DEN lies within RATIONAL_TOL (relative).
RATIONAL_TOL = 1e-9
RATIONAL_MAX_DEN = 10_000


class DistortionError(ValueError):
    pass


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DistortionMatrix:
    """A ``K x J`` nonnegative single-letter distortion measure.

    ``delta`` is the lattice constant of the positive entries (0 when they
    are incommensurable or when the matrix is identically zero).
    """

    entries: np.ndarray
    d_max: float = field(init=False)
    delta: float = field(init=False)
    normalized: bool = field(init=False)

    def __post_init__(self):
        e = _readonly(self.entries)
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise DistortionError(f"distortion matrix must be 2-D, got shape {e.shape}")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise DistortionError("distortion entries must be finite and nonnegative")
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "d_max", float(e.max()))
        object.__setattr__(self, "normalized", bool(np.all(e.min(axis=1) == 0.0)))
        object.__setattr__(self, "delta", _lattice_constant(e))

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def J(self) -> int:
        return self.entries.shape[1]

    @property
    def degenerate(self) -> bool:
        """True when the distortion is identically zero."""
        return self.d_max == 0.0

    def digest(self) -> str:
        """Short stable hash of the entries (used as ``dist_hash`` in reports)."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.asarray(self.entries.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.entries, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, DistortionMatrix):
            return NotImplemented
        return self.entries.shape == other.entries.shape and bool(
            np.array_equal(self.entries, other.entries)
        )

    def __hash__(self):
        return hash(self.digest())

    @classmethod
    def hamming(cls, K: int, J: int | None = None) -> "DistortionMatrix":
        J = K if J is None else J
        e = np.ones((K, J))
        for i in range(min(K, J)):
            e[i, i] = 0.0
        return cls(e)


def _check_probs(probs, name: str) -> np.ndarray:
    p = _readonly(probs)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a nonempty vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} entries must be >= 0 and sum to 1 (sum={p.sum()!r})")
    return p


@dataclass(frozen=True, eq=False)
class Pmf:
    """Distribution over the source alphabet."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _check_probs(self.probs, "Pmf"))

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return bool(np.array_equal(self.probs, other.probs))

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __len__(self):
        return self.probs.size


@dataclass(frozen=True, eq=False)
class Qpmf:
    """Distribution over the reproduction alphabet."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _check_probs(self.probs, "Qpmf"))

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return bool(np.array_equal(self.probs, other.probs))

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __len__(self):
        return self.probs.size

    @classmethod
    def uniform(cls, J: int) -> "Qpmf":
        return cls(np.full(J, 1.0 / J))


def _block(symbols, alphabet: int, name: str) -> np.ndarray:
    s = np.array(symbols, dtype=np.int64)
    if s.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if s.size and (s.min() < 0 or s.max() >= alphabet):
        raise ValueError(f"{name} symbols must lie in [0, {alphabet})")
    s.setflags(write=False)
    return s


@dataclass(frozen=True, eq=False)
class SourceBlock:
    symbols: np.ndarray
    K: int

    def __post_init__(self):
        s = _block(self.symbols, self.K, "SourceBlock")
        if s.size < 1:
            raise ValueError("SourceBlock needs n >= 1")
        object.__setattr__(self, "symbols", s)

    @property
    def n(self) -> int:
        return self.symbols.size

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.K == other.K and bool(np.array_equal(self.symbols, other.symbols))

    def __hash__(self):
        return hash((self.K, self.symbols.tobytes()))


@dataclass(frozen=True, eq=False)
class ReproBlock:
    symbols: np.ndarray
    J: int

    def __post_init__(self):
        object.__setattr__(self, "symbols", _block(self.symbols, self.J, "ReproBlock"))

    @property
    def n(self) -> int:
        return self.symbols.size

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.J == other.J and bool(np.array_equal(self.symbols, other.symbols))

    def __hash__(self):
        return hash((self.J, self.symbols.tobytes()))


def as_matrix(d) -> DistortionMatrix:
    return d if isinstance(d, DistortionMatrix) else DistortionMatrix(d)


def as_source(x, K: int | None = None) -> SourceBlock:
    if isinstance(x, SourceBlock):
        return x
    arr = np.asarray(x, dtype=np.int64)
    return SourceBlock(arr, int(arr.max()) + 1 if K is None else K)


def normalize_distortion(d: DistortionMatrix) -> tuple[DistortionMatrix, Callable[[Pmf], float]]:
    """Subtract row minima so every source letter has a zero-cost reproduction.

    Returns the shifted matrix and ``shift(P) = sum_x P(x) min_xhat d(x, xhat)``
    computed on the original matrix.
    """
    d = as_matrix(d)
    row_min = d.entries.min(axis=1)
    shifted = DistortionMatrix(d.entries - row_min[:, None])

    def shift(p) -> float:
        probs = p.probs if isinstance(p, Pmf) else np.asarray(p, dtype=float)
        return float(probs @ row_min)

    return shifted, shift


def _rationalize(r: float) -> Fraction | None:
    f = Fraction(r).limit_denominator(RATIONAL_MAX_DEN)
    if abs(float(f) - r) <= RATIONAL_TOL * abs(r):
        return f
    return None


def _lattice_constant(entries: np.ndarray) -> float:
    pos = np.unique(entries[entries > 0])
    if pos.size == 0:
        return 0.0
    ref = float(pos[0])
    fracs = []
    for v in pos:
        f = _rationalize(float(v) / ref)
        if f is None:
            return 0.0
        fracs.append(f)
    # ref * f_i = ref/L * m_i with L = lcm of denominators; Delta = ref * gcd(m_i) / L
    L = reduce(math.lcm, (f.denominator for f in fracs))
    g = reduce(math.gcd, (f.numerator * (L // f.denominator) for f in fracs))
    return ref * g / L


def compute_delta(d: DistortionMatrix) -> float:
    """Largest Delta dividing every positive entry (0 if incommensurable or all-zero)."""
    return as_matrix(d).delta


def empirical(x: SourceBlock | Iterable[int], K: int | None = None) -> Pmf:
    x = as_source(x, K)
    counts = np.bincount(x.symbols, minlength=x.K)
    return Pmf(counts / x.n)


def block_distortion(x, xhat, d) -> float:
    """Additive distortion ``sum_i d(x_i, xhat_i)`` summed exactly (fsum)."""
    xs = x.symbols if isinstance(x, SourceBlock) else np.asarray(x, dtype=np.int64)
    ys = xhat.symbols if isinstance(xhat, ReproBlock) else np.asarray(xhat, dtype=np.int64)
    if xs.shape != ys.shape:
        raise ValueError(f"block length mismatch: {xs.size} vs {ys.size}")
    return math.fsum(as_matrix(d).entries[xs, ys].tolist())


def within(dist, nD: float):
    """Sphere-membership test ``dist <= nD`` with a small floating tolerance."""
    return dist <= nD + 1e-9 * max(1.0, abs(nD))


# --- plain-text formats -----------------------------------------------------


def parse_distortion(text: str) -> DistortionMatrix:
    """Parse ``"K J"`` followed by K rows of J reals."""
    tokens = text.split()
    if len(tokens) < 2:
        raise DistortionError("distortion file needs a 'K J' header")
    try:
        K, J = int(tokens[0]), int(tokens[1])
        vals = [float(t) for t in tokens[2:]]
    except ValueError as exc:
        raise DistortionError(f"malformed distortion file: {exc}") from None
    if len(vals) != K * J:
        raise DistortionError(f"expected {K * J} entries for a {K}x{J} matrix, got {len(vals)}")
    return DistortionMatrix(np.array(vals).reshape(K, J))


def read_distortion(path: str | Path) -> DistortionMatrix:
    return parse_distortion(Path(path).read_text())


def format_distortion(d: DistortionMatrix) -> str:
    lines = [f"{d.K} {d.J}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in d.entries]
    return "\n".join(lines) + "\n"


def parse_sequence(text: str, alphabet: int | None = None) -> np.ndarray:
    seq = np.array([int(t) for t in text.split()], dtype=np.int64)
    if alphabet is not None and seq.size and (seq.min() < 0 or seq.max() >= alphabet):
        raise ValueError(f"sequence symbols must lie in [0, {alphabet})")
    return seq


def read_sequence(path: str | Path, alphabet: int | None = None) -> np.ndarray:
    return parse_sequence(Path(path).read_text(), alphabet)
