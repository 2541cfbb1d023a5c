"""Ground-truth single-selection success probabilities.

Three independent exact routes to ``P_s = sum_{xhat: d(x,xhat) <= nD} W(xhat)``:
brute-force enumeration, a dynamic program over (reproduction type,
lattice distortion) and, for a fixed memoryless Q, a lattice convolution of
the per-letter distortion laws.  A seeded Monte Carlo estimator covers sizes
beyond the exact routes.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln
from scipy.stats import norm

from .core import DistortionMatrix, SourceBlock, as_matrix, as_source, within

ENUM_LIMIT = 10**7
DP_CELL_LIMIT = 5 * 10**7
EPS_BITS = 16
SNAP = 1e-9


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class SuccessProb:
    """A probability held in the log domain, tagged with how it was obtained."""

    log_value: float
    branch: str = "positive_rate"  # or "zero_rate"
    source: str = "exact_enum"  # saddle_estimate | exact_enum | exact_dp | convolution | quadrature | monte_carlo
    components: dict | None = None
    log_lower: float | None = None
    log_upper: float | None = None
    stderr: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def _log(v: float) -> float:
    return math.log(v) if v > 0 else -math.inf


# --- mixture weight -----------------------------------------------------------


def log_mixture_weight_counts(counts) -> float:
    """ln W for a reproduction block with letter counts ``counts`` (Dirichlet-multinomial)."""
    counts = np.asarray(counts, dtype=float)
    J = counts.size
    n = counts.sum()
    return float(gammaln(J) + gammaln(counts + 1).sum() - gammaln(n + J))


def mixture_weight(xhat, J: int) -> float:
    """ln W(xhat) for the uniform mixture of all memoryless sources on J letters."""
    sym = np.asarray(getattr(xhat, "symbols", xhat), dtype=np.int64)
    return log_mixture_weight_counts(np.bincount(sym, minlength=J))


# --- enumeration --------------------------------------------------------------


def _all_blocks(n: int, J: int, chunk: int = 1 << 18):
    """Yield all J^n blocks (lexicographic, as int arrays) in chunks."""
    total = J**n
    powers = J ** np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk), dtype=np.int64)
        yield (idx[:, None] // powers[None, :]) % J


def _enum_guard(n, J):
    if J**n > ENUM_LIMIT:
        raise OracleSizeError(f"J^n = {J}^{n} exceeds the enumeration limit {ENUM_LIMIT}")


def success_exact_enum(x, d, D: float) -> SuccessProb:
    """Sum W(xhat) over the whole distortion sphere by listing every block."""
    dm = as_matrix(d)
    x = as_source(x, dm.K)
    n, J = x.n, dm.J
    _enum_guard(n, J)
    nD = n * D
    lfact = gammaln(np.arange(n + 2) + 1.0)
    base = gammaln(J) - gammaln(n + J)
    parts = []
    for blocks in _all_blocks(n, J):
        dist = dm.entries[x.symbols[None, :], blocks].sum(axis=1)
        hit = within(dist, nD)
        if not hit.any():
            continue
        b = blocks[hit]
        counts = np.stack([(b == j).sum(axis=1) for j in range(J)], axis=1)
        parts.extend(np.exp(base + lfact[counts].sum(axis=1)).tolist())
    return SuccessProb(_log(math.fsum(parts)), source="exact_enum")


def total_mixture_mass(n: int, J: int) -> float:
    """sum over all J^n blocks of W; equals 1."""
    _enum_guard(n, J)
    lfact = gammaln(np.arange(n + 2) + 1.0)
    base = gammaln(J) - gammaln(n + J)
    parts = []
    for blocks in _all_blocks(n, J):
        counts = np.stack([(blocks == j).sum(axis=1) for j in range(J)], axis=1)
        parts.extend(np.exp(base + lfact[counts].sum(axis=1)).tolist())
    return math.fsum(parts)


# --- lattices -------------------------------------------------------------------


@dataclass(frozen=True)
class DistortionLattice:
    """Integer lattice for distortion values: ``d ~ unit * k``.

    With ``delta > 0`` the lattice is exact.  Otherwise ``unit = grid_eps`` and
    entries are rounded down (``mode='floor'``) or up (``mode='ceil'``).
    """

    unit: float
    levels: np.ndarray  # K x J integers
    exact: bool
    mode: str = "exact"

    @property
    def max_index(self) -> int:
        return int(self.levels.max())

    def threshold(self, nD: float) -> int:
        return int(math.floor(nD / self.unit + SNAP))


def make_lattice(d: DistortionMatrix, mode: str = "floor") -> DistortionLattice:
    d = as_matrix(d)
    if d.degenerate:
        return DistortionLattice(1.0, np.zeros(d.entries.shape, dtype=np.int64), True)
    if d.delta > 0:
        lv = np.rint(d.entries / d.delta).astype(np.int64)
        return DistortionLattice(d.delta, lv, True)
    eps = d.d_max / 2**EPS_BITS
    q = d.entries / eps
    lv = np.floor(q + SNAP) if mode == "floor" else np.ceil(q - SNAP)
    return DistortionLattice(eps, lv.astype(np.int64), False, mode)


# --- dynamic program over (type, distortion) ------------------------------------


def _compositions(m: int, J: int):
    """All length-J nonnegative integer vectors summing to m."""
    for cut in itertools.combinations(range(m + J - 1), J - 1):
        prev = -1
        out = []
        for c in cut:
            out.append(c - prev - 1)
            prev = c
        out.append(m + J - 1 - prev - 1)
        yield out


def _dp_log_sphere_mass(x: SourceBlock, lat: DistortionLattice, J: int, nD: float) -> float:
    n = x.n
    thr = lat.threshold(nD)
    if thr < 0:
        return -math.inf
    counts = np.bincount(x.symbols, minlength=lat.levels.shape[0])
    E = min(int((counts * lat.levels.max(axis=1)).sum()), thr)
    shape = (n + 1,) * (J - 1) + (E + 1,)
    cells = math.prod(shape)
    if cells > DP_CELL_LIMIT:
        raise OracleSizeError(
            f"DP state space {cells} cells exceeds {DP_CELL_LIMIT}; use enumeration or Monte Carlo"
        )
    # table[t_0..t_{J-2}, e] = (number of partial blocks) / J^(letters so far)
    table = np.zeros(shape)
    table[(0,) * J] = 1.0
    lfact = gammaln(np.arange(n + 2) + 1.0)
    used = 0
    for a, m in enumerate(counts):
        if m == 0:
            continue
        new = np.zeros(shape)
        lv = lat.levels[a]
        for comp in _compositions(int(m), J):
            shift_e = int(np.dot(comp, lv))
            if shift_e > E:
                continue
            w = math.exp(lfact[m] - lfact[np.asarray(comp)].sum() - m * math.log(J))
            dst = tuple(slice(c, n + 1) for c in comp[:-1]) + (slice(shift_e, E + 1),)
            src = tuple(slice(0, n + 1 - c) for c in comp[:-1]) + (slice(0, E + 1 - shift_e),)
            new[dst] += w * table[src]
        table = new
        used += int(m)
    # collapse distortion axis (all retained levels are <= thr by construction)
    mass = table.sum(axis=-1)
    if J == 1:
        return _log(float(mass))  # W is a point mass on the single block
    idx = np.nonzero(mass > 0)
    if len(idx[0]) == 0:
        return -math.inf
    partial = np.stack(idx, axis=1) if J > 1 else np.zeros((1, 0), dtype=np.int64)
    last = n - partial.sum(axis=1)
    tcounts = np.concatenate([partial, last[:, None]], axis=1)
    logw = gammaln(J) + lfact[tcounts].sum(axis=1) - gammaln(n + J)
    terms = logw + n * math.log(J) + np.log(mass[idx])
    top = terms.max()
    return float(top + math.log(math.fsum(np.exp(terms - top).tolist())))


def success_exact_dp(x, d, D: float) -> SuccessProb:
    """Exact P_s by dynamic programming over reproduction types and lattice distortion.

    For incommensurable matrices the result is a certified bracket
    (``log_lower``, ``log_upper``) from ceil/floor rounding on an
    ``eps = d_max / 2**16`` lattice; ``log_value`` is their midpoint in log space.
    """
    dm = as_matrix(d)
    x = as_source(x, dm.K)
    nD = x.n * D
    if dm.delta > 0 or dm.degenerate:
        lv = _dp_log_sphere_mass(x, make_lattice(dm), dm.J, nD)
        return SuccessProb(lv, source="exact_dp")
    hi = _dp_log_sphere_mass(x, make_lattice(dm, "floor"), dm.J, nD)
    lo = _dp_log_sphere_mass(x, make_lattice(dm, "ceil"), dm.J, nD)
    mid = 0.5 * (lo + hi) if math.isfinite(lo) else hi
    return SuccessProb(mid, source="exact_dp", log_lower=lo, log_upper=hi)


# --- fixed-Q convolution ----------------------------------------------------------


def _letter_pmf(levels_row, q, size):
    pmf = np.zeros(size)
    np.add.at(pmf, levels_row, q)
    return pmf


def _pmf_power(pmf, m, cap):
    """m-fold convolution truncated to indices <= cap (binary powering)."""
    out = np.zeros(cap + 1)
    out[0] = 1.0
    base = pmf[: cap + 1].copy()
    while m:
        if m & 1:
            out = np.convolve(out, base)[: cap + 1]
        m >>= 1
        if m:
            base = np.convolve(base, base)[: cap + 1]
    return out


def _conv_log_mass(x: SourceBlock, lat: DistortionLattice, q, nD: float) -> float:
    thr = lat.threshold(nD)
    if thr < 0:
        return -math.inf
    if thr + 1 > DP_CELL_LIMIT:
        raise OracleSizeError(f"lattice of {thr + 1} cells exceeds {DP_CELL_LIMIT}")
    counts = np.bincount(x.symbols, minlength=lat.levels.shape[0])
    total = np.zeros(thr + 1)
    total[0] = 1.0
    for a, m in enumerate(counts):
        if m == 0:
            continue
        pmf = _letter_pmf(np.minimum(lat.levels[a], thr + 1), q, thr + 2)
        total = np.convolve(total, _pmf_power(pmf, int(m), thr))[: thr + 1]
    return _log(math.fsum(total.tolist()))


def success_given_q_convolution(x, d, D: float, q) -> SuccessProb:
    """Exact Pr{d(x, Xhat) <= nD} for Xhat i.i.d. from q, by lattice convolution."""
    dm = as_matrix(d)
    x = as_source(x, dm.K)
    qa = np.asarray(getattr(q, "probs", q), dtype=float)
    nD = x.n * D
    if dm.delta > 0 or dm.degenerate:
        return SuccessProb(_conv_log_mass(x, make_lattice(dm), qa, nD), source="convolution")
    hi = _conv_log_mass(x, make_lattice(dm, "floor"), qa, nD)
    lo = _conv_log_mass(x, make_lattice(dm, "ceil"), qa, nD)
    mid = 0.5 * (lo + hi) if math.isfinite(lo) else hi
    return SuccessProb(mid, source="convolution", log_lower=lo, log_upper=hi)


def success_quadrature(x, d, D: float, nodes: int = 400) -> SuccessProb:
    """Binary reproduction alphabet only: integrate the fixed-Q convolution over Q = (u, 1-u)
    with Gauss-Legendre quadrature (exact for n < 2 * nodes)."""
    dm = as_matrix(d)
    if dm.J != 2:
        raise ValueError("quadrature route is implemented for J = 2")
    t, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * (t + 1.0)
    vals = [w_k * 0.5 * math.exp(success_given_q_convolution(x, dm, D, [uk, 1 - uk]).log_value)
            for uk, w_k in zip(u, w)]
    return SuccessProb(_log(math.fsum(vals)), source="quadrature")


# --- Monte Carlo -----------------------------------------------------------------


def wilson_interval(k: int, n: int, z: float | None = None) -> tuple[float, float]:
    z = norm.ppf(0.975) if z is None else z
    phat = k / n
    den = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / den
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def success_monte_carlo(x, d, D: float, trials: int, seed: int, batch: int = 65536) -> SuccessProb:
    """Frequency of W-drawn blocks inside the sphere, with a 95% Wilson interval."""
    if trials < 10_000:
        raise ValueError("Monte Carlo estimator needs at least 10^4 trials")
    dm = as_matrix(d)
    x = as_source(x, dm.K)
    n, J = x.n, dm.J
    nD = n * D
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        q = rng.dirichlet(np.ones(J), size=b)
        cum = np.cumsum(q, axis=1)
        u = rng.random((b, n))
        letters = (u[:, :, None] >= cum[:, None, :-1]).sum(axis=2)
        dist = dm.entries[x.symbols[None, :], letters].sum(axis=1)
        hits += int(within(dist, nD).sum())
        done += b
    lo, hi = wilson_interval(hits, trials)
    est = hits / trials
    return SuccessProb(_log(est), source="monte_carlo", log_lower=_log(lo), log_upper=_log(hi),
                       stderr=math.sqrt(est * (1 - est) / trials), extra={"hits": hits, "trials": trials})


# --- regression fixtures -----------------------------------------------------------


def instance_hash(x, d, D: float) -> str:
    dm = as_matrix(d)
    x = as_source(x, dm.K)
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(x.symbols, dtype="<i8").tobytes())
    h.update(dm.digest().encode())
    h.update(repr(float(D)).encode())
    return h.hexdigest()[:16]


def export_fixtures(instances, path, method=success_exact_dp) -> dict:
    """Write ``{instance hash: log P_s}`` for ``(x, d, D)`` instances as JSON."""
    out = {instance_hash(x, d, D): method(x, d, D).log_value for x, d, D in instances}
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


def load_fixtures(path) -> dict:
    return json.loads(Path(path).read_text())
