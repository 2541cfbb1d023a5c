"""LZ78 incremental parsing and the LZ-weighted random coding distribution.

Code lengths are in bits here (the LZ literature's unit); success
probabilities are still carried as ``SuccessProb`` with natural logs.

The code-length functional is the phrase-count bound
``LZ(xhat) = (c + 1) log2(2 A (c + 1))`` with ``A`` the alphabet size of
``xhat`` (the reproduction alphabet, J).  ``lz_codelength_pair`` also
reports the value with ``A = K`` for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .codec import BLOCK, MAX_SCAN_CAP, EncodeResult
from .core import DistortionMatrix, ReproBlock, as_matrix, as_source, within
from .exact import OracleSizeError, SuccessProb, success_given_q_convolution
from .prefix_code import elias_delta, length_nats

LN2 = math.log(2)
ENUM_LIMIT = 10**7  # full enumeration of J^n reproduction blocks
FS_LIMIT = 1 << 20  # fs_lower_bound enumeration (n <= 20 for J = 2)
REJECTION_MAX_N = 20
MAX_DISTINCT_N = 24


# --- parsing -----------------------------------------------------------------------


@dataclass(frozen=True)
class LzParse:
    phrases: tuple  # (prefix index, letter); index 0 is the empty phrase
    c: int

    def expand(self) -> list[int]:
        """Reconstruct the parsed sequence."""
        table = [()]
        out: list[int] = []
        for idx, a in self.phrases:
            word = table[idx] + (a,)
            table.append(word)
            out.extend(word)
        return out


def _symbols(xhat) -> np.ndarray:
    return np.asarray(getattr(xhat, "symbols", xhat), dtype=np.int64)


def lz78_parse(xhat) -> LzParse:
    """LZ78 incremental parse.  A trailing phrase that is already in the
    dictionary is still emitted (and counted), as ``(prefix, last letter)``."""
    seq = _symbols(xhat).tolist()
    if not seq:
        raise ValueError("cannot parse an empty block")
    trie: dict[tuple[int, int], int] = {}
    phrases = []
    node = parent = 0
    for a in seq:
        nxt = trie.get((node, a))
        if nxt is None:
            trie[(node, a)] = len(phrases) + 1
            phrases.append((node, a))
            node = 0
        else:
            parent, node = node, nxt
    if node != 0:
        phrases.append((parent, seq[-1]))
    return LzParse(tuple(phrases), len(phrases))


def lz78_count(xhat) -> int:
    ids: dict[tuple[int, int], int] = {}
    node = 0
    for a in _symbols(xhat).tolist():
        nxt = ids.get((node, a))
        if nxt is None:
            ids[(node, a)] = len(ids) + 1
            node = 0
        else:
            node = nxt
    return len(ids) + (node != 0)


def _min_phrase_count(n: int) -> int:
    """Smallest c with c(c+1)/2 >= n; attained by constant blocks."""
    return math.ceil((math.sqrt(8 * n + 1) - 1) / 2)


@lru_cache(maxsize=8)
def _count_table(n: int, J: int) -> np.ndarray:
    """LZ78 phrase counts of all J^n blocks, lexicographic order (first letter most significant).

    Depth-first over the prefix tree so each prefix is parsed once.
    """
    if J**n > ENUM_LIMIT:
        raise OracleSizeError(f"J^n = {J}^{n} exceeds the enumeration limit {ENUM_LIMIT}")
    out = np.empty(J**n, dtype=np.int32)
    trie: dict[tuple[int, int], int] = {}
    fresh = [0]

    def walk(pos, node, c, idx):
        if pos == n:
            out[idx] = c + (node != 0)
            return
        for a in range(J):
            key = (node, a)
            child = trie.get(key)
            if child is not None:
                walk(pos + 1, child, c, idx * J + a)
            else:
                fresh[0] += 1
                trie[key] = fresh[0]
                walk(pos + 1, 0, c + 1, idx * J + a)
                del trie[key]

    walk(0, 0, 0, 0)
    out.setflags(write=False)
    return out


def block_from_index(idx, n: int, J: int) -> np.ndarray:
    powers = J ** np.arange(n - 1, -1, -1, dtype=np.int64)
    idx = np.asarray(idx, dtype=np.int64)
    return (idx[..., None] // powers) % J


def max_distinct_parse(xhat, J: int | None = None) -> int:
    """Largest number of distinct phrases whose concatenation is ``xhat`` (branch and bound)."""
    seq = tuple(_symbols(xhat).tolist())
    n = len(seq)
    if n > MAX_DISTINCT_N:
        raise OracleSizeError(f"exact distinct parsing limited to n <= {MAX_DISTINCT_N}")
    J = J if J is not None else max(seq) + 1
    # most distinct phrases that fit in r letters, ignoring which are used
    cap = [0] * (n + 1)
    for r in range(1, n + 1):
        left, m, L = r, 0, 1
        while left >= L:
            take = min(J**L, left // L)
            m += take
            left -= take * L
            L += 1
        cap[r] = m
    best = [lz78_count(seq) - 1]  # LZ78 with the trailing repeat merged is a valid start
    used: set[tuple] = set()

    def search(pos, count):
        if pos == n:
            best[0] = max(best[0], count)
            return
        if count + cap[n - pos] <= best[0]:
            return
        for L in range(1, n - pos + 1):
            w = seq[pos:pos + L]
            if w in used:
                continue
            used.add(w)
            search(pos + L, count + 1)
            used.discard(w)

    search(0, 0)
    return max(best[0], 1)


# --- code lengths ------------------------------------------------------------------


def lz_bound_bits(c, alphabet: int):
    """(c + 1) log2(2 A (c + 1)); works elementwise on arrays."""
    c1 = np.asarray(c, dtype=float) + 1.0
    out = c1 * np.log2(2.0 * alphabet * c1)
    return float(out) if out.ndim == 0 else out


def _alphabet(xhat, J):
    if J is not None:
        return J
    if isinstance(xhat, ReproBlock):
        return xhat.J
    return int(_symbols(xhat).max()) + 1


def lz_codelength(xhat, J: int | None = None) -> float:
    """LZ code-length bound in bits, alphabet factor = reproduction alphabet size."""
    return lz_bound_bits(lz78_count(xhat), _alphabet(xhat, J))


def lz_codelength_pair(xhat, J: int, K: int) -> dict:
    c = lz78_count(xhat)
    return {"c": c, "lz_bits_J": lz_bound_bits(c, J), "lz_bits_K": lz_bound_bits(c, K)}


def lz78_encode_bits(xhat, J: int | None = None) -> str:
    """Actual LZ78 bitstream: phrase i sends its prefix in ceil(log2 i) bits, then the letter."""
    J = _alphabet(xhat, J)
    lw = max(1, math.ceil(math.log2(J))) if J > 1 else 0
    out = []
    for i, (idx, a) in enumerate(lz78_parse(xhat).phrases, start=1):
        pw = math.ceil(math.log2(i)) if i > 1 else 0
        if pw:
            out.append(format(idx, f"0{pw}b"))
        if lw:
            out.append(format(a, f"0{lw}b"))
    return "".join(out)


def lz78_decode_bits(bits: str, n: int, J: int) -> list[int]:
    lw = max(1, math.ceil(math.log2(J))) if J > 1 else 0
    table = [()]
    out: list[int] = []
    pos, i = 0, 1
    while len(out) < n:
        pw = math.ceil(math.log2(i)) if i > 1 else 0
        idx = int(bits[pos:pos + pw], 2) if pw else 0
        pos += pw
        a = int(bits[pos:pos + lw], 2) if lw else 0
        pos += lw
        word = table[idx] + (a,)
        table.append(word)
        out.extend(word)
        i += 1
    if pos != len(bits) or len(out) != n:
        raise ValueError("malformed LZ78 bitstream")
    return out


def lz78_bit_length(xhat, J: int | None = None) -> int:
    J = _alphabet(xhat, J)
    c = lz78_count(xhat)
    lw = max(1, math.ceil(math.log2(J))) if J > 1 else 0
    return sum(math.ceil(math.log2(i)) for i in range(1, c + 1)) + c * lw


# --- LZ mixture ---------------------------------------------------------------------


@lru_cache(maxsize=8)
def _log2_weights(n: int, J: int) -> tuple[np.ndarray, float]:
    """Unnormalized log2 weights -LZ(xhat) of all blocks and log2 of their sum."""
    w = -lz_bound_bits(_count_table(n, J), J)
    w.setflags(write=False)
    return w, float(logsumexp(w * LN2) / LN2)


def lz_log_normalizer(n: int, J: int) -> float:
    """ln sum_xhat 2^{-LZ(xhat)}; never positive (Kraft)."""
    return _log2_weights(n, J)[1] * LN2


def lz_mixture_weight(xhat, J: int | None = None, mode: str = "exact_enum") -> float:
    """ln W(xhat) for W proportional to 2^{-LZ}.

    ``kraft_bound`` skips the normalizer and returns ln 2^{-LZ(xhat)}, a lower
    bound on ln W because the normalizer is at most 1.
    """
    J = _alphabet(xhat, J)
    lz = lz_codelength(xhat, J)
    if mode == "kraft_bound":
        return -lz * LN2
    if mode != "exact_enum":
        raise ValueError(f"unknown normalizer mode {mode!r}")
    return -lz * LN2 - lz_log_normalizer(_symbols(xhat).size, J)


DistortionFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _additive_all(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    """d(x, xhat) for every xhat in lexicographic order, built position by position."""
    acc = e[x[0]].copy()
    for a in x[1:]:
        acc = (acc[:, None] + e[a][None, :]).ravel()
    return acc


def _sphere_distortions(x: np.ndarray, d, J: int) -> np.ndarray:
    n = x.size
    if isinstance(d, DistortionMatrix) or not callable(d):
        dm = as_matrix(d)
        return _additive_all(x, dm.entries)
    out = np.empty(J**n)
    chunk = 1 << 16
    for start in range(0, J**n, chunk):
        idx = np.arange(start, min(J**n, start + chunk))
        out[start:start + idx.size] = d(x, block_from_index(idx, n, J))
    return out


def _resolve(x, d, J):
    if isinstance(d, DistortionMatrix) or not callable(d):
        dm = as_matrix(d)
        return as_source(x, dm.K).symbols, dm.J
    if J is None:
        raise ValueError("a callable distortion needs the reproduction alphabet size J")
    return np.asarray(getattr(x, "symbols", x), dtype=np.int64), J


def lz_success_prob(x, d, D: float, J: int | None = None) -> SuccessProb:
    """Exact P_s = sum of W over the sphere {xhat: d(x, xhat) <= nD}, by enumeration.

    ``d`` is a distortion matrix or a vectorized functional ``f(x, rows) ->
    distortions`` over block pairs (then ``J`` is required).  Components hold
    the Kraft chain: ``neg_log2_ps <= min_lz_bits``.
    """
    xs, J = _resolve(x, d, J)
    n = xs.size
    if J**n > ENUM_LIMIT:
        raise OracleSizeError(f"J^n = {J}^{n} exceeds the enumeration limit {ENUM_LIMIT}")
    w2, z2 = _log2_weights(n, J)
    mask = within(_sphere_distortions(xs, d, J), n * D)
    size = int(mask.sum())
    if size == 0:
        return SuccessProb(-math.inf, source="lz_enum",
                           components={"sphere_size": 0, "min_lz_bits": math.inf})
    inside = w2[mask]
    log2_mass = float(logsumexp(inside * LN2) / LN2)
    k = int(np.argmax(inside))
    arg = int(np.flatnonzero(mask)[k])
    log2_ps = min(0.0, log2_mass - z2)
    return SuccessProb(
        log2_ps * LN2,
        source="lz_enum",
        components={"neg_log2_ps": -log2_ps, "min_lz_bits": float(-inside[k]),
                    "log2_normalizer": z2, "sphere_size": size},
        extra={"argmin": ReproBlock(block_from_index(arg, n, J), J)},
    )


def min_lz_in_sphere(x, d, D: float, J: int | None = None) -> tuple[float, ReproBlock]:
    sp = lz_success_prob(x, d, D, J)
    if sp.components["sphere_size"] == 0:
        raise ValueError("empty sphere")
    return sp.components["min_lz_bits"], sp.extra["argmin"]


@dataclass(frozen=True)
class FsBound:
    bits: float
    argmin: ReproBlock
    c: int


def fs_phrase_bound(c, s: int):
    """[c + s^2] log2((c + s^2) / (4 s^2)) + 2 s^2."""
    t = np.asarray(c, dtype=float) + s * s
    out = t * np.log2(t / (4.0 * s * s)) + 2.0 * s * s
    return float(out) if out.ndim == 0 else out


def fs_lower_bound(x, d, D: float, s: int = 1, J: int | None = None,
                   parse: str = "lz78") -> FsBound:
    """Finite-state converse bound minimized over the sphere, by enumeration.

    ``parse="lz78"`` uses the incremental phrase count; ``"max_distinct"`` uses
    the exact largest distinct parsing (slow: one search per sphere member).
    """
    if s < 1:
        raise ValueError("number of states s must be >= 1")
    xs, J = _resolve(x, d, J)
    n = xs.size
    if J**n > FS_LIMIT:
        raise OracleSizeError(f"fs_lower_bound enumerates J^n <= {FS_LIMIT} blocks")
    mask = within(_sphere_distortions(xs, d, J), n * D)
    members = np.flatnonzero(mask)
    if members.size == 0:
        raise ValueError("infeasible: the distortion sphere is empty")
    if parse == "lz78":
        c = _count_table(n, J)[members]
    elif parse == "max_distinct":
        c = np.array([max_distinct_parse(block_from_index(i, n, J), J) for i in members])
    else:
        raise ValueError(f"unknown parse {parse!r}")
    vals = fs_phrase_bound(c, s)
    k = int(np.argmin(vals))
    return FsBound(float(vals[k]), ReproBlock(block_from_index(members[k], n, J), J), int(c[k]))


# --- LZ mixture codebook ----------------------------------------------------------------

_LZ_STREAM = 1 << 62  # keeps LZ codebook streams apart from the memoryless-mixture ones


class LzCodebook:
    """Codewords drawn i.i.d. from W proportional to 2^{-LZ}, regenerated per block.

    Exact inverse-CDF sampling when J^n <= ENUM_LIMIT, otherwise rejection
    from the uniform proposal with acceptance 2^{LZ_min - LZ(xhat)}.  The
    acceptance rate decays exponentially in n, so the rejection path is only
    usable for the smallest blocks beyond the enumeration limit.
    """

    def __init__(self, seed: int, n: int, J: int, method: str = "auto"):
        if method not in ("auto", "table", "rejection"):
            raise ValueError(f"unknown sampling method {method!r}")
        if method == "auto":
            method = "table" if J**n <= ENUM_LIMIT else "rejection"
        if method == "rejection" and n > REJECTION_MAX_N:
            raise OracleSizeError(f"LZ mixture sampling supports n <= {REJECTION_MAX_N}")
        self.seed, self.n, self.J = int(seed), int(n), int(J)
        self.exact = method == "table"
        if self.exact:
            w2, z2 = _log2_weights(n, J)
            cdf = np.cumsum(np.exp2(w2 - z2))
            cdf /= cdf[-1]
            self._cdf = cdf
        self._lz_min = lz_bound_bits(_min_phrase_count(n), J)
        self._cache: dict[int, np.ndarray] = {}

    def _rng(self, b: int) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFF_FFFF_FFFF_FFFF, _LZ_STREAM | b], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def block(self, b: int) -> np.ndarray:
        out = self._cache.get(b)
        if out is not None:
            return out
        rng = self._rng(b)
        if self.exact:
            idx = np.searchsorted(self._cdf, rng.random(BLOCK), side="right")
            out = block_from_index(np.minimum(idx, self._cdf.size - 1), self.n, self.J)
        else:
            rows = []
            while len(rows) < BLOCK:
                cand = rng.integers(0, self.J, size=(BLOCK, self.n))
                u = rng.random(BLOCK)
                for row, ui in zip(cand, u):
                    if ui < 2.0 ** (self._lz_min - lz_codelength(row, self.J)):
                        rows.append(row)
                        if len(rows) == BLOCK:
                            break
            out = np.array(rows)
        out.setflags(write=False)
        if len(self._cache) >= 4:
            self._cache.pop(next(iter(self._cache)))
        self._cache[b] = out
        return out

    def codeword(self, i: int) -> ReproBlock:
        if i < 1:
            raise ValueError("codeword indices start at 1")
        b, r = divmod(i - 1, BLOCK)
        return ReproBlock(self.block(b)[r], self.J)


def lz_encode(x, d, D: float, cb_seed: int, max_scan: int | None = None,
              J: int | None = None) -> EncodeResult:
    """First-hit encoding against an LZ-mixture codebook; index sent in Elias delta."""
    xs, J = _resolve(x, d, J)
    n = xs.size
    if max_scan is None:
        if J**n <= ENUM_LIMIT:
            lp = lz_success_prob(xs, d, D, J).log_value
            expo = -lp + 2 * math.log(n) + 8 if math.isfinite(lp) else math.inf
            max_scan = int(min(MAX_SCAN_CAP, math.ceil(math.exp(min(expo, 60.0)))))
        else:
            max_scan = MAX_SCAN_CAP
    if max_scan < 1:
        raise ValueError("max_scan must be >= 1")
    cb = LzCodebook(cb_seed, n, J)
    e = as_matrix(d).entries if (isinstance(d, DistortionMatrix) or not callable(d)) else None
    b = 0
    while b * BLOCK < max_scan:
        rows = cb.block(b)[: max_scan - b * BLOCK]
        dist = e[xs[None, :], rows].sum(axis=1) if e is not None else np.asarray(d(xs, rows))
        ok = np.flatnonzero(within(dist, n * D))
        if ok.size:
            i = b * BLOCK + int(ok[0]) + 1
            return EncodeResult(i, elias_delta(i), length_nats(i), True, i, float(dist[ok[0]]))
        b += 1
    return EncodeResult(max_scan, "", math.nan, False, max_scan)


def lz_decode(cb: LzCodebook, bits: str) -> ReproBlock:
    from .prefix_code import decode_delta

    return cb.codeword(decode_delta(bits))


# --- exhaustive sphere search cost --------------------------------------------------------


def sphere_exponent(p, d, D: float) -> float:
    """E(D) = max H(Xhat | X) subject to E d(X, Xhat) <= D, in nats.

    The maximizer is w(xhat | x) proportional to exp(-lam d(x, xhat)); lam >= 0
    solves the distortion constraint by a 1-D root search.
    """
    pa = np.asarray(getattr(p, "probs", p), dtype=float)
    e = as_matrix(d).entries
    if D < 0:
        raise ValueError("D must be nonnegative")
    rows = pa > 0
    pa, e = pa[rows], e[rows]
    floor = float(pa @ e.min(axis=1))
    if D < floor - 1e-12:
        raise ValueError("D is below the smallest achievable expected distortion")

    def stats(lam):
        a = -lam * (e - e.min(axis=1, keepdims=True))
        w = np.exp(a - a.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        dist = float(pa @ (w * e).sum(axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -np.where(w > 0, w * np.log(w), 0.0).sum(axis=1)
        return dist, float(pa @ h)

    d0, h0 = stats(0.0)
    if D >= d0:
        return h0
    if D <= floor + 1e-12:
        # lam -> infinity: uniform over each row's minimizers
        ties = np.isclose(e, e.min(axis=1, keepdims=True), rtol=0, atol=1e-12).sum(axis=1)
        return float(pa @ np.log(ties))
    hi = 1.0
    while stats(hi)[0] > D:
        hi *= 2.0
        if hi > 1e6:
            break
    lam = brentq(lambda t: stats(t)[0] - D, 0.0, hi, xtol=1e-13, rtol=1e-13)
    return stats(lam)[1]


def log_sphere_size(x, d, D: float) -> float:
    """ln |{xhat : d(x, xhat) <= nD}| via the uniform-q lattice convolution."""
    dm = as_matrix(d)
    xs = as_source(x, dm.K)
    q = np.full(dm.J, 1.0 / dm.J)
    return xs.n * math.log(dm.J) + success_given_q_convolution(xs, dm, D, q).log_value
