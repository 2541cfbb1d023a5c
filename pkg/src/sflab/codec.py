"""d-semifaithful first-hit coding with a virtual mixture codebook.

The codebook holds A^n codewords drawn i.i.d. from the uniform mixture of
memoryless sources.  Nothing is stored: codeword ``i`` is regenerated from a
Philox stream keyed by ``(seed, block)`` with ``block = (i - 1) // BLOCK``, so
the encoder and decoder only share ``(seed, A, n, J)``.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import rd
from .core import DistortionMatrix, ReproBlock, as_matrix, as_source, empirical, within
from .prefix_code import PrefixDecodeError, decode_delta, elias_delta, length_nats

BLOCK = 4096
MAX_SCAN_CAP = 10**8
MAGIC = b"SFC1"
_HEADER = struct.Struct("<4sIHHQI")


class ContainerError(ValueError):
    pass


def block_generator(seed: int, block: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFF_FFFF_FFFF_FFFF, block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_mixture_block(rng: np.random.Generator, size: int, n: int, J: int) -> np.ndarray:
    """``size`` blocks of length n: Q uniform on the simplex, then n i.i.d. letters from Q."""
    e = rng.standard_exponential((size, J))
    cum = np.cumsum(e, axis=1)
    cum /= cum[:, -1:]
    u = rng.random((size, n))
    if J == 2:
        return (u >= cum[:, :1]).astype(np.intp)
    return (u[:, :, None] >= cum[:, None, :-1]).sum(axis=2, dtype=np.intp)


@dataclass(frozen=True)
class EncodeResult:
    index: int
    bits: str
    length_nats: float
    hit: bool
    scanned: int
    distortion: float = math.nan


class VirtualCodebook:
    """A^n mixture-drawn codewords, materialized on demand."""

    def __init__(self, seed: int, a: int, n: int, j: int, k: int | None = None):
        if n < 1:
            raise ValueError("block length n must be >= 1")
        if a <= j or (k is not None and a <= k):
            raise ValueError(f"A = {a} must exceed max(J, K)")
        self.seed = int(seed)
        self.a = int(a)
        self.n = int(n)
        self.j = int(j)
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()

    @property
    def log_size(self) -> float:
        """ln of the codebook size, n ln A."""
        return self.n * math.log(self.a)

    @property
    def size(self) -> int:
        return self.a**self.n

    def _generate(self, b: int) -> np.ndarray:
        return sample_mixture_block(block_generator(self.seed, b), BLOCK, self.n, self.j)

    def block(self, b: int) -> np.ndarray:
        """Codewords ``b*BLOCK + 1 .. (b+1)*BLOCK`` as a (BLOCK, n) array."""
        out = self._cache.get(b)
        if out is None:
            out = self._generate(b)
            out.setflags(write=False)
            self._cache[b] = out
            if len(self._cache) > 4:
                self._cache.popitem(last=False)
        return out

    def codeword(self, i: int) -> ReproBlock:
        if i < 1:
            raise ValueError("codeword indices start at 1")
        b, r = divmod(i - 1, BLOCK)
        return ReproBlock(self.block(b)[r], self.j)

    def digest(self, count: int) -> str:
        """SHA-256 of the first ``count`` codewords."""
        h = hashlib.sha256()
        for b in range(-(-count // BLOCK)):
            rows = self.block(b)[: count - b * BLOCK]
            h.update(np.ascontiguousarray(rows, dtype="<i8").tobytes())
        return h.hexdigest()


def default_max_scan(n: int, J: int, rate: float) -> int:
    """exp{min(n ln J, n R + (J/2 + 2) ln n + 8)}, capped at 1e8."""
    expo = min(n * math.log(J), n * rate + (J / 2 + 2) * math.log(n) + 8)
    return int(min(MAX_SCAN_CAP, math.ceil(math.exp(min(expo, 60.0)))))


def first_hit(blocks, x, d: DistortionMatrix, nD: float, max_scan: int):
    """Scan codeword blocks (an iterable of (first_index, rows)) for the first
    codeword within distortion nD.  Returns (index, distortion) or (None, scanned)."""
    xs = x.symbols
    for first, rows in blocks:
        take = min(rows.shape[0], max_scan - first + 1)
        if take <= 0:
            break
        dist = d.entries[xs[None, :], rows[:take]].sum(axis=1)
        ok = np.flatnonzero(within(dist, nD))
        if ok.size:
            k = int(ok[0])
            return first + k, float(dist[k])
    return None, max_scan


def _codebook_blocks(cb: VirtualCodebook):
    b = 0
    while True:
        yield b * BLOCK + 1, cb.block(b)
        b += 1


def encode(cb: VirtualCodebook, x, d, D: float, max_scan: int | None = None) -> EncodeResult:
    """Transmit the index of the first codeword within distortion nD.

    On failure within ``max_scan`` (or A^n) codewords the result carries
    ``hit=False`` and ``index=max_scan``; no bits are produced then.
    """
    dm = as_matrix(d)
    x = as_source(x, dm.K)
    if not dm.normalized:
        raise rd.DomainError("encode expects a normalized distortion matrix")
    if x.n != cb.n:
        raise ValueError(f"block length {x.n} does not match codebook n={cb.n}")
    if dm.J != cb.j:
        raise ValueError("distortion matrix columns must equal the reproduction alphabet size")
    if max_scan is None:
        max_scan = default_max_scan(x.n, cb.j, rd.rd_function(empirical(x), dm, D).rate)
    if max_scan < 1:
        raise ValueError("max_scan must be >= 1")
    if cb.log_size < math.log(max_scan):
        max_scan = cb.size
    idx, info = first_hit(_codebook_blocks(cb), x, dm, x.n * D, max_scan)
    if idx is None:
        return EncodeResult(max_scan, "", math.nan, False, max_scan)
    bits = elias_delta(idx)
    return EncodeResult(idx, bits, length_nats(idx), True, idx, info)


def decode(cb: VirtualCodebook, bits: str) -> ReproBlock:
    try:
        i = decode_delta(bits)
    except PrefixDecodeError:
        raise
    return cb.codeword(i)


# --- single-block container ----------------------------------------------------------


def pack_container(cb: VirtualCodebook, bits: str) -> bytes:
    """SFC1 | n u32 | J u16 | A u16 | seed u64 | payload bit length u32 | payload (LE)."""
    padded = bits + "0" * (-len(bits) % 8)
    payload = int(padded, 2).to_bytes(len(padded) // 8, "big") if padded else b""
    return _HEADER.pack(MAGIC, cb.n, cb.j, cb.a, cb.seed & 0xFFFF_FFFF_FFFF_FFFF, len(bits)) + payload


def unpack_container(blob: bytes) -> tuple[VirtualCodebook, str]:
    if len(blob) < _HEADER.size:
        raise ContainerError("container shorter than its header")
    magic, n, J, A, seed, nbits = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    payload = blob[_HEADER.size:]
    if len(payload) != -(-nbits // 8):
        raise ContainerError("payload length does not match the declared bit count")
    bits = "".join(f"{byte:08b}" for byte in payload)[:nbits]
    return VirtualCodebook(seed, A, n, J), bits


def decode_container(blob: bytes) -> ReproBlock:
    cb, bits = unpack_container(blob)
    return decode(cb, bits)


# --- distortion grid ---------------------------------------------------------------


class DistortionGrid:
    """Matrices with entries on {0, d_max/res, ..., d_max}."""

    def __init__(self, d_max: float, J: int, K: int, resolution: int):
        if resolution < 1:
            raise ValueError("resolution must be >= 1")
        self.d_max = float(d_max)
        self.J = J
        self.K = K
        self.resolution = int(resolution)

    @property
    def step(self) -> float:
        return self.d_max / self.resolution

    def sample(self, seed: int, count: int, normalize: bool = True):
        """Yield ``count`` random grid matrices (row minima shifted to 0 if ``normalize``)."""
        rng = np.random.default_rng(seed)
        for _ in range(count):
            k = rng.integers(0, self.resolution + 1, size=(self.K, self.J))
            if normalize:
                k = k - k.min(axis=1, keepdims=True)
            yield DistortionMatrix(k * self.step)

    def snap(self, d) -> DistortionMatrix:
        """Nearest grid matrix; entrywise error at most d_max / (2 res)."""
        e = as_matrix(d).entries
        k = np.clip(np.rint(e / self.step), 0, self.resolution)
        return DistortionMatrix(k * self.step)

    def excess_bound(self, n: int) -> float:
        return n * self.d_max / self.resolution


def grid_distortions(d_max: float, J: int, K: int, resolution: int) -> DistortionGrid:
    return DistortionGrid(d_max, J, K, resolution)
