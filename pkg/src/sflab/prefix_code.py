"""Elias-delta code for positive integers, on '0'/'1' strings."""

import math


class PrefixDecodeError(ValueError):
    pass


def elias_gamma(n: int) -> str:
    if n < 1:
        raise ValueError("Elias gamma encodes integers >= 1")
    b = bin(n)[2:]
    return "0" * (len(b) - 1) + b


def elias_delta(n: int) -> str:
    if n < 1:
        raise ValueError("Elias delta encodes integers >= 1")
    b = bin(n)[2:]
    return elias_gamma(len(b)) + b[1:]


def elias_delta_length(n: int) -> int:
    """Closed form: 2*floor(log2(L+1)) + L + 1 with L = floor(log2 n)."""
    L = n.bit_length() - 1
    return 2 * ((L + 1).bit_length() - 1) + L + 1


def read_gamma(bits: str, pos: int = 0) -> tuple[int, int]:
    zeros = 0
    while pos + zeros < len(bits) and bits[pos + zeros] == "0":
        zeros += 1
    end = pos + 2 * zeros + 1
    if end > len(bits):
        raise PrefixDecodeError("truncated Elias gamma codeword")
    return int(bits[pos + zeros:end], 2), end


def read_delta(bits: str, pos: int = 0) -> tuple[int, int]:
    """Decode one Elias-delta integer starting at ``pos``; return (value, next position)."""
    length, pos = read_gamma(bits, pos)
    end = pos + length - 1
    if end > len(bits):
        raise PrefixDecodeError("truncated Elias delta codeword")
    return int("1" + bits[pos:end], 2), end


def decode_delta(bits: str) -> int:
    """Decode a string holding exactly one Elias-delta codeword."""
    if set(bits) - {"0", "1"}:
        raise PrefixDecodeError("bit string may contain only '0' and '1'")
    value, end = read_delta(bits)
    if end != len(bits):
        raise PrefixDecodeError(f"{len(bits) - end} trailing bits after codeword")
    return value


def length_nats(i: int) -> float:
    """Code length of index ``i`` in nats."""
    if i < 1:
        raise ValueError("index must be >= 1")
    return elias_delta_length(i) * math.log(2)
