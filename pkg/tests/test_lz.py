import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sflab import exact, lz, rd
from sflab.core import DistortionMatrix, empirical
from sflab.exact import OracleSizeError

# frozen after the first enumeration run; x = default_rng(42).integers(0, 2, 10)
SEED42_X = (0, 1, 1, 0, 0, 1, 0, 1, 0, 0)
SEED42_LOG_PS = -5.444107303979186
SEED42_MIN_LZ = 27.509775004326936
ALT12_FS_BITS = 5.509775004326937
ALT12_FS_DISTINCT_BITS = 7.651484454403229


def _reference_parse(seq):
    """Plain LZ78 on strings, for cross-checking."""
    seen, phrases, cur = set(), [], ""
    for a in seq:
        cur += str(a) + ","
        if cur not in seen:
            seen.add(cur)
            phrases.append(cur)
            cur = ""
    if cur:
        phrases.append(cur)
    return phrases


def test_parse_examples():
    p = lz.lz78_parse([0, 0, 0, 0])
    assert p.c == 3
    assert p.phrases == ((0, 0), (1, 0), (0, 0))
    assert lz.lz78_parse([1]).c == 1
    assert lz.lz78_parse([0, 1, 2]).c == 3


@settings(max_examples=300)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=60))
def test_parse_roundtrip_and_distinct(seq):
    p = lz.lz78_parse(seq)
    assert p.expand() == seq
    assert p.c == lz.lz78_count(seq) == len(_reference_parse(seq))
    assert len(set(p.phrases[:-1])) == p.c - 1
    assert p.c <= len(seq)


@pytest.mark.parametrize("J", [2, 3])
def test_phrase_count_growth(J):
    rng = np.random.default_rng(J)
    ratios = []
    for n in (10**3, 10**4, 10**5):
        c = lz.lz78_count(rng.integers(0, J, n))
        ratios.append(c * math.log2(c) / (n * math.log2(J)))
    # c log c = n log J + o(n log J): the excess ratio shrinks with n
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[-1] < 1.2


def test_codelength_examples():
    assert lz.lz_bound_bits(1, 2) == pytest.approx(2 * math.log2(8))
    assert lz.lz_bound_bits(1, 2) == pytest.approx(6.0)
    vals = lz.lz_bound_bits(np.arange(1, 50), 3)
    assert np.all(np.diff(vals) > 0)
    pair = lz.lz_codelength_pair([0, 1, 0, 1], J=2, K=3)
    assert pair["c"] == 3 and pair["lz_bits_K"] > pair["lz_bits_J"]


def test_bound_exceeds_actual_lz78_code():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        J = int(rng.integers(2, 5))
        x = rng.integers(0, J, int(rng.integers(1, 64)))
        bits = lz.lz78_encode_bits(x, J)
        assert len(bits) == lz.lz78_bit_length(x, J)
        assert lz.lz78_decode_bits(bits, x.size, J) == x.tolist()
        assert lz.lz_codelength(x, J) >= len(bits)


def test_count_table_matches_direct():
    table = lz._count_table(7, 3)
    for idx in np.random.default_rng(1).integers(0, 3**7, 300):
        assert table[idx] == lz.lz78_count(lz.block_from_index(idx, 7, 3))


@pytest.mark.parametrize("n,J", [(1, 2), (1, 3), (4, 2), (8, 2), (12, 2), (6, 3), (9, 3), (12, 3)])
def test_normalizer_kraft(n, J):
    assert lz.lz_log_normalizer(n, J) <= 0.0


def test_weights_sum_to_one():
    for n, J in ((8, 2), (6, 3)):
        w = [lz.lz_mixture_weight(lz.block_from_index(i, n, J), J) for i in range(J**n)]
        assert math.fsum(np.exp(w)) == pytest.approx(1.0, abs=1e-12)


def test_weight_n1_uniform():
    for J in (2, 3, 5):
        for a in range(J):
            assert math.exp(lz.lz_mixture_weight([a], J)) == pytest.approx(1 / J, rel=1e-12)


def test_weight_prefers_low_phrase_count():
    assert lz.lz_mixture_weight([0] * 8, 2) > lz.lz_mixture_weight([0, 1] * 4, 2)


def test_kraft_mode_is_lower_bound():
    x = [0, 1, 1, 0, 1, 0, 0, 0, 1, 1]
    assert lz.lz_mixture_weight(x, 2, mode="kraft_bound") <= lz.lz_mixture_weight(x, 2)
    with pytest.raises(ValueError):
        lz.lz_mixture_weight(x, 2, mode="nope")


def test_size_guard():
    with pytest.raises(OracleSizeError):
        lz.lz_mixture_weight([0] * 30, 2)


def test_success_prob_frozen_seed42(hamming2):
    assert tuple(np.random.default_rng(42).integers(0, 2, 10)) == SEED42_X
    sp = lz.lz_success_prob(SEED42_X, hamming2, 0.2)
    assert sp.log_value == pytest.approx(SEED42_LOG_PS, abs=1e-12)
    assert sp.components["min_lz_bits"] == pytest.approx(SEED42_MIN_LZ, abs=1e-12)
    assert sp.components["sphere_size"] == 56  # 1 + 10 + 45


def test_success_prob_full_sphere(hamming2):
    assert lz.lz_success_prob([0, 1, 1, 0, 1], hamming2, 1.0).log_value == 0.0


def test_kraft_chain_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(2, 11))
        K, J = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        if J**n > 60_000:
            n = 8
        e = rng.random((K, J))
        e[np.arange(K), rng.integers(0, J, K)] = 0.0
        d = DistortionMatrix(e)
        x = rng.integers(0, K, n)
        sp = lz.lz_success_prob(x, d, float(rng.uniform(0, 0.8)) * d.d_max)
        if sp.components["sphere_size"] == 0:
            continue
        assert sp.components["neg_log2_ps"] <= sp.components["min_lz_bits"]


def test_callable_distortion_matches_matrix(hamming2):
    def hamming_fn(x, rows):
        return (rows != x[None, :]).sum(axis=1).astype(float)

    x = [0, 1, 1, 0, 1, 1, 1, 0]
    a = lz.lz_success_prob(x, hamming2, 0.25)
    b = lz.lz_success_prob(x, hamming_fn, 0.25, J=2)
    assert a.log_value == pytest.approx(b.log_value, abs=1e-12)
    with pytest.raises(ValueError):
        lz.lz_success_prob(x, hamming_fn, 0.25)


def test_non_additive_distortion():
    # worst-letter distortion: the sphere at D*n < 1 is just {x}
    def max_fn(x, rows):
        return float(x.size) * (rows != x[None, :]).any(axis=1)

    x = [0, 1, 1, 0, 1, 0]
    sp = lz.lz_success_prob(x, max_fn, 0.5, J=2)
    assert sp.components["sphere_size"] == 1
    assert sp.log_value == pytest.approx(lz.lz_mixture_weight(x, 2), abs=1e-12)


def test_fs_bound_frozen(hamming2):
    x = [0, 1] * 6
    fb = lz.fs_lower_bound(x, hamming2, 0.25, s=1)
    assert fb.bits == pytest.approx(ALT12_FS_BITS, abs=1e-12)
    assert fb.c == 5
    assert np.sum(fb.argmin.symbols != np.array(x)) <= 3
    md = lz.fs_lower_bound(x, hamming2, 0.25, s=1, parse="max_distinct")
    assert md.bits == pytest.approx(ALT12_FS_DISTINCT_BITS, abs=1e-12)
    assert md.c == 6


def test_fs_bound_full_sphere_picks_constant_block(hamming2):
    n = 12
    fb = lz.fs_lower_bound([0, 1, 1, 0] * 3, hamming2, 1.0)
    assert fb.c == lz._min_phrase_count(n) == 5
    assert len(set(fb.argmin.symbols.tolist())) == 1


def test_fs_bound_singleton_sphere(hamming2):
    x = [0, 1, 1, 1, 0, 0, 1]
    fb = lz.fs_lower_bound(x, hamming2, 0.0)
    assert fb.argmin.symbols.tolist() == x
    assert fb.bits == pytest.approx(lz.fs_phrase_bound(lz.lz78_count(x), 1))


def test_fs_bound_errors(hamming2):
    d = DistortionMatrix([[0.0, 1.0], [1.0, 0.5]])
    with pytest.raises(ValueError):
        lz.fs_lower_bound([0, 1], d, -0.1)
    with pytest.raises(OracleSizeError):
        lz.fs_lower_bound([0] * 21, hamming2, 0.1)
    with pytest.raises(ValueError):
        lz.fs_lower_bound([0, 1], hamming2, 0.1, s=0)


@pytest.mark.parametrize("seq", [[0, 0, 0, 0], [0, 1, 0, 1, 1, 0], [0, 0, 1, 0, 1, 1, 1, 0, 0, 0]])
def test_max_distinct_at_least_lz78(seq):
    assert lz.max_distinct_parse(seq, 2) >= lz.lz78_count(seq) - 1


def test_max_distinct_brute_force():
    def brute(seq):
        n, best = len(seq), 0
        for mask in range(1 << (n - 1)):
            cuts = [0] + [i + 1 for i in range(n - 1) if mask >> i & 1] + [n]
            words = [tuple(seq[a:b]) for a, b in zip(cuts, cuts[1:])]
            if len(set(words)) == len(words):
                best = max(best, len(words))
        return best

    rng = np.random.default_rng(9)
    for _ in range(40):
        seq = rng.integers(0, 2, int(rng.integers(1, 11))).tolist()
        assert lz.max_distinct_parse(seq, 2) == brute(seq)


def test_lz_encode_large_d(hamming2):
    r = lz.lz_encode([0, 1, 1, 0, 1, 0], hamming2, 1.0, cb_seed=3)
    assert r.hit and r.index == 1


def test_lz_encode_roundtrip(hamming2):
    rng = np.random.default_rng(4)
    for t in range(30):
        x = rng.integers(0, 2, 10)
        r = lz.lz_encode(x, hamming2, 0.2, cb_seed=t)
        assert r.hit and r.distortion <= 2 + 1e-9
        xhat = lz.lz_decode(lz.LzCodebook(t, 10, 2), r.bits)
        assert np.sum(xhat.symbols != x) <= 2


def test_lz_geometric_mean(hamming2):
    idx = [lz.lz_encode(SEED42_X, hamming2, 0.2, cb_seed=s).index for s in range(200)]
    assert np.mean(idx) == pytest.approx(math.exp(-SEED42_LOG_PS), rel=0.25)


def test_lz_encode_length_vs_fs_bound(hamming2):
    rng = np.random.default_rng(5)
    for t in range(20):
        x = rng.integers(0, 2, 10)
        r = lz.lz_encode(x, hamming2, 0.2, cb_seed=100 + t)
        fb = lz.fs_lower_bound(x, hamming2, 0.2)
        m, _ = lz.min_lz_in_sphere(x, hamming2, 0.2)
        assert len(r.bits) <= m + 2.5 * math.log2(10) + 8
        assert len(r.bits) <= fb.bits + m + 2.5 * math.log2(10) + 8


@pytest.mark.parametrize("method", ["table", "rejection"])
def test_sampler_marginals(method):
    n, J = 4, 2
    cb = lz.LzCodebook(17, n, J, method=method)
    rows = np.concatenate([cb.block(b) for b in range(10)])
    idx = (rows * (J ** np.arange(n - 1, -1, -1))).sum(axis=1)
    freq = np.bincount(idx, minlength=J**n) / rows.shape[0]
    w = np.exp([lz.lz_mixture_weight(lz.block_from_index(i, n, J), J) for i in range(J**n)])
    se = np.sqrt(w * (1 - w) / rows.shape[0])
    assert np.all(np.abs(freq - w) <= 4 * se)


def test_codebook_determinism():
    a, b = lz.LzCodebook(5, 9, 2), lz.LzCodebook(5, 9, 2)
    assert np.array_equal(a.block(2), b.block(2))
    assert np.array_equal(a.codeword(4097).symbols, b.block(1)[0])


def test_sphere_exponent_uniform_hamming():
    h = DistortionMatrix.hamming(2)
    assert lz.sphere_exponent([0.5, 0.5], h, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert lz.sphere_exponent([0.5, 0.5], h, 0.25) == pytest.approx(
        -0.25 * math.log(0.25) - 0.75 * math.log(0.75), abs=1e-10)
    assert lz.sphere_exponent([0.5, 0.5], h, 0.5) == pytest.approx(math.log(2), abs=1e-12)
    assert lz.sphere_exponent([0.5, 0.5], h, 0.25) == pytest.approx(0.5623351446188083, abs=1e-12)


def test_sphere_exponent_tied_minimizers():
    d = DistortionMatrix([[0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    assert lz.sphere_exponent([0.5, 0.5], d, 0.0) == pytest.approx(0.5 * math.log(2), abs=1e-12)


def test_log_sphere_size(hamming2):
    assert lz.log_sphere_size(SEED42_X, hamming2, 0.2) == pytest.approx(math.log(56), abs=1e-10)
    assert lz.log_sphere_size(SEED42_X, hamming2, 0.0) == pytest.approx(0.0, abs=1e-12)


def _ziv_gaps(D, trials=20):
    h = DistortionMatrix.hamming(2)
    rng = np.random.default_rng(0)
    out = []
    for _ in range(trials):
        x = rng.integers(0, 2, 16)
        R = rd.rd_function(empirical(x), h, D).rate
        m, _ = lz.min_lz_in_sphere(x, h, D)
        lz_ps = lz.lz_success_prob(x, h, D).log_value
        mix_ps = exact.success_exact_dp(x, h, D).log_value
        out.append((m * math.log(2) / 16 - R, -lz_ps / 16 - R, -mix_ps / 16 - R))
    return np.array(out)


@pytest.mark.xfail(strict=True, reason="the phrase-count bound alone costs over 2 bits/letter at n = 16")
def test_ziv_sanity_min_lz_literal():
    assert np.all(_ziv_gaps(0.25)[:, 0] <= 0.15)


def test_ziv_sanity_search_costs():
    gaps = _ziv_gaps(0.4)
    # 1/P_s against exp(nR) for both random coding distributions
    assert np.all(gaps[:, 1] <= 0.15)
    assert np.all(gaps[:, 2] <= 0.15)
