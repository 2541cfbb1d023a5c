import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_normalized
from sflab import rd
from sflab.blahut_arimoto import blahut_arimoto_rate
from sflab.core import DistortionMatrix, Pmf, Qpmf


def h_nats(t):
    return -t * math.log(t) - (1 - t) * math.log(1 - t)


def naive_F(s, q, p, d, D):
    total = 0.0
    for x in range(len(p)):
        if p[x] == 0:
            continue
        inner = sum(q[j] * math.exp(-s * d[x][j]) for j in range(len(q)))
        total -= p[x] * math.log(inner)
    return total - s * D


def test_eval_F_zero_slope(hamming2):
    assert rd.eval_F(0.0, [0.3, 0.7], [0.9, 0.1], hamming2, 0.4) == 0.0


def test_eval_F_closed_form(hamming2):
    got = rd.eval_F(1.0, [0.5, 0.5], [0.5, 0.5], hamming2, 0.1)
    assert got == pytest.approx(-math.log((1 + math.exp(-1)) / 2) - 0.1, abs=1e-15)


def test_eval_F_matches_naive():
    rng = np.random.default_rng(3)
    for _ in range(100):
        K, J = rng.integers(1, 5, size=2)
        d = random_normalized(rng, K, J, scale=3.0)
        p, q = rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(J))
        s, D = rng.uniform(0, 5), rng.uniform(0, 1)
        assert rd.eval_F(s, q, p, d, D) == pytest.approx(naive_F(s, q, p, d.entries, D), abs=1e-12)


def test_solve_s0_above_dmax(hamming2):
    assert rd.solve_s0([0.5, 0.5], [0.5, 0.5], hamming2, 0.5) == 0.0
    assert rd.solve_s0([0.5, 0.5], [0.5, 0.5], hamming2, 0.7) == 0.0


def test_solve_s0_symmetric(hamming2):
    s = rd.solve_s0([0.5, 0.5], [0.5, 0.5], hamming2, 0.25)
    assert s == pytest.approx(math.log(3), rel=1e-10)
    for D in (0.05, 0.1, 0.3, 0.45):
        assert rd.solve_s0([0.5, 0.5], [0.5, 0.5], hamming2, D) == pytest.approx(math.log((1 - D) / D), rel=1e-9)


def test_solve_s0_gap_and_monotone():
    rng = np.random.default_rng(8)
    for _ in range(40):
        d = random_normalized(rng, 3, 3)
        p, q = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
        hi = rd.d_max_q(q, p, d)
        lo = rd.reachable_min(q, p, d)
        D1, D2 = sorted(rng.uniform(lo, hi, size=2))
        s1, s2 = rd.solve_s0(q, p, d, D1), rd.solve_s0(q, p, d, D2)
        assert abs(rd.tilted_distortion(s1, q, p, d) - D1) <= 1e-10
        assert s2 <= s1


def test_solve_s0_infeasible(hamming2):
    # only letter 0 is reachable, so source letter 1 always costs 1
    assert rd.solve_s0([1.0, 0.0], [0.5, 0.5], hamming2, 0.3) == math.inf
    with pytest.raises(ValueError):
        rd.solve_s0([0.5, 0.5], [0.5, 0.5], hamming2, -0.1)


def test_rd_zero_rate(hamming2):
    for D in (0.5, 0.8):
        sol = rd.rd_function(Pmf([0.5, 0.5]), hamming2, D)
        assert sol.zero_rate and sol.rate == 0 and sol.s0 == 0
        assert D >= sol.d_max_q0


@pytest.mark.parametrize("D", [0.01, 0.1, 0.25, 0.4])
def test_rd_binary_closed_form(hamming2, D):
    sol = rd.rd_function([0.5, 0.5], hamming2, D)
    assert sol.rate == pytest.approx(math.log(2) - h_nats(D), abs=1e-8)
    assert sol.s0 == pytest.approx(math.log((1 - D) / D), rel=1e-6)


def test_rd_binary_asymmetric(hamming2):
    p = 0.2
    for D in (0.05, 0.15):
        sol = rd.rd_function([1 - p, p], hamming2, D)
        assert sol.rate == pytest.approx(h_nats(p) - h_nats(D), abs=1e-8)


def test_rd_random_3x3_vs_blahut_arimoto():
    rng = np.random.default_rng(11)
    d = random_normalized(rng, 3, 3)
    p = rng.dirichlet(np.ones(3))
    D = 0.5 * float((p @ d.entries).min())  # below the zero-rate threshold
    sol = rd.rd_function(p, d, D)
    assert sol.rate > 0
    assert sol.rate == pytest.approx(blahut_arimoto_rate(p, d, D), abs=1e-6)


def test_rd_errors():
    with pytest.raises(ValueError):
        rd.rd_function([0.5, 0.5], DistortionMatrix.hamming(2), -1)
    with pytest.raises(rd.DomainError):
        rd.rd_function([0.5, 0.5], DistortionMatrix([[1, 2], [2, 1]]), 0.3)


def test_rd_solution_invariants():
    rng = np.random.default_rng(12)
    for _ in range(20):
        K, J = rng.integers(2, 5, size=2)
        d = random_normalized(rng, K, J)
        p = rng.dirichlet(np.ones(K))
        D = rng.uniform(0.01, 0.8) * d.d_max
        sol = rd.rd_function(p, d, D)
        assert sol.rate >= 0
        assert sol.zero_rate == (sol.rate == 0) == (sol.s0 == 0)
        if sol.zero_rate:
            assert D >= sol.d_max_q0 - 1e-12
            continue
        assert sol.rate == pytest.approx(naive_F(sol.s0, sol.q0.probs, p, d.entries, D), abs=1e-8)
        assert sol.stationarity <= rd.STATIONARITY_TOL
        assert sol.hess_det is None


def test_rd_record_fields(hamming2):
    rec = rd.rd_with_curvature([0.5, 0.5], hamming2, 0.25).to_record()
    assert set(rec) == {"rate_nats", "s0", "q0", "m", "hess_det", "zero_rate"}


def test_rd_at_zero_is_entropy():
    rng = np.random.default_rng(2)
    for K in (2, 3, 4):
        perm = rng.permutation(K)
        e = np.ones((K, K))
        e[np.arange(K), perm] = 0
        p = rng.dirichlet(np.ones(K))
        sol = rd.rd_function(p, DistortionMatrix(e), 0.0)
        assert sol.rate == pytest.approx(-(p @ np.log(p)), abs=1e-9)


def test_curvature_symmetric(hamming2):
    D = 0.25
    sol = rd.rd_with_curvature([0.5, 0.5], hamming2, D)
    assert sol.m_s0q0 == pytest.approx(D * (1 - D), rel=1e-9)
    s, h = sol.s0, 1e-4
    F = lambda t: rd.eval_F(t, sol.q0, [0.5, 0.5], hamming2, D)  # noqa: E731
    fd = -(F(s + h) - 2 * F(s) + F(s - h)) / h**2
    assert fd == pytest.approx(sol.m_s0q0, rel=1e-6)


def test_m_vanishes_for_deterministic_tilt():
    assert rd.m_value(1.3, [1.0, 0.0], [1.0], DistortionMatrix([[0.0, 1.0]])) == 0.0


def _analytic_hessian(p, d, D, q, s):
    e = np.exp(-s * d)
    Z = e @ q
    w = e / Z[:, None]
    Fqq = (p[:, None, None] * w[:, :, None] * w[:, None, :]).sum(axis=0)
    dbar = (w * q * d).sum(axis=1)
    Fqs = (p[:, None] * w * (d - dbar[:, None])).sum(axis=0)
    M = rd.m_value(s, q, p, d)
    H = Fqq + np.outer(Fqs, Fqs) / M  # ds0/dQ = F_Qs / M by the implicit function theorem
    J = q.size
    B = np.vstack([np.eye(J - 1), -np.ones(J - 1)])
    return B.T @ H @ B


def test_hessian_against_analytic_and_coarse_fd():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 6:
        K, J = rng.integers(2, 4, size=2)
        d = random_normalized(rng, K, J)
        p = rng.dirichlet(np.ones(K) * 3)
        D = rng.uniform(0.1, 0.4) * d.d_max
        sol = rd.rd_function(p, d, D)
        if sol.zero_rate or sol.boundary:
            continue
        sol = rd.curvature(p, d, D, sol)
        Ha = _analytic_hessian(p, d.entries, D, sol.q0.probs, sol.s0)
        coarse = np.linalg.det(rd.reduced_hessian(p, d, D, sol.q0, h=1e-3))
        assert coarse == pytest.approx(sol.hess_det, rel=1e-3)
        assert np.linalg.det(Ha) == pytest.approx(sol.hess_det, rel=1e-4)
        checked += 1


def test_boundary_optimum_flagged():
    # source letter 2 is cheap to reproduce by letter 0 or 1; letter 2 of Q0 vanishes
    d = DistortionMatrix([[0, 1, 1], [1, 0, 1], [0.1, 0.1, 0]])
    sol = rd.rd_with_curvature([0.45, 0.45, 0.1], d, 0.2)
    if sol.boundary:
        assert sol.hess_det is None
    else:
        assert sol.hess_det > 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_F_concave_in_s_convex_in_q(seed):
    rng = np.random.default_rng(seed)
    K, J = rng.integers(1, 5, size=2)
    d = random_normalized(rng, K, J)
    p = rng.dirichlet(np.ones(K))
    q1, q2 = rng.dirichlet(np.ones(J), size=2)
    D = rng.uniform(0, 1)
    s, h = rng.uniform(0.01, 6), 1e-3
    F = lambda t, q: rd.eval_F(t, q, p, d, D)  # noqa: E731
    assert F(s + h, q1) - 2 * F(s, q1) + F(s - h, q1) <= 1e-9
    assert F(s, (q1 + q2) / 2) <= (F(s, q1) + F(s, q2)) / 2 + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rd_monotone_convex_in_D(seed):
    rng = np.random.default_rng(seed)
    K, J = rng.integers(2, 4, size=2)
    d = random_normalized(rng, K, J)
    p = rng.dirichlet(np.ones(K))
    D1, D3 = sorted(rng.uniform(0.02, 0.8, size=2) * d.d_max)
    D2 = (D1 + D3) / 2
    r1, r2, r3 = (rd.rd_function(p, d, D).rate for D in (D1, D2, D3))
    assert r3 <= r2 + 1e-9 and r2 <= r1 + 1e-9
    assert r2 <= (r1 + r3) / 2 + 1e-8


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_min_sup_equals_sup_min(seed):
    rng = np.random.default_rng(seed)
    K, J = rng.integers(2, 5, size=2)
    d = random_normalized(rng, K, J)
    p = rng.dirichlet(np.ones(K))
    D = rng.uniform(0.02, 0.8) * d.d_max
    assert rd.rd_function(p, d, D).rate == pytest.approx(blahut_arimoto_rate(p, d, D), abs=1e-6)


def test_qpmf_inputs_accepted(hamming2):
    a = rd.eval_F(0.7, Qpmf([0.4, 0.6]), Pmf([0.5, 0.5]), hamming2, 0.2)
    b = rd.eval_F(0.7, [0.4, 0.6], [0.5, 0.5], hamming2, 0.2)
    assert a == b
