"""Closed-form asymptotics of the single-selection success probability.

Positive-rate branch::

    ln P_s ~ ln[(J-1)! (2 pi)^((J-1)/2) K_n / sqrt(det H)] - n R - (J/2) ln n

where ``H`` is the Hessian of ``Q -> F(s0(Q), Q)`` at the minimizer and
``K_n`` carries the lattice oscillation in ``(nD) mod Delta``.
Zero-rate branch: ``(J-1)! Vol{Q : D_max(Q) <= D}``, i.e. the fraction of the
simplex where the expected distortion is already below D.
"""

from __future__ import annotations

import math

import numpy as np

from . import rd
from .core import as_matrix, as_source, empirical
from .exact import SuccessProb

MC_VOLUME_SAMPLES = 10**6


class EstimateUnavailable(RuntimeError):
    """The saddle-point formula does not apply (boundary optimum, n = 1, ...)."""


def nd_mod_delta(nD: float, delta: float) -> float:
    r = nD - delta * math.floor(nD / delta)
    if r < 0 or delta - r <= 1e-9 * delta:
        r = 0.0
    return r


def k_n(s: float, m: float, delta: float, nD: float) -> float:
    """Lattice factor K_n[s, Q]; ``delta = 0`` gives the continuous limit 1/(s sqrt(2 pi M))."""
    if m <= 0:
        raise rd.DomainError("flat saddle: M(s, Q) must be positive")
    if s <= 0:
        raise rd.DomainError("K_n needs s > 0")
    root = math.sqrt(2 * math.pi * m)
    if delta == 0:
        return 1.0 / (s * root)
    r = nd_mod_delta(nD, delta)
    return delta * math.exp(-s * r) / (-math.expm1(-s * delta) * root)


def simplex_volume_fraction(p, d, D: float, samples: int = MC_VOLUME_SAMPLES, seed: int = 0):
    """Monte Carlo (J-1)! Vol{Q : D_max(Q) <= D}, with its standard error.

    Uniform simplex points come from normalized exponential spacings.
    """
    pa = np.asarray(getattr(p, "probs", p), dtype=float)
    da = as_matrix(d).entries
    v = pa @ da  # D_max(Q) = Q . v
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < samples:
        b = min(200_000, samples - done)
        e = rng.standard_exponential((b, v.size))
        dmax = (e @ v) / e.sum(axis=1)
        hits += int((dmax <= D).sum())
        done += b
    f = hits / samples
    return f, math.sqrt(f * (1 - f) / samples)


def success_prob_estimate(x, d, D: float, seed: int = 0, sol=None) -> SuccessProb:
    """Saddle-point estimate of P_s for block ``x`` under the normalized matrix ``d``.

    Depends on ``x`` only through its empirical distribution.  Raises
    ``EstimateUnavailable`` when the minimizing Q sits on the simplex boundary.
    """
    dm = as_matrix(d)
    x = as_source(x, dm.K)
    n, J = x.n, dm.J
    p = empirical(x)
    if n < 2:
        raise EstimateUnavailable("asymptotic formula undefined at n = 1")
    if sol is None:
        sol = rd.rd_with_curvature(p, dm, D)
    if sol.zero_rate:
        f, se = simplex_volume_fraction(p, dm, D, seed=seed)
        if f == 0:
            raise EstimateUnavailable("zero-rate volume estimate is 0")
        return SuccessProb(math.log(f), branch="zero_rate", source="saddle_estimate",
                           stderr=se, components={"volume_fraction": f})
    if sol.hess_det is None or not (0 < sol.s0 < math.inf):
        raise EstimateUnavailable("minimizing Q is on the simplex boundary; Hessian undefined")
    kn = k_n(sol.s0, sol.m_s0q0, dm.delta, n * D)
    const = (math.lgamma(J) + 0.5 * (J - 1) * math.log(2 * math.pi)
             + math.log(kn) - 0.5 * math.log(sol.hess_det))
    rate_term = n * sol.rate
    poly_term = 0.5 * J * math.log(n)
    return SuccessProb(
        -(rate_term + poly_term - const),
        branch="positive_rate",
        source="saddle_estimate",
        components={"rate_term": rate_term, "poly_term": poly_term, "const_term": const,
                    "k_n": kn, "s0": sol.s0, "m": sol.m_s0q0, "hess_det": sol.hess_det},
    )


def success_prob_given_q(x, d, D: float, q) -> SuccessProb:
    """Single-Q saddle estimate K_n[s0, Q] exp(-n F(s0, Q)) / sqrt(n)."""
    dm = as_matrix(d)
    x = as_source(x, dm.K)
    n = x.n
    p = empirical(x)
    qa = np.asarray(getattr(q, "probs", q), dtype=float)
    dmax = rd.d_max_q(qa, p, dm)
    if abs(D - dmax) <= 1e-12 * max(1.0, dmax):
        raise rd.DomainError("D equals D_max(Q): degenerate slope s0 = 0")
    if D > dmax:
        return SuccessProb(0.0, branch="zero_rate", source="saddle_estimate",
                           components={"d_max_q": dmax})
    s0 = rd.solve_s0(qa, p, dm, D)
    if math.isinf(s0):
        return SuccessProb(-math.inf, source="saddle_estimate", components={"infeasible": True})
    F = rd.eval_F(s0, qa, p, dm, D)
    m = rd.m_value(s0, qa, p, dm)
    kn = k_n(s0, m, dm.delta, n * D)
    return SuccessProb(math.log(kn) - n * F - 0.5 * math.log(n), source="saddle_estimate",
                       components={"s0": s0, "F": F, "m": m, "k_n": kn})
