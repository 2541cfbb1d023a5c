"""Rate-distortion function through its Lagrange dual.

All quantities are in nats.  The dual objective is

    F(s, Q) = -sum_x P(x) ln sum_xhat Q(xhat) exp(-s d(x, xhat)) - s D

and the rate is ``min_Q sup_{s>=0} F(s, Q)``.  The inner supremum is solved
in closed form up to a scalar root (``solve_s0``); the outer minimization is
an exponentiated-gradient descent on the simplex, finished by a Newton polish
of the KKT system on the identified support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .core import DistortionMatrix, Pmf, Qpmf, as_matrix

STATIONARITY_TOL = 1e-8
S0_GAP_TOL = 1e-12
CLAMP = 1e-12
BOUNDARY = 1e-6
HESS_STEP = 1e-4
N_RANDOM_STARTS = 5


class DomainError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RdSolution:
    rate: float
    s0: float
    q0: Qpmf
    zero_rate: bool
    d_max_q0: float
    D: float
    m_s0q0: float | None = None
    hess_det: float | None = None
    boundary: bool = False
    stationarity: float = 0.0

    @property
    def rate_bits(self) -> float:
        return self.rate / math.log(2)

    def to_record(self) -> dict:
        return {
            "rate_nats": self.rate,
            "s0": self.s0,
            "q0": [float(v) for v in self.q0.probs],
            "m": self.m_s0q0,
            "hess_det": self.hess_det,
            "zero_rate": self.zero_rate,
        }


def _arrays(p, d, q=None):
    pa = p.probs if isinstance(p, Pmf) else np.asarray(p, dtype=float)
    da = as_matrix(d).entries
    if q is None:
        return pa, da
    qa = q.probs if isinstance(q, Qpmf) else np.asarray(q, dtype=float)
    return pa, da, qa


def _active(p, d):
    """Drop source letters of zero probability (they never enter F)."""
    keep = p > 0
    return p[keep], d[keep]


def _log_partition(s, q, d):
    with np.errstate(divide="ignore"):
        a = np.log(q)[None, :] - s * d
    top = a.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        logz = np.log(np.exp(a - safe[:, None]).sum(axis=1)) + safe
    return a, logz


def _tilted_moments(s, q, d):
    """Per source letter: mean and variance of d(x, .) under Q~_x ∝ Q e^{-s d}."""
    a, logz = _log_partition(s, q, d)
    t = np.exp(a - logz[:, None])
    mean = (t * d).sum(axis=1)
    var = (t * (d - mean[:, None]) ** 2).sum(axis=1)
    return mean, var, logz


def eval_F(s: float, q, p, d, D: float) -> float:
    """Evaluate the dual objective F(s, Q) with log-sum-exp over reproductions."""
    p, d, q = _arrays(p, d, q)
    p, d = _active(p, d)
    if s == 0:
        return 0.0
    _, logz = _log_partition(s, q, d)
    if np.any(np.isneginf(logz)):
        raise DomainError("inner sum vanishes for a source letter of positive probability")
    return float(-(p @ logz) - s * D)


def d_max_q(q, p, d) -> float:
    p, d, q = _arrays(p, d, q)
    return float(p @ d @ q)


def reachable_min(q, p, d) -> float:
    """Smallest expected distortion achievable using only letters in supp(q)."""
    p, d, q = _arrays(p, d, q)
    sub = d[:, q > 0]
    return float(p @ sub.min(axis=1))


def tilted_distortion(s: float, q, p, d) -> float:
    p, d, q = _arrays(p, d, q)
    p, d = _active(p, d)
    mean, _, _ = _tilted_moments(s, q, d)
    return float(p @ mean)


def m_value(s: float, q, p, d) -> float:
    """|d^2 F / ds^2|: the P-average of the tilted distortion variance."""
    p, d, q = _arrays(p, d, q)
    p, d = _active(p, d)
    _, var, _ = _tilted_moments(s, q, d)
    return float(p @ var)


def _solve_s0(q, p, d, D):
    # p, d already restricted to active rows
    if D >= float(p @ d @ q):
        return 0.0
    if D <= float(p @ d[:, q > 0].min(axis=1)):
        return math.inf
    lo, hi = 0.0, 1.0
    while True:
        mean, _, _ = _tilted_moments(hi, q, d)
        if p @ mean <= D:
            break
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            return math.inf
    s = 0.5 * (lo + hi)
    for _ in range(400):
        mean, var, _ = _tilted_moments(s, q, d)
        g = float(p @ mean) - D
        if abs(g) <= S0_GAP_TOL:
            break
        if g > 0:
            lo = s
        else:
            hi = s
        m = float(p @ var)
        step = s + g / m if m > 0 else math.nan
        s = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 4e-16 * hi:
            break
    return s


def solve_s0(q, p, d, D: float) -> float:
    """Maximizer of F(., Q) over s >= 0.

    Returns 0 when ``D >= D_max(Q)`` and ``math.inf`` when D is below the
    distortion reachable inside supp(Q) (infeasible for this Q).
    """
    if D < 0:
        raise ValueError("D must be nonnegative")
    p, d, q = _arrays(p, d, q)
    p, d = _active(p, d)
    return _solve_s0(q, p, d, D)


# --- outer minimization ------------------------------------------------------


def _dual(q, p, d, D):
    """Value G(Q) = F(s0(Q), Q), the slope s0 and c_j = -dG/dQ_j."""
    s = _solve_s0(q, p, d, D)
    if math.isinf(s):
        return math.inf, s, None
    a, logz = _log_partition(s, q, d)
    val = float(-(p @ logz) - s * D)
    with np.errstate(over="ignore"):  # columns outside supp(Q) may carry c_j = inf
        c = p @ np.exp(-s * d - logz[:, None])
    return val, s, c


def _fw_gap(c) -> float:
    # sum_j q_j c_j = 1 identically, so max c - 1 bounds G(q) - min G
    return float(c.max() - 1.0)


def _kkt_residual(q, c) -> float:
    on = q > 0
    r = np.abs(c[on] - 1.0).max()
    if (~on).any():
        r = max(r, float(np.maximum(c[~on] - 1.0, 0.0).max()))
    return float(r)


def _eg_descent(q, p, d, D, tol=1e-9, max_iter=20000):
    val, s, c = _dual(q, p, d, D)
    eta = 1.0
    for _ in range(max_iter):
        if _fw_gap(c) <= tol:
            break
        while True:
            qn = q * np.exp(eta * (c - c.max()))
            qn /= qn.sum()
            vn, sn, cn = _dual(qn, p, d, D)
            if vn <= val - 1e-4 * float(c @ (qn - q)):
                break
            eta *= 0.5
            if eta < 1e-14:
                return q, val, s, c
        q, val, s, c = qn, vn, sn, cn
        eta *= 2.0
    return q, val, s, c


def _polish(q, p, d, D, support):
    """Newton solve of c_j(Q, s) = 1 on the support, distortion(Q, s) = D."""
    S = np.flatnonzero(support)
    J = q.size
    s_init = _solve_s0(q, p, d, D)
    if not (0 < s_init < math.inf):
        return None

    def unpack(z):
        qq = np.zeros(J)
        qq[S] = np.exp(z[:-1])
        return qq, math.exp(z[-1])

    def resid(z):
        qq, s = unpack(z)
        a, logz = _log_partition(s, qq, d)
        c = p @ np.exp(-s * d - logz[:, None])
        t = np.exp(a - logz[:, None])
        dist = float(p @ (t * d).sum(axis=1))
        return np.concatenate([c[S] - 1.0, [dist - D]])

    z0 = np.concatenate([np.log(np.maximum(q[S], 1e-300)), [math.log(s_init)]])
    sol = optimize.root(resid, z0, method="hybr", options={"xtol": 1e-15})
    if not np.all(np.isfinite(sol.x)):
        return None
    qq, _ = unpack(sol.x)
    if not np.isfinite(qq).all() or qq.sum() <= 0:
        return None
    return qq / qq.sum()


def _clamp(q):
    q = np.where(q < CLAMP, 0.0, q)
    return q / q.sum()


def _try_polish(q, c, p, d, D):
    for support in ((c >= 1.0 - 1e-3) | (q > 1e-2), (c >= 1.0 - 1e-6) | (q > 1e-4)):
        qp = _polish(q, p, d, D, support)
        if qp is None:
            continue
        qp = _clamp(qp)
        vp, sp, cp = _dual(qp, p, d, D)
        if cp is not None and _kkt_residual(qp, cp) <= STATIONARITY_TOL:
            return qp, vp, sp, cp
    return None


def _minimize(q, p, d, D):
    val, s, c = _dual(q, p, d, D)
    for tol in (1e-5, 1e-7, 1e-9, 1e-11, 1e-13):
        q, val, s, c = _eg_descent(q, p, d, D, tol=tol)
        done = _try_polish(q, c, p, d, D)
        if done is not None:
            return done
    return q, val, s, c


def _starts(J):
    rng = np.random.default_rng(20240601)
    out = [np.full(J, 1.0 / J)]
    out += list(rng.dirichlet(np.ones(J), size=N_RANDOM_STARTS))
    return out


def _limit_rate_zero_D(p, d):
    """R(0, P): minimize -sum_x P(x) ln Q(zero set of x) by EM iterations."""
    z = (d == 0).astype(float)
    J = d.shape[1]
    q = np.full(J, 1.0 / J)
    for _ in range(200000):
        Z = z @ q
        c = p @ (z / Z[:, None])
        if c.max() - 1.0 <= 1e-13:
            break
        q = q * c
        q /= q.sum()
    q = _clamp(q)
    rate = float(-(p @ np.log(z @ q)))
    return q, rate, float(c.max() - 1.0)


def rd_function(p, d, D: float) -> RdSolution:
    """R_d(D, P) in nats with the achieving slope s0 and reproduction law Q0.

    ``d`` must be normalized (zero row minima).
    """
    if D < 0:
        raise ValueError("distortion level D must be >= 0")
    dm = as_matrix(d)
    if not dm.normalized:
        raise DomainError("distortion matrix must be normalized (zero row minima)")
    pa, da = _arrays(p, dm)
    pa, da = _active(pa, da)
    J = da.shape[1]
    vertex = pa @ da
    j0 = int(np.argmin(vertex))
    if vertex[j0] <= D + 1e-12:
        q0 = np.zeros(J)
        q0[j0] = 1.0
        return RdSolution(0.0, 0.0, Qpmf(q0), True, float(vertex[j0]), D)
    if D == 0:
        q0, rate, gap = _limit_rate_zero_D(pa, da)
        return RdSolution(rate, math.inf, Qpmf(q0), False, float(vertex @ q0), D,
                          stationarity=gap, boundary=bool(q0.min() < BOUNDARY))

    best = None
    for q_start in _starts(J):
        q, val, s, c = _eg_descent(q_start, pa, da, D, tol=1e-4, max_iter=500)
        if best is None or val < best[1]:
            best = (q, val)
    q0, rate, s0, c = _minimize(best[0], pa, da, D)
    kkt = _kkt_residual(q0, c)
    if kkt > STATIONARITY_TOL:
        raise ConvergenceError(f"rate-distortion solver not stationary: residual {kkt:.3e}")
    rate = max(rate, 0.0)
    return RdSolution(
        rate=rate,
        s0=s0,
        q0=Qpmf(q0),
        zero_rate=False,
        d_max_q0=float(vertex @ q0),
        D=D,
        boundary=bool(q0.min() < BOUNDARY),
        stationarity=kkt,
    )


def composed_value(q, p, d, D) -> float:
    """G(Q) = F(s0(Q), Q) = sup_s F(s, Q)."""
    pa, da, qa = _arrays(p, d, q)
    pa, da = _active(pa, da)
    return _dual(qa, pa, da, D)[0]


def _reduced_hessian_fd(q0, p, d, D, h):
    J = q0.size
    u0 = q0[:-1].copy()

    def G(u):
        q = np.append(u, 1.0 - u.sum())
        return _dual(q, p, d, D)[0]

    n = J - 1
    H = np.empty((n, n))
    g0 = G(u0)
    eye = np.eye(n) * h
    for i in range(n):
        H[i, i] = (G(u0 + eye[i]) - 2 * g0 + G(u0 - eye[i])) / h**2
        for k in range(i + 1, n):
            v = (G(u0 + eye[i] + eye[k]) - G(u0 + eye[i] - eye[k])
                 - G(u0 - eye[i] + eye[k]) + G(u0 - eye[i] - eye[k])) / (4 * h**2)
            H[i, k] = H[k, i] = v
    return H


def reduced_hessian(p, d, D: float, q0, h: float = HESS_STEP) -> np.ndarray:
    """Central finite-difference Hessian of Q -> F(s0(Q), Q) in the first J-1 coordinates."""
    pa, da, qa = _arrays(p, d, q0)
    pa, da = _active(pa, da)
    return _reduced_hessian_fd(qa, pa, da, D, h)


def curvature(p, d, D: float, sol: RdSolution, h: float = HESS_STEP) -> RdSolution:
    """Fill ``m_s0q0`` and ``hess_det`` for a positive-rate solution.

    The Hessian is unavailable (``boundary=True``) when some component of
    Q0 is below 1e-6.
    """
    if sol.zero_rate or not (0 < sol.s0 < math.inf):
        raise DomainError("curvature needs a positive-rate solution with finite s0 > 0")
    pa, da, qa = _arrays(p, d, sol.q0)
    pa, da = _active(pa, da)
    m = m_value(sol.s0, qa, pa, da)
    if qa.min() < BOUNDARY:
        return replace(sol, m_s0q0=m, hess_det=None, boundary=True)
    # probes must stay inside the simplex
    step = min(h, float(qa.min()) / 4)
    H = _reduced_hessian_fd(qa, pa, da, D, step)
    det = float(np.linalg.det(H))
    if not det > 1e-12:
        raise ConvergenceError(f"Hessian determinant {det:.3e} is not positive; ill-conditioned optimum")
    return replace(sol, m_s0q0=m, hess_det=det)


def rd_with_curvature(p, d, D: float) -> RdSolution:
    sol = rd_function(p, d, D)
    if sol.zero_rate or sol.boundary or math.isinf(sol.s0):
        if not sol.zero_rate and 0 < sol.s0 < math.inf:
            pa, da, qa = _arrays(p, d, sol.q0)
            return replace(sol, m_s0q0=m_value(sol.s0, qa, pa, da))
        return sol
    return curvature(p, d, D, sol)
