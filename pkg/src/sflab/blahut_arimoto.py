"""Blahut-Arimoto reference for R(D), kept free of any code shared with ``rd``.

For a fixed slope s the alternating update ``q <- q * c(q)`` minimizes
``-sum_x P(x) ln sum_xhat q(xhat) exp(-s d(x, xhat))``; the rate at level D is
the maximum over s of that minimum minus ``s D`` (a concave function of s).
"""

import math

import numpy as np
from scipy import optimize


def _ba_inner(p, d, s, q=None, tol=1e-12, max_iter=200000):
    """Return (min_q G_s(q), q) with the Blahut upper/lower bound gap <= tol."""
    K, J = d.shape
    A = np.exp(-s * d)
    q = np.full(J, 1.0 / J) if q is None else q.copy()
    for _ in range(max_iter):
        z = A @ q
        c = (p / z) @ A
        upper = -float(p @ np.log(z))
        lower = upper - math.log(c.max())
        if upper - lower <= tol:
            break
        q = q * c
        q /= q.sum()
    return 0.5 * (upper + lower), q


def blahut_arimoto_rate(p, d, D, s_max=None, xatol=1e-9):
    """R(D) in nats by maximizing the BA dual value over the slope s."""
    p = np.asarray(p, dtype=float)
    d = np.asarray(getattr(d, "entries", d), dtype=float)
    keep = p > 0
    p, d = p[keep], d[keep]
    if D >= (p @ d).min():
        return 0.0
    cache = {}

    def neg_dual(s):
        val, _ = _ba_inner(p, d, s)
        out = -(val - s * D)
        cache[s] = -out
        return out

    if s_max is None:
        # grow the bracket until the dual is decreasing
        s_max = 1.0
        while neg_dual(2 * s_max) < neg_dual(s_max):
            s_max *= 2
            if s_max > 1e6:
                break
        s_max *= 2
    res = optimize.minimize_scalar(neg_dual, bounds=(0.0, s_max), method="bounded",
                                   options={"xatol": xatol, "maxiter": 500})
    return max(max(cache.values()), 0.0)


def ba_curve_point(p, d, s, tol=1e-12):
    """Parametric point (D_s, R_s) of the curve at slope -s."""
    p = np.asarray(p, dtype=float)
    d = np.asarray(getattr(d, "entries", d), dtype=float)
    _, q = _ba_inner(p, d, s, tol=tol)
    A = np.exp(-s * d) * q[None, :]
    cond = A / A.sum(axis=1, keepdims=True)
    Ds = float(p @ (cond * d).sum(axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(cond > 0, np.log(cond / q[None, :]), 0.0)
    Rs = float(p @ (cond * ratio).sum(axis=1))
    return Ds, Rs
