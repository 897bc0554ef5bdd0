"""Closed-form static potential integrals over flat triangles.

For an observation point ``r`` and a source triangle ``T`` these return

* ``s0 = int_T 1/R dS'``
* ``s1 = int_T r'/R dS'``
* ``sg = int_T grad_r(1/R) dS'``  (principal value in the plane of ``T``)

with ``R = |r - r'|``.  The formulas are the classical edge-sum expressions;
they remain finite for points on the triangle and on its edges.
"""
from __future__ import annotations

import numpy as np

# |d| (or the distance to an edge line) below this fraction of the triangle
# size is treated as exactly zero.
PLANE_EPS = 1e-10


def _safe_log_ratio(Rp, lp, Rm, lm, R0sq):
    """ln((R+ + l+)/(R- + l-)) evaluated without cancellation."""
    # (R + l)(R - l) = R0^2, so the two forms agree whenever R0 > 0.
    use_alt = (lp + lm) < 0
    num = np.where(use_alt, Rm - lm, Rp + lp)
    den = np.where(use_alt, Rp - lp, Rm + lm)
    tiny = np.finfo(float).tiny
    out = np.log(np.maximum(num, tiny) / np.maximum(den, tiny))
    # Observation point on the edge segment itself: contribution is weighted by
    # R0 -> 0 in s0/s1 and the edge term of the gradient is log divergent;
    # zero it so that callers only see finite numbers.  On the line but
    # outside the segment the ratio is finite and kept.
    on_segment = (R0sq == 0) & (lm <= 0) & (lp >= 0)
    return np.where(on_segment, 0.0, out)


def static_potentials(r, tri):
    """Static potentials for paired observation points and triangles.

    Parameters
    ----------
    r : (N, 3) observation points
    tri : (N, 3, 3) triangle corners, counter-clockwise about their normal

    Returns
    -------
    s0 : (N,)
    s1 : (N, 3)
    sg : (N, 3)
    """
    r = np.asarray(r, dtype=float)
    tri = np.asarray(tri, dtype=float)
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    nrm = np.cross(v1 - v0, v2 - v0)
    two_area = np.linalg.norm(nrm, axis=1)
    n = nrm / two_area[:, None]
    size = np.sqrt(two_area)

    d = np.einsum("ij,ij->i", r - v0, n)
    d = np.where(np.abs(d) < PLANE_EPS * size, 0.0, d)
    ad = np.abs(d)
    rho = r - d[:, None] * n

    s0 = np.zeros(len(r))
    s1_inplane = np.zeros_like(r)
    beta_sum = np.zeros(len(r))
    grad_inplane = np.zeros_like(r)

    for a, b in ((0, 1), (1, 2), (2, 0)):
        rm, rp = tri[:, a], tri[:, b]
        edge = rp - rm
        elen = np.linalg.norm(edge, axis=1)
        lhat = edge / elen[:, None]
        mhat = np.cross(lhat, n)
        tm, tp = rm - rho, rp - rho
        lm = np.einsum("ij,ij->i", tm, lhat)
        lp = np.einsum("ij,ij->i", tp, lhat)
        p0s = np.einsum("ij,ij->i", tm, mhat)  # signed distance to edge line
        p0s = np.where(np.abs(p0s) < PLANE_EPS * size, 0.0, p0s)
        p0 = np.abs(p0s)
        R0sq = p0 * p0 + d * d
        Rm = np.sqrt(np.einsum("ij,ij->i", tm, tm) + d * d)
        Rp = np.sqrt(np.einsum("ij,ij->i", tp, tp) + d * d)
        f2 = _safe_log_ratio(Rp, lp, Rm, lm, R0sq)
        with np.errstate(invalid="ignore", divide="ignore"):
            beta = (np.arctan2(p0 * lp, R0sq + ad * Rp)
                    - np.arctan2(p0 * lm, R0sq + ad * Rm))
        sgn = np.sign(p0s)
        s0 += p0s * f2 - ad * sgn * beta
        beta_sum += sgn * beta
        s1_inplane += 0.5 * mhat * (R0sq * f2 + lp * Rp - lm * Rm)[:, None]
        grad_inplane -= mhat * f2[:, None]

    s1 = s1_inplane + rho * s0[:, None]
    sg = grad_inplane - n * (np.sign(d) * beta_sum)[:, None]
    return s0, s1, sg
