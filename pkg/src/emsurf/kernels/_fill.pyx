# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled regular triangle-pair integrals (same contract as ``_pairs_py``)."""

from libc.math cimport sqrt, exp, cos, sin

cdef double FOUR_PI = 12.566370614359172


def regular_block(const double[:, :, ::1] tq, const double[:, ::1] tw,
                  const double[:, :, ::1] tc,
                  const double[:, :, ::1] sq, const double[:, ::1] sw,
                  const double[:, :, ::1] sc,
                  double complex k,
                  double complex[:, :, :, ::1] A, double complex[:, ::1] S,
                  double complex[:, :, :, ::1] K):
    cdef Py_ssize_t nt = tq.shape[0], ns = sq.shape[0]
    cdef Py_ssize_t nqt = tq.shape[1], nqs = sq.shape[1]
    cdef Py_ssize_t i, j, q, s, a, b, x
    cdef double kr = k.real, ki = k.imag
    cdef double dx0, dx1, dx2, R, amp, ph, w
    cdef double complex e, f, g0, g1[3], gg[3], sacc
    cdef double complex aacc[3][3], kacc[3][3]
    cdef double ra[3][3], cr[3], r0, r1, r2
    cdef double complex ta, tk, c0, c1, c2, dot1
    with nogil:
        for i in range(nt):
            for j in range(ns):
                sacc = 0
                for a in range(3):
                    for b in range(3):
                        aacc[a][b] = 0
                        kacc[a][b] = 0
                for q in range(nqt):
                    r0 = tq[i, q, 0]
                    r1 = tq[i, q, 1]
                    r2 = tq[i, q, 2]
                    g0 = 0
                    for x in range(3):
                        g1[x] = 0
                        gg[x] = 0
                    for s in range(nqs):
                        dx0 = r0 - sq[j, s, 0]
                        dx1 = r1 - sq[j, s, 1]
                        dx2 = r2 - sq[j, s, 2]
                        R = sqrt(dx0 * dx0 + dx1 * dx1 + dx2 * dx2)
                        # exp(-j k R) with k = kr + j ki
                        amp = exp(ki * R) * sw[j, s] / (FOUR_PI * R)
                        ph = -kr * R
                        e = amp * cos(ph) + 1j * amp * sin(ph)
                        g0 = g0 + e
                        g1[0] = g1[0] + e * sq[j, s, 0]
                        g1[1] = g1[1] + e * sq[j, s, 1]
                        g1[2] = g1[2] + e * sq[j, s, 2]
                        f = -(1.0 + 1j * k * R) * e / (R * R)
                        gg[0] = gg[0] + f * dx0
                        gg[1] = gg[1] + f * dx1
                        gg[2] = gg[2] + f * dx2
                    w = tw[i, q]
                    sacc = sacc + w * g0
                    for a in range(3):
                        ra[a][0] = r0 - tc[i, a, 0]
                        ra[a][1] = r1 - tc[i, a, 1]
                        ra[a][2] = r2 - tc[i, a, 2]
                    for a in range(3):
                        dot1 = ra[a][0] * g1[0] + ra[a][1] * g1[1] + ra[a][2] * g1[2]
                        # ra x gg
                        c0 = ra[a][1] * gg[2] - ra[a][2] * gg[1]
                        c1 = ra[a][2] * gg[0] - ra[a][0] * gg[2]
                        c2 = ra[a][0] * gg[1] - ra[a][1] * gg[0]
                        tk = tc[i, a, 0] * c0 + tc[i, a, 1] * c1 + tc[i, a, 2] * c2
                        for b in range(3):
                            ta = dot1 - (ra[a][0] * sc[j, b, 0] + ra[a][1] * sc[j, b, 1]
                                         + ra[a][2] * sc[j, b, 2]) * g0
                            aacc[a][b] = aacc[a][b] + w * ta
                            kacc[a][b] = kacc[a][b] + w * (
                                tk - (sc[j, b, 0] * c0 + sc[j, b, 1] * c1 + sc[j, b, 2] * c2))
                S[i, j] = sacc
                for a in range(3):
                    for b in range(3):
                        A[i, j, a, b] = aacc[a][b]
                        K[i, j, a, b] = kacc[a][b]
