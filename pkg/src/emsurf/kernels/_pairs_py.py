"""Pure numpy evaluation of regular triangle-pair integrals.

Used when the compiled extension is unavailable.  The interface mirrors
``emsurf.kernels._fill.regular_block``.
"""
from __future__ import annotations

import numpy as np

FOUR_PI = 4.0 * np.pi


def regular_block(tq, tw, tc, sq, sw, sc, k, A, S, K):
    """Accumulate local pair matrices for all test x source triangle pairs.

    Parameters
    ----------
    tq, sq : (N, q, 3) quadrature points on test / source triangles.
    tw, sw : (N, q) weights already multiplied by the triangle area.
    tc, sc : (N, 3, 3) corners.
    k : complex wavenumber.
    A, K : (Nt, Ns, 3, 3) complex outputs, S : (Nt, Ns) complex output.
        They are overwritten.
    """
    diff = tq[:, None, :, None, :] - sq[None, :, None, :, :]  # i j q s x
    R = np.sqrt(np.einsum("ijqsx,ijqsx->ijqs", diff, diff))
    e = np.exp(-1j * k * R) / (FOUR_PI * R) * sw[None, :, None, :]
    g0 = e.sum(axis=3)
    g1 = np.einsum("ijqs,jsx->ijqx", e, sq)
    f = -(1.0 + 1j * k * R) * e / (R * R)
    gg = np.einsum("ijqs,ijqsx->ijqx", f, diff)
    ra = tq[:, :, None, :] - tc[:, None, :, :]  # i q a x
    S[...] = np.einsum("iq,ijq->ij", tw, g0)
    t1 = np.einsum("iq,iqax,ijqx->ija", tw, ra, g1)
    t2 = np.einsum("iq,iqax,jbx,ijq->ijab", tw, ra, sc, g0)
    A[...] = t1[..., None] - t2
    cr = np.cross(ra[:, None, :, :, :], gg[:, :, :, None, :])  # i j q a x
    cw = np.einsum("iq,ijqax->ijax", tw, cr)
    K[...] = np.einsum("iax,ijax->ija", tc, cw)[..., None] - np.einsum("jbx,ijax->ijab", sc, cw)
