"""Partial-wave (Mie) solution for plane-wave scattering by a sphere.

Independent of the integral-equation code; used as a reference oracle.
Incident field polarised along x, travelling along +z.
"""
from __future__ import annotations

import numpy as np
from scipy.special import spherical_jn, spherical_yn


def _nmax(x):
    return int(np.ceil(abs(x) + 4.0 * abs(x) ** (1.0 / 3.0) + 2.0))


def _psi(n, z):
    j = spherical_jn(n, z)
    return z * j, j + z * spherical_jn(n, z, derivative=True)


def _xi(n, x):
    j = spherical_jn(n, x) + 1j * spherical_yn(n, x)
    dj = spherical_jn(n, x, derivative=True) + 1j * spherical_yn(n, x, derivative=True)
    return x * j, j + x * dj


def mie_coefficients(size_parameter, eps_r=None):
    """Scattering coefficients ``a_n, b_n`` for ``n = 1..nmax``.

    ``eps_r=None`` selects a perfectly conducting sphere.  Non-magnetic
    materials are assumed.
    """
    x = float(size_parameter)
    n = np.arange(1, _nmax(x) + 1)
    psi, dpsi = _psi(n, x)
    xi, dxi = _xi(n, x)
    if eps_r is None:
        return dpsi / dxi, psi / xi
    m = np.sqrt(complex(eps_r))
    psim, dpsim = _psi(n, m * x)
    a = (m * psim * dpsi - psi * dpsim) / (m * psim * dxi - xi * dpsim)
    b = (psim * dpsi - m * psi * dpsim) / (psim * dxi - m * xi * dpsim)
    return a, b


def amplitude_functions(size_parameter, theta, eps_r=None):
    """Scattering amplitudes ``S1`` (perpendicular) and ``S2`` (parallel)."""
    a, b = mie_coefficients(size_parameter, eps_r)
    mu = np.cos(np.atleast_1d(np.asarray(theta, float)))
    nmax = len(a)
    pi = np.zeros((nmax + 1, mu.size))
    tau = np.zeros((nmax + 1, mu.size))
    pi[1] = 1.0
    tau[1] = mu
    for n in range(2, nmax + 1):
        pi[n] = ((2 * n - 1) * mu * pi[n - 1] - n * pi[n - 2]) / (n - 1)
        tau[n] = n * mu * pi[n] - (n + 1) * pi[n - 1]
    n = np.arange(1, nmax + 1)[:, None]
    c = (2 * n + 1) / (n * (n + 1))
    s1 = np.sum(c * (a[:, None] * pi[1:] + b[:, None] * tau[1:]), axis=0)
    s2 = np.sum(c * (a[:, None] * tau[1:] + b[:, None] * pi[1:]), axis=0)
    return s1, s2


def bistatic_rcs(k, radius, theta, plane="E", eps_r=None):
    """Bistatic radar cross section (m^2) in the E-plane (phi=0) or H-plane."""
    s1, s2 = amplitude_functions(k * radius, theta, eps_r)
    s = s2 if plane.upper() == "E" else s1
    return 4.0 * np.pi * np.abs(s) ** 2 / k ** 2
