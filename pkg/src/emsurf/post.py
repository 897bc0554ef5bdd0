"""Far-field radiation, directivity and near-field probes of equivalent currents."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .kernels.assembly import ETA0, FOUR_PI, BasisSamples, inner_integrals
from .quadrature import triangle_rule

CSV_HEADER = "theta_deg,E_theta_re,E_theta_im,E_phi_re,E_phi_im,D_dBi"


class ProbeError(ValueError):
    """Probe point too close to a radiating triangle."""


class DirectivityError(ValueError):
    """Directivity of a pattern that radiates no power."""


def spherical_unit_vectors(theta, phi):
    """``r, theta, phi`` unit vectors for angle arrays (radians)."""
    theta = np.asarray(theta, float)
    phi = np.asarray(phi, float)
    st, ct, sp_, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
    r = np.stack([st * cp, st * sp_, ct], axis=-1)
    t = np.stack([ct * cp, ct * sp_, -st], axis=-1)
    p = np.stack([-sp_, cp, np.zeros_like(st)], axis=-1)
    return r, t, p


@dataclass(frozen=True, eq=False)
class CurrentSources:
    """Electric (``J``) and normalised magnetic (``m = M / eta0``) currents
    sampled at quadrature points: ``points`` (N, 3), weighted vectors (N, 3).
    """

    points: np.ndarray
    j_weighted: np.ndarray
    m_points: np.ndarray
    m_weighted: np.ndarray

    @staticmethod
    def from_samples(js: BasisSamples, jc, ms: BasisSamples, mc, shifts=((0.0, 0.0, 0.0),)):
        """Build from per-cell coefficients ``jc[m]``/``mc[m]`` and cell shifts."""
        P, W, Pm, Wm = [], [], [], []
        for shift, a, b in zip(shifts, jc, mc):
            P.append((js.points + np.asarray(shift)).reshape(-1, 3))
            W.append(js.expand(a).reshape(-1, 3))
            Pm.append((ms.points + np.asarray(shift)).reshape(-1, 3))
            Wm.append(ms.expand(b).reshape(-1, 3))
        return CurrentSources(np.concatenate(P), np.concatenate(W), np.concatenate(Pm),
                              np.concatenate(Wm))

    def scaled(self, factor):
        return CurrentSources(self.points, factor * self.j_weighted, self.m_points,
                              factor * self.m_weighted)


def radiate_far_field(sources: CurrentSources, theta, phi, k, chunk: int = 256):
    """Far-zone ``E_theta, E_phi`` (V), i.e. ``r exp(jkr) E`` as r -> infinity.

    Phase reference at the coordinate origin.
    """
    theta = np.atleast_1d(np.asarray(theta, float))
    phi = np.broadcast_to(np.asarray(phi, float), theta.shape)
    rh, th, ph = spherical_unit_vectors(theta.ravel(), phi.ravel())
    NJ = np.zeros((len(rh), 3), complex)
    Nm = np.zeros((len(rh), 3), complex)
    for i0 in range(0, len(rh), chunk):
        r = rh[i0:i0 + chunk]
        NJ[i0:i0 + chunk] = np.exp(1j * k * (r @ sources.points.T)) @ sources.j_weighted
        Nm[i0:i0 + chunk] = np.exp(1j * k * (r @ sources.m_points.T)) @ sources.m_weighted
    c = -1j * k * ETA0 / FOUR_PI
    e_t = c * (np.einsum("ix,ix->i", NJ, th) + np.einsum("ix,ix->i", Nm, ph))
    e_p = c * (np.einsum("ix,ix->i", NJ, ph) - np.einsum("ix,ix->i", Nm, th))
    return e_t.reshape(theta.shape), e_p.reshape(theta.shape)


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Gauss-Legendre in theta times uniform phi."""

    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray  # solid-angle weights, sum 4 pi

    @staticmethod
    def create(order: int) -> "SphereGrid":
        nt = order + 1
        nphi = 2 * (order + 1)
        x, w = np.polynomial.legendre.leggauss(nt)
        t = np.arccos(x)
        p = 2 * np.pi * np.arange(nphi) / nphi
        T, Pg = np.meshgrid(t, p, indexing="ij")
        W = np.outer(w, np.full(nphi, 2 * np.pi / nphi))
        return SphereGrid(T, Pg, W)

    @staticmethod
    def for_size(k, radius) -> "SphereGrid":
        return SphereGrid.create(int(np.ceil(k * radius)) + 10)


def radiation_intensity(e_theta, e_phi):
    return (np.abs(e_theta) ** 2 + np.abs(e_phi) ** 2) / (2.0 * ETA0)


def compute_directivity(e_theta, e_phi, weights):
    """``D = 4 pi U / P_rad`` on a sphere grid; returns ``(D, P_rad)``."""
    U = radiation_intensity(e_theta, e_phi)
    prad = float(np.sum(U * weights))
    if not prad > 0:
        raise DirectivityError("pattern carries zero power")
    return 4 * np.pi * U / prad, prad


@dataclass(frozen=True, eq=False)
class FarFieldCut:
    phi_deg: float
    theta_deg: np.ndarray
    e_theta: np.ndarray
    e_phi: np.ndarray
    directivity_dbi: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.theta_deg) <= 0):
            raise ValueError("cut angles must be strictly increasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for t, a, b, d in zip(self.theta_deg, self.e_theta, self.e_phi, self.directivity_dbi):
            buf.write(f"{t:.6f},{a.real:.10e},{a.imag:.10e},{b.real:.10e},{b.imag:.10e},{d:.6f}\n")
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())


def far_field_cut(sources: CurrentSources, k, phi_deg, theta_deg, prad) -> FarFieldCut:
    """Cut in the plane ``phi``; negative theta maps to ``phi + 180``."""
    theta_deg = np.asarray(theta_deg, float)
    th = np.radians(np.abs(theta_deg))
    ph = np.radians(np.where(theta_deg < 0, phi_deg + 180.0, phi_deg))
    e_t, e_p = radiate_far_field(sources, th, ph, k)
    # express the fields in the (theta, phi) frame of the cut half-plane theta >= 0
    flip = theta_deg < 0
    e_t = np.where(flip, -e_t, e_t)
    e_p = np.where(flip, -e_p, e_p)
    U = radiation_intensity(e_t, e_p)
    with np.errstate(divide="ignore"):
        d = 10 * np.log10(4 * np.pi * U / prad)
    d = np.where(np.isfinite(d), d, -400.0)
    return FarFieldCut(float(phi_deg), theta_deg, e_t, e_p, d)


# ---------------------------------------------------------------------------
# near field


@dataclass(frozen=True, eq=False)
class RadiatingSurface:
    """Triangles with half-function coefficients, for full-kernel field evaluation.

    For triangle ``t`` the current is ``sum_a c[t, a] (r - corners[t, a])``
    (``a`` over the three local vertices) for both ``J`` and ``m``.
    """

    corners: np.ndarray
    cj: np.ndarray
    cm: np.ndarray


def surface_from_basis(basis, j_coef, m_coef=None, m_index=None, shift=(0.0, 0.0, 0.0)):
    """Collapse RWG coefficients into per-triangle half coefficients."""
    mesh = basis.mesh
    rwg, t, local, coef = basis.halves()
    tris, inv = np.unique(t, return_inverse=True)
    cj = np.zeros((len(tris), 3), complex)
    np.add.at(cj, (inv, local), coef * np.asarray(j_coef)[rwg])
    cm = np.zeros((len(tris), 3), complex)
    if m_coef is not None:
        full = np.zeros(len(basis), complex)
        full[m_index] = m_coef
        np.add.at(cm, (inv, local), coef * full[rwg])
    corners = mesh.vertices[mesh.triangles[tris]] + np.asarray(shift, float)
    return RadiatingSurface(corners, cj, cm)


def merge_surfaces(surfaces) -> RadiatingSurface:
    return RadiatingSurface(np.concatenate([s.corners for s in surfaces]),
                            np.concatenate([s.cj for s in surfaces]),
                            np.concatenate([s.cm for s in surfaces]))


def point_triangle_distance(points, corners):
    """Euclidean distance from each point to each triangle, shape (P, T)."""
    p = np.asarray(points, float)[:, None, :]
    a, b, c = corners[None, :, 0], corners[None, :, 1], corners[None, :, 2]
    n = np.cross(b - a, c - a)
    n2 = np.einsum("...x,...x->...", n, n)
    d = np.einsum("...x,...x->...", p - a, n) / np.sqrt(n2)
    q = p - (d / np.sqrt(n2))[..., None] * n
    # barycentric test of the projection
    def _bary(u, v, w):
        return np.einsum("...x,...x->...", np.cross(v - u, q - u), n)
    inside = (_bary(a, b, c) >= 0) & (_bary(b, c, a) >= 0) & (_bary(c, a, b) >= 0)

    def _seg(u, v):
        e = v - u
        s = np.clip(np.einsum("...x,...x->...", p - u, e) / np.einsum("...x,...x->...", e, e), 0, 1)
        return np.linalg.norm(p - (u + s[..., None] * e), axis=-1)

    edge = np.minimum(np.minimum(_seg(a, b), _seg(b, c)), _seg(c, a))
    return np.where(inside, np.abs(d), edge)


def probe_near_field(surface: RadiatingSurface, points, k, wavelength, min_distance=0.05,
                     inner_degree: int = 5):
    """Full-kernel ``E`` and ``H`` radiated by the currents of ``surface``.

    Raises :class:`ProbeError` for points closer than ``min_distance``
    wavelengths to any radiating triangle.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    T = len(surface.corners)
    if T == 0:
        z = np.zeros((len(pts), 3), complex)
        return z, z.copy()
    dist = point_triangle_distance(pts, surface.corners)
    if np.any(dist < min_distance * wavelength):
        i, t = np.unravel_index(np.argmin(dist), dist.shape)
        raise ProbeError(f"probe point {pts[i]} is {dist[i, t] / wavelength:.3f} wavelengths "
                         f"from a source triangle (minimum {min_distance})")
    rule = triangle_rule(inner_degree)
    E = np.zeros((len(pts), 3), complex)
    H = np.zeros((len(pts), 3), complex)
    for i, r in enumerate(pts):
        obs = np.broadcast_to(r, (T, 1, 3)).copy()
        g0, g1, gg = inner_integrals(obs, surface.corners, k, rule)
        g0, g1, gg = g0[:, 0], g1[:, 0], gg[:, 0]
        # int G f = c (g1 - p g0), div f = 2 c
        def pot(c):
            ig = np.einsum("ta,tx->tx", c, g1) - np.einsum("ta,tax,t->tx", c, surface.corners, g0)
            div = 2.0 * c.sum(axis=1)
            return ig.sum(axis=0), (div[:, None] * gg).sum(axis=0)

        def curl(c):
            # int grad G x f = int grad G x (r' - r) + grad G x (r - p) -> (r - p) term only
            ra = r[None, None, :] - surface.corners
            return np.einsum("ta,tax->x", c, np.cross(gg[:, None, :], ra))

        aj, dj = pot(surface.cj)
        am, dm = pot(surface.cm)
        E[i] = -1j * k * ETA0 * aj - 1j * ETA0 / k * dj - ETA0 * curl(surface.cm)
        H[i] = curl(surface.cj) - 1j * k * am - 1j / k * dm
    return E, H


def null_depth_db(E_total, E_inc):
    """Per-point ``20 log10 |E_total| / |E_inc|``."""
    num = np.linalg.norm(E_total, axis=-1)
    den = np.linalg.norm(E_inc, axis=-1)
    with np.errstate(divide="ignore"):
        return 20 * np.log10(num / den)


# ---------------------------------------------------------------------------
# solved currents


@dataclass(frozen=True, eq=False)
class CurrentSolution:
    """Merged unknowns ``Y~`` and their expansion to per-cell box currents."""

    merged: np.ndarray
    layout: object
    box: object
    Uo: object

    @property
    def stacked(self) -> np.ndarray:
        """``Uo Y~``: per-cell coefficients, cell-major."""
        return self.Uo @ self.merged if self.Uo is not None else np.asarray(self.merged)

    def cell(self, m):
        """Exterior ``J`` (full basis) and ``m`` (magnetic subset) coefficients of cell ``m``."""
        box = self.box
        y = self.stacked[m * box.n:(m + 1) * box.n]
        jrow, mrow = box.exterior_rows()
        jc = np.zeros(len(box.exterior), complex)
        jc[box.eq_rwg[jrow]] = y[jrow]
        mc = np.zeros(len(box.m_index), complex)
        mc[box.eq_rwg[mrow]] = y[mrow]
        return jc, mc

    def sources(self, samples) -> CurrentSources:
        cells = [self.cell(m) for m in range(self.layout.ncells)]
        shifts = [self.layout.position(m) for m in range(self.layout.ncells)]
        return CurrentSources.from_samples(samples.j, [c[0] for c in cells], samples.m,
                                           [c[1] for c in cells], shifts)

    def surface(self) -> RadiatingSurface:
        out = []
        for m in range(self.layout.ncells):
            jc, mc = self.cell(m)
            out.append(surface_from_basis(self.box.exterior, jc, mc, self.box.m_index,
                                          self.layout.position(m)))
        return merge_surfaces(out)
