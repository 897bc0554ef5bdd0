"""Integral-equation scattering by spheres, for comparison with the Mie series."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..array import PlaneWave
from ..kernels.assembly import (C0, ETA0, Medium, assemble_L, assemble_region_block,
                                basis_samples)
from ..mesh import SurfaceKind, build_rwg, icosphere
from ..post import CurrentSources, radiate_far_field


def max_edge(mesh) -> float:
    c = mesh.corners
    return float(max(np.linalg.norm(c[:, i] - c[:, (i + 1) % 3], axis=1).max() for i in range(3)))


def coarsest_level(radius, wavelength, fraction=10.0, limit=6) -> int:
    """Smallest icosphere level whose longest edge is at most ``wavelength / fraction``."""
    for level in range(limit + 1):
        if max_edge(icosphere(radius, level)) <= wavelength / fraction:
            return level
    raise ValueError("no icosphere level within the limit meets the edge length")


@dataclass(frozen=True, eq=False)
class SphereScattering:
    sources: CurrentSources
    k: float
    unknowns: int

    def rcs(self, theta, plane="E"):
        """Bistatic RCS (m^2) for +z incidence with x polarisation."""
        phi = 0.0 if plane.upper() == "E" else np.pi / 2
        et, ep = radiate_far_field(self.sources, theta, np.full(np.shape(theta), phi), self.k)
        return 4 * np.pi * (np.abs(et) ** 2 + np.abs(ep) ** 2)


def pec_sphere_efie(radius, k, level, quadrature=None, degree=4) -> SphereScattering:
    """Solve the EFIE on an icosphere under a unit x-polarised plane wave along +z."""
    mesh = icosphere(radius, level, kind=SurfaceKind.PEC)
    basis = build_rwg(mesh, region=0)
    L = np.asarray(assemble_L(basis, basis, k, quadrature))
    s = basis_samples(basis, degree)
    E, _ = PlaneWave((0.0, 0.0, 1.0), (1.0, 0.0, 0.0)).fields(s.points, k)
    J = np.linalg.solve(1j * k * L, s.test(E) / ETA0)
    empty = np.zeros((0, 3))
    src = CurrentSources(s.points.reshape(-1, 3), s.expand(J).reshape(-1, 3), empty,
                         empty.astype(complex))
    return SphereScattering(src, float(k), len(basis))


def dielectric_sphere_pmchwt(radius, k, eps_r, level, quadrature=None,
                             degree=4) -> SphereScattering:
    """PMCHWT solve for a homogeneous sphere under the same incident wave."""
    mesh = icosphere(radius, level)
    outer = build_rwg(mesh, region=0)
    inner = build_rwg(mesh, region=1)
    f = k * C0 / (2 * np.pi)
    Z = (assemble_region_block(outer, Medium(1.0, f), quadrature).matrix
         + assemble_region_block(inner, Medium(eps_r, f), quadrature).matrix)
    s = basis_samples(outer, degree)
    E, H = PlaneWave((0.0, 0.0, 1.0), (1.0, 0.0, 0.0)).fields(s.points, k)
    x = np.linalg.solve(Z, np.concatenate([s.test(E) / ETA0, -s.test(H)]))
    n = len(outer)
    src = CurrentSources(s.points.reshape(-1, 3), s.expand(x[:n]).reshape(-1, 3),
                         s.points.reshape(-1, 3), s.expand(x[n:]).reshape(-1, 3))
    return SphereScattering(src, float(k), 2 * n)
