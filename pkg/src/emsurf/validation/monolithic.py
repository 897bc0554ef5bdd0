"""Monolithic reference solve of a whole array: every region kept, no reduction.

The cell meshes are placed on the lattice, coincident wall triangles of
neighbouring boxes collapse into ordinary interfaces between the two cells'
regions, and the space outside all boxes becomes one more region.  The full
block system ``U^T Z U x = U^T b`` is then solved directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ..kernels.assembly import ETA0, Medium, basis_samples
from ..macromodel import build_U, decompose, assemble_interior_system
from ..mesh import EXTERIOR, SurfaceKind, TriMesh, merge_vertices
from ..post import CurrentSources


@dataclass(frozen=True, eq=False)
class ArrayMesh:
    mesh: TriMesh
    outer_region: int
    eps: dict  # region -> relative permittivity

    def permittivity(self, region):
        return self.eps[int(region)]


def build_array_mesh(layout, geometries: dict) -> ArrayMesh:
    """Global mesh of a layout; ``geometries`` maps template id to geometry."""
    nreg = max(g.nregions for g in geometries.values())
    verts, tris, kinds, faces, fronts, backs = [], [], [], [], [], []
    eps = {}
    off = 0
    for m in range(layout.ncells):
        g = geometries[layout.templates[m]]
        mesh = g.mesh
        base = m * nreg

        def rename(r):
            return np.where(r == EXTERIOR, EXTERIOR, r + base)

        verts.append(mesh.vertices + layout.position(m))
        tris.append(mesh.triangles + off)
        off += len(mesh.vertices)
        kinds.append(mesh.kinds)
        faces.append(mesh.face_ids)
        fronts.append(rename(mesh.front))
        backs.append(rename(mesh.back))
        for r in range(1, g.nregions + 1):
            eps[base + r] = g.permittivity(r)
    v, t = merge_vertices(np.concatenate(verts), np.concatenate(tris), tol=1e-10)
    kinds = np.concatenate(kinds)
    faces = np.concatenate(faces)
    front = np.concatenate(fronts)
    back = np.concatenate(backs)
    # coincident wall triangles of neighbouring boxes become one interface
    key = np.sort(t, axis=1)
    _, first, inv, counts = np.unique(key, axis=0, return_index=True, return_inverse=True,
                                      return_counts=True)
    keep = np.ones(len(t), bool)
    for grp in np.nonzero(counts == 2)[0]:
        i, j = np.nonzero(inv.ravel() == grp)[0]
        if front[i] != EXTERIOR or front[j] != EXTERIOR:
            raise ValueError("coincident triangles that are not box walls")
        front[i] = back[j]
        kinds[i] = SurfaceKind.DIELECTRIC_INTERFACE
        faces[i] = -1
        keep[j] = False
    if np.any(counts > 2):
        raise ValueError("more than two coincident triangles")
    outer = layout.ncells * nreg + 1
    front = np.where(front == EXTERIOR, outer, front)
    eps[outer] = 1.0 + 0j
    mesh = TriMesh(v, t[keep], kinds[keep], faces[keep], front[keep], back[keep]).validate()
    return ArrayMesh(mesh, outer, eps)


@dataclass(eq=False)
class MonolithicSolution:
    amesh: ArrayMesh
    decomposition: object
    incidence: object
    unknowns: np.ndarray
    raw: np.ndarray

    @property
    def n_unique(self) -> int:
        return self.incidence.shape[1]

    @property
    def n_raw(self) -> int:
        return self.incidence.shape[0]

    def outer_currents(self, degree: int = 4) -> CurrentSources:
        """Currents on the hull as seen from outside, for far-field radiation."""
        dec = self.decomposition
        pos = [i for i, r in enumerate(dec.regions) if r.region == self.amesh.outer_region][0]
        info = dec.regions[pos]
        off = self.incidence.offsets[pos]
        nj = len(info.basis)
        x = self.raw[off:off + info.size]
        js = basis_samples(info.basis, degree)
        ms = basis_samples(info.basis, degree, subset=info.m_index)
        return CurrentSources.from_samples(js, [x[:nj]], ms, [x[nj:]])


def monolithic_counts(layout, geometries: dict, frequency) -> tuple:
    """``(raw, unique)`` unknown counts of the monolithic system, without solving."""
    amesh = build_array_mesh(layout, geometries)
    dec = decompose(amesh.mesh, amesh.permittivity, frequency, with_exterior=False)
    U = build_U(dec, defer_ground_edges=False)
    return U.shape


def solve_monolithic(layout, geometries: dict, frequency, excitation,
                     quadrature=None) -> MonolithicSolution:
    """Dense PMCHWT solve of the whole array with all interiors kept."""
    amesh = build_array_mesh(layout, geometries)
    dec = decompose(amesh.mesh, amesh.permittivity, frequency, with_exterior=False)
    U = build_U(dec, defer_ground_edges=False)
    system = assemble_interior_system(dec, quadrature)
    Um = U.matrix.tocsr()
    ncol = U.shape[1]
    A = np.zeros((ncol, ncol), complex)
    b = np.zeros(ncol, complex)
    k0 = Medium(1.0, frequency).k0
    for info, blk, off in zip(dec.regions, system.blocks, system.offsets):
        m = blk.matrix.shape[0]
        Uv = Um[off:off + m]
        A += Uv.T @ (Uv.T @ blk.matrix.T).T
        if info.region == amesh.outer_region:
            js = basis_samples(info.basis, 4)
            ms = basis_samples(info.basis, 4, subset=info.m_index)
            E, _ = excitation.fields(js.points, k0)
            _, H = excitation.fields(ms.points, k0)
            rhs = np.concatenate([js.test(E) / ETA0, -ms.test(H)])
            b += Uv.T @ rhs
    x = sla.solve(A, b)
    return MonolithicSolution(amesh, dec, U, x, Um @ x)
