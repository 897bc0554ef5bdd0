"""End-to-end array solve: cell models, coupling operator, merge, preconditioned GMRES."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .array import (ArrayLayout, BoxTemplate, GlobalDofMap, assemble_coupling_generators,
                    assemble_excitation, box_template, build_layout, build_Uo, exterior_samples)
from .fftaccel import BlockToeplitzOperator, build_block_toeplitz
from .kernels.assembly import Medium
from .macromodel import UnitCellModel, build_cell_model
from .post import CurrentSolution, SphereGrid, compute_directivity, far_field_cut, radiate_far_field
from .solver import (GmresConfig, IdentityPreconditioner, PreconditionerSpec,
                     build_preconditioner, gmres_solve)

log = logging.getLogger(__name__)

REPORT_LABELS = {
    "unknowns": "Total number of unknowns",
    "macromodel": "Macromodel generation",
    "fill": "Matrix fill time",
    "factorization": "Preconditioner factorization",
    "solve": "Iterative solver",
}


@dataclass(eq=False)
class ArraySystem:
    """Assembled merged system ``A = Uo^T (Z_eq + Z_o) Uo`` and its pieces."""

    layout: ArrayLayout
    box: BoxTemplate
    models: dict
    dofs: GlobalDofMap
    coupling: BlockToeplitzOperator
    generators: dict
    frequency: float
    times: dict = field(default_factory=dict)

    @property
    def Uo(self):
        return self.dofs.Uo

    def macro(self, m) -> np.ndarray:
        return self.models[self.layout.templates[m]].macromodel.matrix

    def apply_stacked(self, Y) -> np.ndarray:
        """``(Z_eq + Z_o) Y`` on stacked per-cell coefficients."""
        out = self.coupling.apply(Y)
        n = self.box.n
        Yc = Y.reshape(self.layout.ncells, n)
        outc = out.reshape(self.layout.ncells, n)
        for tid in set(self.layout.templates):
            cells = [m for m, t in enumerate(self.layout.templates) if t == tid]
            outc[cells] += Yc[cells] @ self.models[tid].macromodel.matrix.T
        return out

    def apply(self, y) -> np.ndarray:
        Uo = self.Uo
        return Uo.T @ self.apply_stacked(Uo @ y)

    def block(self, m, mp) -> np.ndarray:
        """Dense stacked block coupling source cell ``mp`` into test cell ``m``."""
        (ax, ay), (bx, by) = self.layout.lattice(m), self.layout.lattice(mp)
        blk = self.generators[(ax - bx, ay - by)].copy()
        if m == mp:
            blk += self.macro(m)
        return blk

    def dense(self) -> np.ndarray:
        """Brute-force merged matrix, for small layouts only."""
        M, n = self.layout.ncells, self.box.n
        Z = np.zeros((M * n, M * n), complex)
        for m in range(M):
            for mp in range(M):
                Z[m * n:(m + 1) * n, mp * n:(mp + 1) * n] = self.block(m, mp)
        Uo = self.Uo
        return np.asarray((Uo.T @ (Uo.T @ Z.T).T))

    def preconditioner(self, spec: PreconditionerSpec = PreconditionerSpec()):
        radius = spec.resolve(self.frequency)
        pos = np.array([self.layout.position(m) for m in range(self.layout.ncells)])
        return build_preconditioner(self.block, pos, self.box.eq_mid, radius, self.Uo)


def build_models(geometries: dict, frequency, quadrature=None, cache_dir=None,
                 keep_system=False) -> dict:
    return {tid: build_cell_model(g, frequency, quadrature, cache_dir, keep_system)
            for tid, g in geometries.items()}


def assemble_system(models: dict, counts, template_map, frequency, quadrature=None,
                    origin=(0.0, 0.0, 0.0), workers: int = 1) -> ArraySystem:
    first = next(iter(models.values()))
    layout, _ = build_layout(counts, first.geometry.width, template_map, models, origin)
    box = box_template(models[layout.templates[0]])
    t0 = time.perf_counter()
    gens = assemble_coupling_generators(layout, box, frequency, quadrature)
    op = build_block_toeplitz(gens, layout.counts, workers=workers)
    _, dofs = build_Uo(layout, box)
    return ArraySystem(layout, box, models, dofs, op, gens, frequency,
                       {"fill": time.perf_counter() - t0})


@dataclass(eq=False)
class ArraySolution:
    system: ArraySystem
    currents: CurrentSolution
    report: object
    rhs: np.ndarray
    excitation: object

    def sources(self, samples=None):
        return self.currents.sources(samples or exterior_samples(self.system.box))


def solve_array(system: ArraySystem, excitation, config: GmresConfig = GmresConfig(),
                precondition: bool = True, spec: PreconditionerSpec = PreconditionerSpec(),
                raise_on_failure: bool = True) -> ArraySolution:
    rhs = assemble_excitation(excitation, system.layout, system.box, system.dofs,
                              system.frequency)
    t0 = time.perf_counter()
    prec = system.preconditioner(spec) if precondition else IdentityPreconditioner()
    t_prec = time.perf_counter() - t0
    y, report = gmres_solve(system.apply, prec, rhs, config, raise_on_failure)
    report.times["factorization"] = t_prec
    report.times["fill"] = system.times.get("fill", 0.0)
    cur = CurrentSolution(y, system.layout, system.box, system.Uo)
    return ArraySolution(system, cur, report, rhs, excitation)


def array_radius(layout: ArrayLayout, box: BoxTemplate) -> float:
    """Radius of the sphere about the origin that encloses every box."""
    corners = []
    for m in range(layout.ncells):
        p = layout.position(m)
        for dx in (0, box.width):
            for dy in (0, box.depth):
                for dz in (0, box.height):
                    corners.append(p + (dx, dy, dz))
    return float(np.max(np.linalg.norm(corners, axis=1)))


def radiated_power(sources, k, radius):
    grid = SphereGrid.for_size(k, radius)
    et, ep = radiate_far_field(sources, grid.theta, grid.phi, k)
    D, prad = compute_directivity(et, ep, grid.weights)
    return prad, grid, D


def cuts(sources, k, radius, phis=(0.0, 45.0, 90.0), theta_deg=None):
    if theta_deg is None:
        theta_deg = np.linspace(-90.0, 90.0, 181)
    prad, _, _ = radiated_power(sources, k, radius)
    return [far_field_cut(sources, k, p, theta_deg, prad) for p in phis]


def format_report(rows: dict, extra: dict | None = None) -> str:
    """Plain-text report; ``rows`` keyed by the ``REPORT_LABELS`` keys."""
    lines = []
    for key, label in REPORT_LABELS.items():
        if key not in rows:
            continue
        v = rows[key]
        lines.append(f"{label}: {v}" if key == "unknowns" else f"{label}: {v:.3f} s")
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    return "\n".join(lines) + "\n"


def wavenumber(frequency) -> float:
    return Medium(1.0, frequency).k0
