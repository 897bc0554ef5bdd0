"""Lattice of fictitious boxes: layout, inter-cell coupling, overlap merge, excitation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .kernels.assembly import (ETA0, BasisSamples, Medium, assemble_operators, basis_samples)
from .macromodel import IncidenceError, SignedUnionFind, UnitCellModel
from .mesh import GEOM_TOL, RwgBasisSet

log = logging.getLogger(__name__)


class LayoutError(ValueError):
    """Cells that cannot be placed on a common lattice."""


class ExcitationError(ValueError):
    """Invalid incident-field description."""


# ---------------------------------------------------------------------------
# layout


@dataclass(frozen=True, eq=False)
class ArrayLayout:
    """Row-major lattice of cells; cell ``m = ix * My + iy`` sits at ``origin + (ix px, iy py, 0)``."""

    counts: tuple
    period: tuple
    templates: tuple
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        mx, my = self.counts
        if mx < 1 or my < 1:
            raise LayoutError("cell counts must be positive")
        if len(self.templates) != mx * my:
            raise LayoutError(f"template map covers {len(self.templates)} cells, expected {mx * my}")
        object.__setattr__(self, "origin", np.asarray(self.origin, float))

    @property
    def ncells(self) -> int:
        return self.counts[0] * self.counts[1]

    @property
    def dim(self) -> int:
        return 1 if min(self.counts) == 1 else 2

    def index(self, ix, iy) -> int:
        return ix * self.counts[1] + iy

    def lattice(self, m):
        return divmod(m, self.counts[1])

    def position(self, m) -> np.ndarray:
        ix, iy = self.lattice(m)
        return self.origin + np.array([ix * self.period[0], iy * self.period[1], 0.0])

    def offsets(self):
        mx, my = self.counts
        return [(dx, dy) for dx in range(-mx + 1, mx) for dy in range(-my + 1, my)]


@dataclass(frozen=True, eq=False)
class BoxTemplate:
    """Kept unknowns of the (shared) fictitious box of every cell."""

    exterior: RwgBasisSet
    m_index: np.ndarray
    eq_kind: np.ndarray
    eq_rwg: np.ndarray
    eq_mid: np.ndarray
    eq_side_tri: np.ndarray
    eq_side_sign: np.ndarray
    width: float
    depth: float
    height: float
    digest: str

    @property
    def n(self) -> int:
        return len(self.eq_kind)

    def exterior_rows(self):
        """Positions of exterior J and m unknowns in the local ordering."""
        return np.nonzero(self.eq_kind == 0)[0], np.nonzero(self.eq_kind == 1)[0]

    def contains(self, points, shift, margin=0.0):
        p = np.atleast_2d(points) - shift
        return ((p[:, 0] > -margin) & (p[:, 0] < self.width + margin)
                & (p[:, 1] > -margin) & (p[:, 1] < self.depth + margin)
                & (p[:, 2] > -margin) & (p[:, 2] < self.height + margin))


def box_template(model: UnitCellModel) -> BoxTemplate:
    dec, U = model.decomposition, model.incidence
    ext = dec.exterior
    eq = U.eq
    mid = np.zeros((len(eq), 3))
    j = eq.kind == 0
    mid[j] = ext.basis.midpoints[eq.rwg[j]]
    m = eq.kind == 1
    mid[m] = ext.basis.midpoints[ext.m_index[eq.rwg[m]]]
    inner = eq.kind == 2
    if np.any(inner):
        ib = next(r.basis for r in dec.regions if r.region == eq.inner_region)
        mid[inner] = ib.midpoints[eq.rwg[inner]]
    g = model.geometry
    return BoxTemplate(ext.basis, ext.m_index, eq.kind, eq.rwg, mid, eq.side_tri, eq.side_sign,
                       g.width, g.width, g.box_height, g.seq_digest())


@dataclass(frozen=True, eq=False)
class GlobalDofMap:
    """Per-cell stacked unknowns ``Y`` (cell-major) and their merged numbering."""

    ncells: int
    n_local: int
    Uo: sp.csr_matrix | None = None

    @property
    def n_stacked(self) -> int:
        return self.ncells * self.n_local

    @property
    def n_merged(self) -> int:
        return self.n_stacked if self.Uo is None else self.Uo.shape[1]

    @property
    def duplicates(self) -> int:
        return self.n_stacked - self.n_merged

    def local_slice(self, m) -> slice:
        return slice(m * self.n_local, (m + 1) * self.n_local)

    def column_of(self, m, i):
        row = self.Uo.getrow(m * self.n_local + i)
        return int(row.indices[0]), float(row.data[0])


def build_layout(counts, period, template_map, models: dict, origin=(0.0, 0.0, 0.0)):
    """Lattice with a template per cell; all boxes must share one mesh."""
    templates = tuple(template_map)
    missing = sorted({t for t in templates if t not in models})
    if missing:
        raise LayoutError(f"no macromodel for template(s) {missing}")
    digests = {t: box_template(models[t]).digest for t in set(templates)}
    if len(set(digests.values())) != 1:
        raise LayoutError(f"fictitious-box meshes differ between templates: {sorted(digests)}")
    if np.isscalar(period):
        period = (float(period), float(period))
    layout = ArrayLayout(tuple(int(c) for c in counts), tuple(period), templates, np.asarray(origin))
    box = box_template(models[templates[0]])
    if abs(box.width - layout.period[0]) > GEOM_TOL or abs(box.depth - layout.period[1]) > GEOM_TOL:
        raise LayoutError("lattice periods must equal the cell footprint")
    return layout, GlobalDofMap(layout.ncells, box.n)


# ---------------------------------------------------------------------------
# coupling generators


def _exterior_block(L, K, k0, box: BoxTemplate):
    """Embed free-space EFIE/MFIE blocks into the local kept-unknown ordering."""
    n = box.n
    mi = box.m_index
    nj = L.shape[0]
    top = np.hstack([1j * k0 * L, K[:, mi]])
    bottom = np.hstack([K[mi], -1j * k0 * L[np.ix_(mi, mi)]])
    full = np.vstack([top, bottom])
    pos = np.full(n, -1)
    jrow = box.eq_kind == 0
    pos[jrow] = box.eq_rwg[jrow]
    mrow = box.eq_kind == 1
    pos[mrow] = nj + box.eq_rwg[mrow]
    keep = np.nonzero(pos >= 0)[0]
    out = np.zeros((n, n), complex)
    out[np.ix_(keep, keep)] = full[np.ix_(pos[keep], pos[keep])]
    return out


def coupling_block(box: BoxTemplate, test_shift, source_shift, frequency, quadrature=None):
    """Free-space block: exterior equations on the test box, currents on the source box."""
    med = Medium(1.0, frequency)
    test = box.exterior.translated(np.asarray(test_shift, float))
    src = box.exterior.translated(np.asarray(source_shift, float))
    ops = assemble_operators(test, src, med.k, quadrature)
    return _exterior_block(ops["L"], ops["K"], med.k0, box)


def assemble_coupling_generators(layout: ArrayLayout, box: BoxTemplate, frequency,
                                 quadrature=None, use_reciprocity: bool = True) -> dict:
    """Generator block for every lattice offset ``(dx, dy)``.

    With ``use_reciprocity`` the block for ``-d`` is taken as the transpose of
    the block for ``d`` (the Galerkin pair rules are symmetric).
    """
    gens = {}
    px, py = layout.period
    for d in layout.offsets():
        if use_reciprocity and (-d[0], -d[1]) in gens:
            gens[d] = gens[(-d[0], -d[1])].T.copy()
            continue
        gens[d] = coupling_block(box, (d[0] * px, d[1] * py, 0.0), (0.0, 0.0, 0.0), frequency,
                                 quadrature)
    return gens


# ---------------------------------------------------------------------------
# overlap merge


def _plane_items(box: BoxTemplate, axis: int, value: float):
    """Kept unknowns whose edge lies in the plane ``x[axis] = value``.

    Returns ``{(kind, key): (local index, sign on the in-plane triangle, tri centroid)}``.
    """
    ext = box.exterior
    mesh = ext.mesh
    v = mesh.vertices
    out = {}
    other = [a for a in range(3) if a != axis]
    for i, (kind, r) in enumerate(zip(box.eq_kind, box.eq_rwg)):
        if kind == 2:
            t = box.eq_side_tri[i]
            corners = v[mesh.triangles[t]]
            if not np.all(np.abs(corners[:, axis] - value) < GEOM_TOL):
                continue
            sign = int(box.eq_side_sign[i])
        else:
            rr = r if kind == 0 else box.m_index[r]
            e = v[ext.edges[rr]]
            if not np.all(np.abs(e[:, axis] - value) < GEOM_TOL):
                continue
            t = None
            for tri, s in ((ext.tri_plus[rr], 1), (ext.tri_minus[rr], -1)):
                if np.all(np.abs(v[mesh.triangles[tri]][:, axis] - value) < GEOM_TOL):
                    t, sign = tri, s
                    break
            if t is None:
                continue
            corners = v[mesh.triangles[t]]
        key = (int(kind),) + tuple(np.round(box.eq_mid[i][other] / GEOM_TOL).astype(np.int64))
        cen = tuple(np.round(corners.mean(axis=0)[other] / GEOM_TOL).astype(np.int64))
        out.setdefault(key, []).append((i, sign, cen))
    return out


def _face_matches(box: BoxTemplate, axis: int):
    """(i, j, sign): unknown i on the +axis face equals sign * unknown j of the neighbour."""
    size = box.width if axis == 0 else box.depth
    hi = _plane_items(box, axis, size)
    lo = _plane_items(box, axis, 0.0)
    if set(hi) != set(lo):
        raise IncidenceError("opposite box faces do not carry matching basis functions")
    out = []
    for key, items in hi.items():
        partners = lo[key]
        if len(items) != 1 or len(partners) != 1:
            raise IncidenceError(f"ambiguous face matching at {key}")
        i, si, ci = items[0]
        j, sj, cj = partners[0]
        if ci != cj:
            # the in-plane triangles must coincide after translation
            raise IncidenceError(f"face triangles do not coincide at {key}")
        # opposite currents on the shared face: s_i y_i + s_j y_j = 0
        out.append((i, j, -si * sj))
    return out


def _ground_edge_pairs(box: BoxTemplate, axis: int, value: float):
    """(inner, exterior, sign) pairs at ground-plane edges on one box face."""
    items = _plane_items(box, axis, value)
    out = []
    for key, lst in items.items():
        if key[0] != 2:
            continue
        ext_key = (0,) + key[1:]
        (i, si, _), = lst
        for j, sj, _ in items.get(ext_key, []):
            out.append((i, j, -si * sj))
    return out


def build_Uo(layout: ArrayLayout, box: BoxTemplate):
    """Overlap incidence matrix merging coincident unknowns of adjacent boxes.

    Shared faces: the unknowns of the two boxes are equal and opposite on the
    common face, so they become one column (including the interior
    ground-plane edge unknowns).  Ground-plane edges on the array perimeter tie
    the interior edge current to the exterior one.
    """
    n = box.n
    M = layout.ncells
    mx, my = layout.counts
    uf = SignedUnionFind(M * n)
    matches = {0: _face_matches(box, 0), 1: _face_matches(box, 1)}
    perimeter = {(0, 0.0): _ground_edge_pairs(box, 0, 0.0),
                 (0, 1.0): _ground_edge_pairs(box, 0, box.width),
                 (1, 0.0): _ground_edge_pairs(box, 1, 0.0),
                 (1, 1.0): _ground_edge_pairs(box, 1, box.depth)}
    for m in range(M):
        ix, iy = layout.lattice(m)
        for axis, (nx, ny) in ((0, (ix + 1, iy)), (1, (ix, iy + 1))):
            if nx < mx and ny < my:
                mp = layout.index(nx, ny)
                for i, j, s in matches[axis]:
                    uf.union(m * n + i, mp * n + j, s)
        # perimeter faces
        for axis, side, exposed in ((0, 0.0, ix == 0), (0, 1.0, ix == mx - 1),
                                    (1, 0.0, iy == 0), (1, 1.0, iy == my - 1)):
            if exposed:
                for i, j, s in perimeter[(axis, side)]:
                    uf.union(m * n + i, m * n + j, s)
    roots = np.array([uf.find(i) for i in range(M * n)])
    par = np.array([uf.parity_of(i) for i in range(M * n)], float)
    uniq, cols = np.unique(roots, return_inverse=True)
    Uo = sp.csr_matrix((par, (np.arange(M * n), cols)), shape=(M * n, len(uniq)))
    return Uo, GlobalDofMap(M, n, Uo)


# ---------------------------------------------------------------------------
# excitation


@dataclass(frozen=True)
class PlaneWave:
    """``E = amplitude * polarization * exp(-j k direction . r)``."""

    direction: tuple = (0.0, 0.0, -1.0)
    polarization: tuple = (1.0, 0.0, 0.0)
    amplitude: complex = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, float)
        p = np.asarray(self.polarization, complex)
        if abs(np.linalg.norm(d) - 1) > 1e-9 or abs(np.linalg.norm(p) - 1) > 1e-9:
            raise ExcitationError("direction and polarization must be unit vectors")
        if abs(np.vdot(d, p)) > 1e-9:
            raise ExcitationError("polarization must be orthogonal to the direction")

    def fields(self, points, k):
        r = np.asarray(points, float)
        d = np.asarray(self.direction, float)
        p = np.asarray(self.polarization, complex)
        ph = self.amplitude * np.exp(-1j * k * (r @ d))
        E = ph[..., None] * p
        H = np.cross(d, E) / ETA0
        return E, H

    def check_outside(self, layout, box):
        return None


@dataclass(frozen=True)
class HertzianDipole:
    """Infinitesimal electric dipole with current moment ``moment`` (A m)."""

    position: tuple = (0.0, 0.0, 0.1)
    orientation: tuple = (1.0, 0.0, 0.0)
    moment: complex = 1.0

    def __post_init__(self):
        if abs(np.linalg.norm(self.orientation) - 1) > 1e-9:
            raise ExcitationError("dipole orientation must be a unit vector")

    def fields(self, points, k):
        r = np.asarray(points, float) - np.asarray(self.position, float)
        p = np.asarray(self.orientation, float)
        R = np.linalg.norm(r, axis=-1)
        if np.any(R == 0):
            raise ExcitationError("field requested at the dipole position")
        rh = r / R[..., None]
        G = np.exp(-1j * k * R) / (4 * np.pi * R)
        g1 = -(1j * k + 1.0 / R) * G
        g2 = ((1j * k + 1.0 / R) ** 2 + 1.0 / R ** 2) * G
        rp = rh @ p
        omega_mu = k * ETA0  # free space
        E = -1j * omega_mu * self.moment * ((G + g1 / (k * k * R))[..., None] * p
                                           + ((g2 - g1 / R) / (k * k) * rp)[..., None] * rh)
        H = self.moment * g1[..., None] * np.cross(rh, p)
        return E, H

    def check_outside(self, layout, box):
        for m in range(layout.ncells):
            if box.contains(self.position, layout.position(m))[0]:
                raise ExcitationError(f"dipole at {self.position} lies inside the box of cell {m}")


@dataclass(frozen=True, eq=False)
class ExteriorSamples:
    """Quadrature samples of exterior J and m functions of the box at the origin."""

    j: BasisSamples
    m: BasisSamples


def exterior_samples(box: BoxTemplate, degree: int = 4) -> ExteriorSamples:
    return ExteriorSamples(basis_samples(box.exterior, degree),
                           basis_samples(box.exterior, degree, subset=box.m_index))


def assemble_excitation(spec, layout: ArrayLayout, box: BoxTemplate, dofs: GlobalDofMap,
                        frequency, samples: ExteriorSamples | None = None, merged: bool = True):
    """Tested incident fields on every box, merged with ``Uo^T`` when requested."""
    spec.check_outside(layout, box)
    k = Medium(1.0, frequency).k0
    s = samples or exterior_samples(box)
    jrow, mrow = box.exterior_rows()
    V = np.zeros(dofs.n_stacked, complex)
    for m in range(layout.ncells):
        shift = layout.position(m)
        Ej, _ = spec.fields(s.j.points + shift, k)
        _, Hm = spec.fields(s.m.points + shift, k)
        v = np.zeros(box.n, complex)
        v[jrow] = s.j.test(Ej)[box.eq_rwg[jrow]] / ETA0
        v[mrow] = -s.m.test(Hm)[box.eq_rwg[mrow]]
        V[dofs.local_slice(m)] = v
    if merged and dofs.Uo is not None:
        return dofs.Uo.T @ V
    return V
