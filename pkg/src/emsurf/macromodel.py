"""Per-cell region decomposition, incidence matrix and Schur-complement macromodel.

Each homogeneous region ``v`` inside a cell carries its own electric and
(normalised) magnetic surface currents on its closed boundary.  The region
equations are block diagonal; boundary conditions between regions are
imposed through a signed incidence matrix ``U`` that maps unique unknowns to
the raw per-region coefficients.  Unknowns living on the fictitious box are
kept, everything else is eliminated by a Schur complement.
"""
from __future__ import annotations

import hashlib
import logging
import os
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack

from .kernels.assembly import Medium, RegionBlock, assemble_region_block, pec_touching
from .mesh import EXTERIOR, RwgBasisSet, SurfaceKind, TriMesh, UnitCellGeometry, _key, build_rwg

log = logging.getLogger(__name__)

COND_LIMIT = 1e13


class ReductionError(RuntimeError):
    """Interior block too ill-conditioned to eliminate."""


class IncidenceError(RuntimeError):
    """Inconsistent boundary conditions while building U."""


# ---------------------------------------------------------------------------
# signed union-find


class SignedUnionFind:
    """Disjoint sets with a +-1 parity between every element and its root."""

    def __init__(self, n):
        self.parent = np.arange(n)
        self.parity = np.ones(n, dtype=np.int8)

    def find(self, i):
        path = []
        while self.parent[i] != i:
            path.append(i)
            i = self.parent[i]
        root = i
        # compress, accumulating parity towards the root
        acc = 1
        for node in reversed(path):
            acc *= int(self.parity[node])
            self.parity[node] = acc
            self.parent[node] = root
        return root

    def parity_of(self, i):
        self.find(i)
        return int(self.parity[i]) if self.parent[i] != i else 1

    def union(self, a, b, sign):
        """Impose ``value[a] = sign * value[b]``."""
        ra, rb = self.find(a), self.find(b)
        pa, pb = self.parity_of(a), self.parity_of(b)
        if ra == rb:
            if pa * pb != sign:
                raise IncidenceError(f"contradictory boundary conditions between unknowns {a}, {b}")
            return
        # value[a] = pa*value[ra], value[b] = pb*value[rb]; want value[ra] = pa*sign*pb*value[rb]
        if ra < rb:
            self.parent[rb] = ra
            self.parity[rb] = pa * sign * pb
        else:
            self.parent[ra] = rb
            self.parity[ra] = pa * sign * pb


# ---------------------------------------------------------------------------
# decomposition


@dataclass(frozen=True, eq=False)
class RegionInfo:
    region: int
    medium: Medium
    basis: RwgBasisSet
    m_index: np.ndarray

    @property
    def size(self):
        return len(self.basis) + len(self.m_index)


CASE_LABELS = ("dielectric interface", "PEC interface", "PEC ground plane",
               "fictitious face over dielectric", "fictitious face on ground plane")


@dataclass(frozen=True, eq=False)
class RegionDecomposition:
    """Regions of one mesh with their bases and the boundary-case table.

    ``cases`` classifies every triangle into one of ``CASE_LABELS``.
    """

    mesh: TriMesh
    regions: tuple
    exterior: RegionInfo | None
    cases: np.ndarray
    frequency: float

    @property
    def raw_size(self) -> int:
        return sum(r.size for r in self.regions)

    def case_counts(self) -> dict:
        return {CASE_LABELS[i]: int(np.sum(self.cases == i)) for i in range(len(CASE_LABELS))}


def classify_triangles(mesh: TriMesh) -> np.ndarray:
    cases = np.full(mesh.ntri, -1)
    box = (mesh.front == EXTERIOR) | (mesh.back == EXTERIOR)
    cases[(mesh.kinds == SurfaceKind.DIELECTRIC_INTERFACE) & ~box] = 0
    cases[(mesh.kinds == SurfaceKind.PEC) & ~box] = 1
    cases[(mesh.kinds == SurfaceKind.GROUND_PLANE) & ~box] = 2
    cases[(mesh.kinds == SurfaceKind.FICTITIOUS_FACE) & box] = 3
    cases[(mesh.kinds == SurfaceKind.GROUND_PLANE) & box] = 4
    # a fictitious face that is not on the box degenerates to an interface
    cases[(mesh.kinds == SurfaceKind.FICTITIOUS_FACE) & ~box] = 0
    cases[(mesh.kinds == SurfaceKind.DIELECTRIC_INTERFACE) & box] = 3
    if np.any(cases < 0):
        bad = int(np.nonzero(cases < 0)[0][0])
        raise IncidenceError(f"triangle {bad} with tag {SurfaceKind(mesh.kinds[bad]).name} "
                             "cannot be classified")
    return cases


def decompose(mesh: TriMesh, permittivity, frequency: float,
              with_exterior: bool = True) -> RegionDecomposition:
    """Split a mesh into regions; ``permittivity(region)`` gives eps_r."""
    interior = [r for r in mesh.regions if r != EXTERIOR]
    regions = []
    for r in interior:
        basis = build_rwg(mesh, region=r)
        midx = np.nonzero(~pec_touching(basis))[0]
        regions.append(RegionInfo(r, Medium(permittivity(r), frequency, f"region{r}"), basis, midx))
    ext = None
    if with_exterior and EXTERIOR in mesh.regions:
        basis = build_rwg(mesh, region=EXTERIOR)
        midx = np.nonzero(~pec_touching(basis))[0]
        ext = RegionInfo(EXTERIOR, Medium(permittivity(EXTERIOR), frequency, "exterior"), basis,
                         midx)
    return RegionDecomposition(mesh, tuple(regions), ext, classify_triangles(mesh), frequency)


# ---------------------------------------------------------------------------
# incidence matrix


@dataclass(frozen=True, eq=False)
class EqUnknowns:
    """Description of the fictitious-surface unknowns of a cell.

    ``kind`` is 0 for electric, 1 for magnetic currents seen from outside the
    box and 2 for the interior electric currents at ground-plane edges.
    ``rwg`` indexes the exterior basis (kinds 0, 1) or the basis of
    ``inner_region`` (kind 2).  ``side_tri``/``side_sign`` give, for kind 2 and
    for ground-edge exterior functions, the box side triangle and the sign of
    the half-function on it.
    """

    kind: np.ndarray
    rwg: np.ndarray
    face: np.ndarray
    inner_region: int
    side_tri: np.ndarray
    side_sign: np.ndarray

    def __len__(self):
        return len(self.kind)

    @property
    def n_exterior(self) -> int:
        return int(np.sum(self.kind < 2))


@dataclass(frozen=True, eq=False)
class IncidenceMatrix:
    """Sparse signed map ``X = U X~`` with ``X~ = [X~_eq; X~_int]``."""

    matrix: sp.csr_matrix
    n_eq: int
    eq: EqUnknowns | None
    offsets: np.ndarray  # raw offset of each region block

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def n_int(self) -> int:
        return self.matrix.shape[1] - self.n_eq


def _half_lookup(info: RegionInfo, magnetic: bool):
    """dict (triangle, local opposite vertex) -> (function index, sign)."""
    b = info.basis
    rwg, t, local, coef = b.halves()
    if magnetic:
        pos = np.full(len(b), -1)
        pos[info.m_index] = np.arange(len(info.m_index))
        keep = pos[rwg] >= 0
        rwg, t, local, coef = pos[rwg][keep], t[keep], local[keep], coef[keep]
    return {(int(a), int(c)): (int(r), 1 if s > 0 else -1)
            for a, c, r, s in zip(t, local, rwg, coef)}


def _face_of(mesh, basis, idx):
    f = np.stack([mesh.face_ids[basis.tri_plus[idx]], mesh.face_ids[basis.tri_minus[idx]]])
    return f.min(axis=0)


def build_U(dec: RegionDecomposition, defer_ground_edges: bool = True) -> IncidenceMatrix:
    """Incidence matrix from the boundary conditions of every surface.

    Across every non-PEC triangle the tangential fields are continuous, so the
    electric and magnetic currents of the two adjacent regions are equal and
    opposite there; PEC triangles carry independent electric currents on each
    side and no magnetic current.  Components touching the exterior basis form
    the kept unknowns.  With ``defer_ground_edges`` the exterior functions at
    ground-plane edges are not tied to the interior: the interior current there
    becomes its own kept unknown, and the array-level merge decides the link.
    """
    mesh = dec.mesh
    infos = list(dec.regions)
    ext = dec.exterior
    all_infos = ([ext] if ext is not None else []) + infos
    # node numbering: per region, J nodes then M nodes
    starts = []
    n = 0
    for info in all_infos:
        starts.append(n)
        n += info.size
    uf = SignedUnionFind(n)
    region_pos = {info.region: i for i, info in enumerate(all_infos)}
    lookups = [(_half_lookup(info, False), _half_lookup(info, True)) for info in all_infos]
    pec = np.isin(mesh.kinds, [SurfaceKind.PEC, SurfaceKind.GROUND_PLANE])
    ground = mesh.kinds == SurfaceKind.GROUND_PLANE
    ext_pos = region_pos.get(EXTERIOR)
    deferred = []  # (interior node, exterior node, sign) pairs skipped
    for t in np.nonzero(~pec)[0]:
        f, b = int(mesh.front[t]), int(mesh.back[t])
        if f not in region_pos or b not in region_pos:
            continue
        pf, pb = region_pos[f], region_pos[b]
        for local in range(3):
            for mag in (0, 1):
                hf = lookups[pf][mag].get((int(t), local))
                hb = lookups[pb][mag].get((int(t), local))
                if hf is None and hb is None:
                    continue
                if hf is None or hb is None:
                    raise IncidenceError(f"magnetic current half on triangle {t} has no partner")
                off_f = starts[pf] + (len(all_infos[pf].basis) if mag else 0)
                off_b = starts[pb] + (len(all_infos[pb].basis) if mag else 0)
                a, c = off_f + hf[0], off_b + hb[0]
                sign = -hf[1] * hb[1]
                if defer_ground_edges and not mag and ext_pos in (pf, pb):
                    eb = ext.basis
                    er = hf[0] if pf == ext_pos else hb[0]
                    if ground[eb.tri_plus[er]] or ground[eb.tri_minus[er]]:
                        deferred.append((c if pf == ext_pos else a, a if pf == ext_pos else c,
                                         int(t), hb[1] if pf == ext_pos else hf[1]))
                        continue
                uf.union(a, c, sign)
    roots = np.array([uf.find(i) for i in range(n)])
    par = np.array([uf.parity_of(i) for i in range(n)], dtype=float)

    # kept unknowns: exterior J, exterior M, interior ground-edge J
    eq_nodes, kinds, rwgs, faces, side_tri, side_sign = [], [], [], [], [], []
    if ext is not None:
        eb = ext.basis
        jorder = np.lexsort((np.arange(len(eb)), _face_of(mesh, eb, np.arange(len(eb)))))
        for r in jorder:
            eq_nodes.append(starts[ext_pos] + r)
            kinds.append(0)
            rwgs.append(r)
            faces.append(_face_of(mesh, eb, np.array([r]))[0])
            side_tri.append(-1)
            side_sign.append(0)
        mface = _face_of(mesh, eb, ext.m_index)
        morder = np.lexsort((np.arange(len(ext.m_index)), mface))
        for q in morder:
            eq_nodes.append(starts[ext_pos] + len(eb) + q)
            kinds.append(1)
            rwgs.append(q)
            faces.append(mface[q])
            side_tri.append(-1)
            side_sign.append(0)
    inner_region = -1
    if deferred:
        keyed = []
        for node, enode, t, s in deferred:
            er = enode - starts[ext_pos]
            keyed.append((tuple(_key(eb.midpoints[er]).tolist()), node, t, s, er))
        keyed.sort(key=lambda x: (x[0], x[1]))
        inner_infos = {i for i, info in enumerate(all_infos)
                       if any(starts[i] <= k[1] < starts[i] + info.size for k in keyed)}
        if len(inner_infos) != 1:
            raise IncidenceError("ground-plane edges touch more than one interior region")
        inner_region = all_infos[inner_infos.pop()].region
        # exterior ground-edge functions record their side triangle too
        ext_side = {}
        for _, node, t, s, er in keyed:
            eq_nodes.append(node)
            kinds.append(2)
            rwgs.append(node - starts[region_pos[inner_region]])
            faces.append(int(mesh.face_ids[t]))
            side_tri.append(t)
            side_sign.append(s)
            ext_side[er] = t
        for i, (k, r) in enumerate(zip(kinds, rwgs)):
            if k == 0 and r in ext_side:
                t = ext_side[r]
                side_tri[i] = t
                side_sign[i] = 1 if eb.tri_plus[r] == t else -1
    eq_roots = roots[eq_nodes]
    if len(set(eq_roots.tolist())) != len(eq_roots):
        raise IncidenceError("two kept unknowns fell into the same component")
    col_of_root = {int(r): i for i, r in enumerate(eq_roots)}
    eq_par = par[eq_nodes]
    # interior components: deterministic order by first raw node
    raw_start = starts[1] if ext is not None else 0
    next_col = len(eq_nodes)
    rows, cols, vals = [], [], []
    for node in range(raw_start, n):
        r = int(roots[node])
        if r not in col_of_root:
            col_of_root[r] = next_col
            next_col += 1
        col = col_of_root[r]
        # value[node] = par[node] * value[root]; column value is value of the
        # kept node = eq_par * value[root]
        s = par[node] * (eq_par[col] if col < len(eq_nodes) else 1.0)
        rows.append(node - raw_start)
        cols.append(col)
        vals.append(s)
    nraw = n - raw_start
    U = sp.csr_matrix((vals, (rows, cols)), shape=(nraw, next_col))
    offsets = np.array(starts[1:] if ext is not None else starts) - raw_start
    eq = None
    if ext is not None:
        eq = EqUnknowns(np.array(kinds), np.array(rwgs), np.array(faces), inner_region,
                        np.array(side_tri), np.array(side_sign))
    return IncidenceMatrix(U, len(eq_nodes), eq, offsets)


# ---------------------------------------------------------------------------
# interior system and reduction


@dataclass(frozen=True, eq=False)
class InteriorSystem:
    blocks: tuple  # RegionBlock per interior region
    offsets: np.ndarray

    @property
    def size(self) -> int:
        return int(sum(b.matrix.shape[0] for b in self.blocks))

    def dense(self) -> np.ndarray:
        return sla.block_diag(*[b.matrix for b in self.blocks])


def assemble_interior_system(dec: RegionDecomposition, quadrature=None,
                             include_residue: bool = False) -> InteriorSystem:
    """Block-diagonal region equations (no coupling between regions)."""
    blocks = tuple(assemble_region_block(info.basis, info.medium, quadrature, include_residue)
                   for info in dec.regions)
    sizes = [b.matrix.shape[0] for b in blocks]
    return InteriorSystem(blocks, np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int))


def project(system: InteriorSystem, U: IncidenceMatrix) -> np.ndarray:
    """``U^T Z U`` accumulated region by region."""
    ncol = U.shape[1]
    out = np.zeros((ncol, ncol), complex)
    Um = U.matrix.tocsr()
    for blk, off in zip(system.blocks, system.offsets):
        m = blk.matrix.shape[0]
        Uv = Um[off:off + m]
        BU = (Uv.T @ blk.matrix.T).T  # B U_v, dense
        out += Uv.T @ BU
    return np.asarray(out)


@dataclass(frozen=True, eq=False)
class MacromodelMatrix:
    """Reduced matrix over the kept unknowns and optional recovery factors."""

    matrix: np.ndarray
    template_id: str
    frequency: float
    lu: tuple | None = None
    z_ie: np.ndarray | None = None
    key: str = ""

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def schur_reduce(Z, n_eq: int, template_id: str = "", frequency: float = 0.0,
                 keep_factors: bool = True, cond_limit: float = COND_LIMIT) -> MacromodelMatrix:
    """``Z_ee - Z_ei Z_ii^-1 Z_ie`` for the leading ``n_eq`` unknowns of ``Z``."""
    Z = np.asarray(Z)
    Zee, Zei = Z[:n_eq, :n_eq], Z[:n_eq, n_eq:]
    Zie, Zii = Z[n_eq:, :n_eq], Z[n_eq:, n_eq:]
    if Zii.shape[0] == 0:
        return MacromodelMatrix(Zee.copy(), template_id, frequency, None, None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)  # singularity is checked below
        lu, piv = sla.lu_factor(Zii, check_finite=True)
    anorm = np.linalg.norm(Zii, 1)
    gecon = lapack.get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    if info != 0 or rcond == 0 or 1.0 / rcond > cond_limit:
        cond = np.inf if rcond == 0 else 1.0 / rcond
        raise ReductionError(f"template '{template_id}': interior block is near-singular "
                             f"(condition estimate {cond:.3g} > {cond_limit:.0e})")
    X = sla.lu_solve((lu, piv), Zie)
    red = Zee - Zei @ X
    return MacromodelMatrix(red, template_id, frequency, (lu, piv) if keep_factors else None,
                            Zie.copy() if keep_factors else None)


def recover_interior(model: MacromodelMatrix, x_eq, rhs_int=None) -> np.ndarray:
    """Interior unknowns ``Z_ii^-1 (b_int - Z_ie x_eq)`` (``b_int`` defaults to 0)."""
    if model.lu is None or model.z_ie is None:
        raise ReductionError("interior recovery factors were not retained")
    b = -(model.z_ie @ np.asarray(x_eq))
    if rhs_int is not None:
        b = b + rhs_int
    return sla.lu_solve(model.lu, b)


# ---------------------------------------------------------------------------
# cell model and cache


@dataclass(eq=False)
class UnitCellModel:
    """Everything known about one cell template at one frequency."""

    geometry: UnitCellGeometry
    decomposition: RegionDecomposition
    incidence: IncidenceMatrix
    macromodel: MacromodelMatrix
    system: InteriorSystem | None = None
    reduced_full: np.ndarray | None = None
    cache_hit: bool = False
    info: dict = field(default_factory=dict)

    @property
    def n_eq(self) -> int:
        return self.incidence.n_eq


def model_key(template_id: str, frequency: float, mesh_digest: str) -> str:
    h = hashlib.sha256(f"{template_id}|{frequency!r}|{mesh_digest}".encode())
    return h.hexdigest()


_MAGIC = b"EMMACRO1"


def save_macromodel(path, model: MacromodelMatrix) -> None:
    """Binary cache: magic, dims, frequency, key, row-major little-endian complex128."""
    data = np.ascontiguousarray(model.matrix, dtype="<c16")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqd", data.shape[0], data.shape[1], model.frequency))
        key = model.key.encode().ljust(64, b"\0")[:64]
        fh.write(key)
        tid = model.template_id.encode()
        fh.write(struct.pack("<q", len(tid)))
        fh.write(tid)
        fh.write(data.tobytes())
    os.replace(tmp, path)


def load_macromodel(path, expected_key: str | None = None) -> MacromodelMatrix:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a macromodel cache file")
        nr, nc, freq = struct.unpack("<qqd", fh.read(24))
        key = fh.read(64).rstrip(b"\0").decode()
        (ntid,) = struct.unpack("<q", fh.read(8))
        tid = fh.read(ntid).decode()
        raw = fh.read()
    if len(raw) != 16 * nr * nc:
        raise ValueError(f"{path}: truncated cache file")
    data = np.frombuffer(raw, dtype="<c16")
    if expected_key is not None and key != expected_key:
        raise ValueError(f"{path}: cache key mismatch")
    return MacromodelMatrix(data.reshape(nr, nc).astype(complex), tid, freq, None, None, key)


def build_cell_model(geometry: UnitCellGeometry, frequency: float, quadrature=None,
                     cache_dir=None, keep_system: bool = False) -> UnitCellModel:
    """Decompose, assemble and reduce one cell template (cache-aware)."""
    mesh = geometry.mesh
    dec = decompose(mesh, geometry.permittivity, frequency)
    U = build_U(dec, defer_ground_edges=True)
    key = model_key(geometry.template_id, frequency, mesh.digest())
    path = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        path = os.path.join(cache_dir, f"{geometry.template_id or 'cell'}-{key[:16]}.emm")
        if os.path.exists(path) and not keep_system:
            try:
                mm = load_macromodel(path, key)
                if mm.size == U.n_eq:
                    return UnitCellModel(geometry, dec, U, mm, cache_hit=True)
            except ValueError as exc:
                log.warning("ignoring cache file: %s", exc)
    system = assemble_interior_system(dec, quadrature)
    Zt = project(system, U)
    mm = schur_reduce(Zt, U.n_eq, geometry.template_id, frequency)
    mm = MacromodelMatrix(mm.matrix, mm.template_id, mm.frequency, mm.lu, mm.z_ie, key)
    if path is not None:
        save_macromodel(path, mm)
    return UnitCellModel(geometry, dec, U, mm, system if keep_system else None,
                         Zt if keep_system else None)
