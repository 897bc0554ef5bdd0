"""Triangulated surfaces, RWG basis sets and the parametric unit cell."""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

GEOM_TOL = 1e-9  # metres

EXTERIOR = 0  # region id of the medium outside every fictitious box


class MeshError(ValueError):
    """Malformed or invalid mesh input."""


class GeometryError(ValueError):
    """Inconsistent unit-cell parameters."""


class MatchingError(ValueError):
    """Basis functions that should coincide under a translation do not."""


class SurfaceKind(enum.IntEnum):
    PEC = 0
    DIELECTRIC_INTERFACE = 1
    FICTITIOUS_FACE = 2
    GROUND_PLANE = 3

    @property
    def is_pec(self) -> bool:
        return self in (SurfaceKind.PEC, SurfaceKind.GROUND_PLANE)


# Face ids of the fictitious box.
FACE_XMIN, FACE_XMAX, FACE_YMIN, FACE_YMAX, FACE_BOTTOM, FACE_TOP = range(6)


def _key(points, tol=GEOM_TOL):
    """Integer lattice keys for coordinates, used for canonical orderings."""
    return np.round(np.asarray(points) / tol).astype(np.int64)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Surface mesh with per-triangle tags and the regions on either side.

    ``front`` is the region the stored normal points into; ``back`` the other.
    Triangles are counter-clockwise about the stored normal.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    kinds: np.ndarray
    face_ids: np.ndarray
    front: np.ndarray
    back: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        for name in ("triangles", "kinds", "face_ids", "front", "back"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.int64))
        for a in (self.vertices, self.triangles, self.kinds, self.face_ids, self.front, self.back):
            a.setflags(write=False)

    @property
    def ntri(self) -> int:
        return len(self.triangles)

    @property
    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    @property
    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @property
    def normals(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1)[:, None]

    @property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @property
    def regions(self) -> list[int]:
        return sorted(set(self.front.tolist()) | set(self.back.tolist()))

    def validate(self) -> "TriMesh":
        v, t = self.vertices, self.triangles
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must be an (N, 3) array")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must be an (M, 3) array")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            bad = int(np.nonzero((t < 0).any(1) | (t >= len(v)).any(1))[0][0])
            raise MeshError(f"triangle {bad} references a vertex index out of range")
        n = len(t)
        for name in ("kinds", "face_ids", "front", "back"):
            if len(getattr(self, name)) != n:
                raise MeshError(f"{name} must have one entry per triangle")
        if n and np.any(self.areas <= 0):
            bad = int(np.nonzero(self.areas <= 0)[0][0])
            raise MeshError(f"triangle {bad} has non-positive area")
        if np.any(self.front == self.back):
            bad = int(np.nonzero(self.front == self.back)[0][0])
            raise MeshError(f"triangle {bad} has the same region on both sides")
        # every tagged surface must be edge-manifold on its own
        groups = np.stack([self.kinds, self.face_ids, self.front, self.back], axis=1)
        _, gid = np.unique(groups, axis=0, return_inverse=True)
        edges, owner = _edge_table(t)
        key = np.stack([edges[:, 0], edges[:, 1], gid.ravel()[owner]], axis=1)
        _, counts = np.unique(key, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("non-manifold tagged surface: an edge is shared by more than "
                            "two triangles with the same tag")
        return self

    def translated(self, shift) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(shift, float), self.triangles, self.kinds,
                       self.face_ids, self.front, self.back)

    def subset(self, mask) -> "TriMesh":
        mask = np.asarray(mask)
        return TriMesh(self.vertices, self.triangles[mask], self.kinds[mask],
                       self.face_ids[mask], self.front[mask], self.back[mask])

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.vertices, self.triangles, self.kinds, self.face_ids, self.front, self.back):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _edge_table(triangles):
    """Sorted vertex pairs of every triangle edge and the owning triangle."""
    t = np.asarray(triangles)
    e = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
    owner = np.tile(np.arange(len(t)), 3)
    return np.sort(e, axis=1), owner


# ---------------------------------------------------------------------------
# text formats

_TAGS = {k.name: k for k in SurfaceKind}


def load_mesh(text: str) -> TriMesh:
    """Parse the ``emesh 1`` plain-text format."""
    lines = text.splitlines()
    body = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(lines)]
    body = [(i, ln) for i, ln in body if ln]
    if not body or body[0][1].split() != ["emesh", "1"]:
        raise MeshError("line 1: expected header 'emesh 1'")
    verts, tris, kinds, faces, front, back = [], [], [], [], [], []
    for lineno, ln in body[1:]:
        tok = ln.split()
        try:
            if tok[0] == "v":
                if len(tok) != 4:
                    raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
                verts.append([float(x) for x in tok[1:]])
            elif tok[0] == "t":
                if len(tok) < 5 or tok[4] not in _TAGS:
                    raise MeshError(f"line {lineno}: expected 't i j k TAG ...'")
                kind = _TAGS[tok[4]]
                args = [int(x) for x in tok[5:]]
                if kind is SurfaceKind.FICTITIOUS_FACE:
                    if len(args) != 3:
                        raise MeshError(f"line {lineno}: FICTITIOUS_FACE needs face_id front back")
                    fid, f, b = args
                else:
                    if len(args) != 2:
                        raise MeshError(f"line {lineno}: {kind.name} needs front back")
                    fid = FACE_BOTTOM if kind is SurfaceKind.GROUND_PLANE and EXTERIOR in args else -1
                    f, b = args
                idx = [int(x) for x in tok[1:4]]
                for j in idx:
                    if j < 0 or j >= len(verts):
                        raise MeshError(f"line {lineno}: vertex index {j} out of range "
                                        f"({len(verts)} vertices defined)")
                tris.append(idx)
                kinds.append(int(kind))
                faces.append(fid)
                front.append(f)
                back.append(b)
            else:
                raise MeshError(f"line {lineno}: unknown record '{tok[0]}'")
        except ValueError as exc:
            if isinstance(exc, MeshError):
                raise
            raise MeshError(f"line {lineno}: {exc}") from None
    mesh = TriMesh(np.array(verts, float).reshape(-1, 3), np.array(tris, int).reshape(-1, 3),
                   np.array(kinds, int), np.array(faces, int), np.array(front, int),
                   np.array(back, int))
    return mesh.validate()


def dump_mesh(mesh: TriMesh) -> str:
    out = ["emesh 1"]
    out += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    for (i, j, k), kind, fid, f, b in zip(mesh.triangles.tolist(), mesh.kinds.tolist(),
                                          mesh.face_ids.tolist(), mesh.front.tolist(),
                                          mesh.back.tolist()):
        kind = SurfaceKind(kind)
        extra = f" {fid}" if kind is SurfaceKind.FICTITIOUS_FACE else ""
        out.append(f"t {i} {j} {k} {kind.name}{extra} {f} {b}")
    return "\n".join(out) + "\n"


def read_mesh(path) -> TriMesh:
    with open(path, encoding="utf-8") as fh:
        return load_mesh(fh.read())


def write_mesh(path, mesh: TriMesh) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_mesh(mesh))


def load_msh22(text: str, tag_table: dict) -> TriMesh:
    """Import triangles from an ASCII MSH 2.2 file.

    ``tag_table`` maps a physical tag to ``(kind_name, face_id, front, back)``.
    """
    lines = [ln.strip() for ln in text.splitlines()]

    def section(name):
        try:
            start = lines.index(f"${name}")
            end = lines.index(f"$End{name}", start)
        except ValueError:
            raise MeshError(f"MSH file lacks ${name} section") from None
        return start, lines[start + 1:end]

    _, fmt = section("MeshFormat")
    if not fmt or not fmt[0].split()[0].startswith("2.2") or fmt[0].split()[1] != "0":
        raise MeshError("only ASCII MSH version 2.2 is supported")
    nstart, nodes = section("Nodes")
    count = int(nodes[0])
    ids, coords = [], []
    for off, ln in enumerate(nodes[1:count + 1]):
        tok = ln.split()
        if len(tok) != 4:
            raise MeshError(f"line {nstart + 3 + off}: malformed node record")
        ids.append(int(tok[0]))
        coords.append([float(x) for x in tok[1:]])
    lookup = {nid: i for i, nid in enumerate(ids)}
    estart, elems = section("Elements")
    tris, kinds, faces, front, back = [], [], [], [], []
    for off, ln in enumerate(elems[1:int(elems[0]) + 1]):
        tok = [int(x) for x in ln.split()]
        if tok[1] != 2:
            continue
        ntags = tok[2]
        phys = tok[3]
        conn = tok[3 + ntags:]
        if phys not in tag_table:
            raise MeshError(f"line {estart + 3 + off}: physical tag {phys} missing from tag table")
        try:
            tri = [lookup[n] for n in conn[:3]]
        except KeyError as exc:
            raise MeshError(f"line {estart + 3 + off}: unknown node {exc.args[0]}") from None
        kind, fid, f, b = tag_table[phys]
        tris.append(tri)
        kinds.append(int(_TAGS[kind]))
        faces.append(fid)
        front.append(f)
        back.append(b)
    return TriMesh(np.array(coords), np.array(tris).reshape(-1, 3), np.array(kinds),
                   np.array(faces), np.array(front), np.array(back)).validate()


def merge_vertices(vertices, triangles, tol=1e-12):
    """Collapse coincident vertices; returns new (vertices, triangles)."""
    vertices = np.asarray(vertices, float)
    tree = cKDTree(vertices)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(len(vertices))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(len(vertices))])
    uniq, inverse = np.unique(roots, return_inverse=True)
    return vertices[uniq], inverse[np.asarray(triangles)]


# ---------------------------------------------------------------------------
# RWG basis


@dataclass(frozen=True, eq=False)
class RwgBasisSet:
    """Ordered RWG functions on a selection of triangles of ``mesh``.

    ``tri_side`` holds, for every mesh triangle, +1 when the normal facing the
    owning region is the stored normal and -1 when it is reversed (0 when the
    triangle is not part of the selection).
    """

    mesh: TriMesh
    edges: np.ndarray
    tri_plus: np.ndarray
    tri_minus: np.ndarray
    opp_plus: np.ndarray
    opp_minus: np.ndarray
    length: np.ndarray
    sign: np.ndarray
    tri_side: np.ndarray
    region: int | None = None
    counts: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tri_plus)

    @property
    def midpoints(self) -> np.ndarray:
        v = self.mesh.vertices
        return 0.5 * (v[self.edges[:, 0]] + v[self.edges[:, 1]])

    def translated(self, shift) -> "RwgBasisSet":
        return RwgBasisSet(self.mesh.translated(shift), self.edges, self.tri_plus, self.tri_minus,
                           self.opp_plus, self.opp_minus, self.length, self.sign, self.tri_side,
                           self.region, dict(self.counts))

    def take(self, index) -> "RwgBasisSet":
        index = np.asarray(index, dtype=int)
        return RwgBasisSet(self.mesh, self.edges[index], self.tri_plus[index],
                           self.tri_minus[index], self.opp_plus[index], self.opp_minus[index],
                           self.length[index], self.sign[index], self.tri_side, self.region)

    def edge_keys(self) -> list[tuple]:
        k = _key(self.mesh.vertices)
        return [tuple(sorted((tuple(k[a]), tuple(k[b])))) for a, b in self.edges]

    def halves(self):
        """Per half-function arrays ``(rwg, triangle, local opposite vertex, coefficient)``.

        The function on triangle ``t`` is ``coef * (r - p)`` with ``p`` the
        opposite vertex, i.e. ``coef = +-sign * l / (2 A)``.
        """
        tri = self.mesh.triangles
        areas = self.mesh.areas
        n = len(self)
        rwg = np.concatenate([np.arange(n), np.arange(n)])
        t = np.concatenate([self.tri_plus, self.tri_minus])
        opp = np.concatenate([self.opp_plus, self.opp_minus])
        local = np.argmax(tri[t] == opp[:, None], axis=1)
        pm = np.concatenate([np.ones(n), -np.ones(n)])
        coef = pm * np.tile(self.sign * self.length, 2) / (2.0 * areas[t])
        return rwg, t, local, coef


def _triangle_keys(mesh):
    k = _key(mesh.vertices)
    kt = k[mesh.triangles]  # (T, 3, 3)
    # sort the three vertex keys of each triangle lexicographically
    out = []
    for tri in kt.tolist():
        out.append(tuple(sorted(map(tuple, tri))))
    return out


def build_rwg(mesh: TriMesh, surface_selector=None, *, region: int | None = None,
              exclude_pec: bool = False) -> RwgBasisSet:
    """One RWG function per interior edge of the selected surface.

    ``surface_selector`` is a boolean mask, an index array or a callable taking
    the mesh.  With ``region`` the selection is the closed boundary of that
    region and triangle orientations are taken facing into it.  Edges of the
    selection touched by a PEC triangle are dropped when ``exclude_pec``.
    """
    nt = mesh.ntri
    if region is not None:
        mask = (mesh.front == region) | (mesh.back == region)
        side = np.where(mesh.front == region, 1, np.where(mesh.back == region, -1, 0))
    else:
        if surface_selector is None:
            mask = np.ones(nt, bool)
        elif callable(surface_selector):
            mask = np.asarray(surface_selector(mesh), bool)
        else:
            sel = np.asarray(surface_selector)
            if sel.dtype == bool:
                mask = sel
            else:
                mask = np.zeros(nt, bool)
                mask[sel] = True
        side = np.where(mask, 1, 0)
    idx = np.nonzero(mask)[0]
    edges, owner = _edge_table(mesh.triangles[idx])
    owner = idx[owner]
    order = np.lexsort((owner, edges[:, 1], edges[:, 0]))
    edges, owner = edges[order], owner[order]
    uniq, start, counts = np.unique(edges, axis=0, return_index=True, return_counts=True)
    if np.any(counts > 2):
        bad = uniq[counts > 2][0]
        raise MeshError(f"non-manifold edge {tuple(bad)} on the selected surface "
                        f"({counts.max()} triangles)")
    two = counts == 2
    e = uniq[two]
    ta = owner[start[two]]
    tb = owner[start[two] + 1]
    if exclude_pec and len(e):
        pec = np.isin(mesh.kinds, [SurfaceKind.PEC, SurfaceKind.GROUND_PLANE])
        keep = ~(pec[ta] | pec[tb])
        e, ta, tb = e[keep], ta[keep], tb[keep]
    # canonical plus triangle: lexicographically smaller sorted-vertex key
    tkeys = _triangle_keys(mesh)
    swap = np.array([tkeys[b] < tkeys[a] for a, b in zip(ta, tb)], dtype=bool)
    tp = np.where(swap, tb, ta)
    tm = np.where(swap, ta, tb)
    tri = mesh.triangles

    def opposite(t, edge):
        m = ~np.isin(tri[t], edge)
        return tri[t][m]

    opp_p = np.array([opposite(t, ed)[0] for t, ed in zip(tp, e)], dtype=int)
    opp_m = np.array([opposite(t, ed)[0] for t, ed in zip(tm, e)], dtype=int)
    v = mesh.vertices
    length = np.linalg.norm(v[e[:, 0]] - v[e[:, 1]], axis=1) if len(e) else np.zeros(0)
    # deterministic order: by canonical edge key (coordinates)
    k = _key(v)
    ka, kb = k[e[:, 0]], k[e[:, 1]]
    pairs = [tuple(sorted((tuple(a), tuple(b)))) for a, b in zip(ka.tolist(), kb.tolist())]
    perm = sorted(range(len(pairs)), key=pairs.__getitem__)
    perm = np.array(perm, dtype=int)
    basis = RwgBasisSet(mesh, e[perm], tp[perm], tm[perm], opp_p[perm], opp_m[perm],
                        length[perm], np.ones(len(perm)), side, region)
    return basis


def count_closed_edges(mesh: TriMesh) -> int:
    edges, _ = _edge_table(mesh.triangles)
    return len(np.unique(edges, axis=0))


# ---------------------------------------------------------------------------
# matching across translations


@dataclass(frozen=True)
class MatchTable:
    index_a: np.ndarray
    index_b: np.ndarray
    signs: np.ndarray

    def __len__(self):
        return len(self.index_a)


def _face_tri_keys(basis, t):
    k = _key(basis.mesh.vertices)
    return tuple(sorted(map(tuple, k[basis.mesh.triangles[t]].tolist())))


def match_bases(set_a: RwgBasisSet, set_b: RwgBasisSet, translation=(0.0, 0.0, 0.0),
                tolerance: float = GEOM_TOL, restrict_a=None, restrict_b=None) -> MatchTable:
    """Pair RWG functions of ``set_a`` moved by ``translation`` with ``set_b``.

    Pairs are made by shared edge.  The sign compares current flow across the
    edge on a triangle common to both functions after translation: -1 when the
    two orientations oppose, +1 otherwise.  ``restrict_*`` limit the functions
    considered; every considered function must find a partner.
    """
    t = np.asarray(translation, float)
    ia = np.arange(len(set_a)) if restrict_a is None else np.asarray(restrict_a, int)
    ib = np.arange(len(set_b)) if restrict_b is None else np.asarray(restrict_b, int)
    va = set_a.mesh.vertices + t
    vb = set_b.mesh.vertices
    mid_a = 0.5 * (va[set_a.edges[ia, 0]] + va[set_a.edges[ia, 1]])
    mid_b = 0.5 * (vb[set_b.edges[ib, 0]] + vb[set_b.edges[ib, 1]])
    if len(ia) != len(ib):
        raise MatchingError(f"cannot form a bijection: {len(ia)} vs {len(ib)} functions")
    if len(ia) == 0:
        return MatchTable(np.zeros(0, int), np.zeros(0, int), np.zeros(0))
    tree = cKDTree(mid_b)
    dist, nn = tree.query(mid_a)
    out_a, out_b, signs, bad = [], [], [], []
    used = set()
    for pos, (d, j) in enumerate(zip(dist, nn)):
        a, b = ia[pos], ib[j]
        ea = np.sort(np.linalg.norm(va[set_a.edges[a]][:, None] - vb[set_b.edges[b]][None], axis=2)
                     .min(axis=1))
        if d > tolerance or ea.max() > tolerance or j in used:
            bad.append(int(a))
            continue
        used.add(j)
        # triangles of a (translated) that coincide with triangles of b
        sign = None
        for ta, sa in ((set_a.tri_plus[a], 1.0), (set_a.tri_minus[a], -1.0)):
            ca = va[set_a.mesh.triangles[ta]]
            for tb, sb in ((set_b.tri_plus[b], 1.0), (set_b.tri_minus[b], -1.0)):
                cb = vb[set_b.mesh.triangles[tb]]
                dd = np.linalg.norm(ca[:, None] - cb[None], axis=2).min(axis=1)
                if dd.max() <= tolerance:
                    sign = sa * sb * set_a.sign[a] * set_b.sign[b]
                    break
            if sign is not None:
                break
        if sign is None:
            bad.append(int(a))
            continue
        out_a.append(a)
        out_b.append(b)
        signs.append(sign)
    if bad:
        keys = [set_a.edge_keys()[i] for i in bad[:5]]
        raise MatchingError(f"{len(bad)} basis functions without a partner within "
                            f"{tolerance:g} m, e.g. edges {keys}")
    return MatchTable(np.array(out_a), np.array(out_b), np.array(signs))


# ---------------------------------------------------------------------------
# generators


def _grid(u, v):
    """Triangulated tensor grid; returns (points (nu*nv, 2), triangles)."""
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([uu.ravel(), vv.ravel()], axis=1)
    nu, nv = len(u), len(v)
    tris = []
    for i in range(nu - 1):
        for j in range(nv - 1):
            a = i * nv + j
            b = (i + 1) * nv + j
            c = (i + 1) * nv + j + 1
            d = i * nv + j + 1
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return pts, np.array(tris, dtype=int)


def _strip(row_a, row_b):
    """Triangulate the band between two polylines (lists of 2-D points)."""
    na, nb = len(row_a) - 1, len(row_b) - 1
    i = j = 0
    tris = []
    while i < na or j < nb:
        adv_a = j == nb or (i < na and (i + 1) / na <= (j + 1) / nb)
        if adv_a:
            tris.append((("a", i), ("a", i + 1), ("b", j)))
            i += 1
        else:
            tris.append((("a", i), ("b", j + 1), ("b", j)))
            j += 1
    return tris


def _orient_up(pts2, tris):
    p = pts2[tris]
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
           (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    tris = tris.copy()
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def patch_interface(width, patch_width, n_outer, n_patch, n_rows, outer_fractions=None):
    """Square interface with a centred square patch, conforming meshes.

    Returns 2-D points, triangles (counter-clockwise seen from +z) and a mask of
    patch triangles.  Boundary nodes sit at ``width * outer_fractions``
    (uniform ``n_outer`` divisions by default).
    """
    c = width / 2.0
    h = patch_width / 2.0
    outer = [np.array(p, float) for p in ((0, 0), (width, 0), (width, width), (0, width))]
    inner = [np.array(p, float) for p in ((c - h, c - h), (c + h, c - h), (c + h, c + h),
                                          (c - h, c + h))]
    pts = []
    tris = []
    index = {}

    def pid(p):
        key = (round(p[0] / 1e-13), round(p[1] / 1e-13))
        if key not in index:
            index[key] = len(pts)
            pts.append((float(p[0]), float(p[1])))
        return index[key]

    # patch grid
    g = np.linspace(c - h, c + h, n_patch + 1)
    gp, gt = _grid(g, g)
    ids = [pid(p) for p in gp]
    patch_tris = [tuple(ids[k] for k in t) for t in gt]
    for side in range(4):
        o0, o1 = outer[side], outer[(side + 1) % 4]
        i0, i1 = inner[side], inner[(side + 1) % 4]
        rows = []
        for r in range(n_rows + 1):
            f = r / n_rows
            a = (1 - f) * o0 + f * i0
            b = (1 - f) * o1 + f * i1
            n = int(round(n_outer + (n_patch - n_outer) * f))
            s = np.linspace(0.0, 1.0, n + 1)
            if r == 0 and outer_fractions is not None:
                s = np.asarray(outer_fractions, float)
            rows.append([pid((1 - x) * a + x * b) for x in s])
        for r in range(n_rows):
            for tri in _strip(rows[r], rows[r + 1]):
                tris.append(tuple(rows[r][k] if w == "a" else rows[r + 1][k] for w, k in tri))
    pts = np.array(pts)
    all_tris = np.array(patch_tris + tris, dtype=int)
    all_tris = _orient_up(pts, all_tris)
    is_patch = np.zeros(len(all_tris), bool)
    is_patch[:len(patch_tris)] = True
    return pts, all_tris, is_patch


@dataclass(frozen=True, eq=False)
class UnitCellGeometry:
    """Grounded (or open) layered box with an optional centred square patch."""

    width: float
    box_height: float
    layer_heights: tuple
    permittivities: tuple
    patch_width: float | None
    ground: bool
    mesh: TriMesh
    template_id: str = ""

    @property
    def nregions(self) -> int:
        return len(self.layer_heights) + 1

    def permittivity(self, region: int) -> complex:
        if region == EXTERIOR or region == self.nregions:
            return 1.0 + 0j
        return complex(self.permittivities[region - 1])

    @property
    def box_mask(self) -> np.ndarray:
        return (self.mesh.front == EXTERIOR) | (self.mesh.back == EXTERIOR)

    def seq_digest(self) -> str:
        """Hash of the fictitious surfaces alone (coordinates and tags)."""
        box = self.mesh.subset(self.box_mask)
        h = hashlib.sha256()
        for a in (box.corners, box.kinds, box.face_ids, box.back):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def wall_fractions(n, grading=0.0):
    """``n + 1`` node fractions on [0, 1], clustered towards both ends.

    ``grading`` in [0, 1) blends uniform spacing with cosine clustering.
    """
    s = np.linspace(0.0, 1.0, n + 1)
    return (1.0 - grading) * s + grading * 0.5 * (1.0 - np.cos(np.pi * s))


def _slab_nodes(z0, z1, n, grading):
    """Slab nodes clustered towards ``z0`` (quadratic blend)."""
    s = np.linspace(0.0, 1.0, n + 1)
    return z0 + (z1 - z0) * ((1.0 - grading) * s + grading * s * s)


def _box_faces(width, zlevels, nw, ndiv_z, ground, grading=0.0):
    """Triangles of the six box faces in a fixed order.

    Returns list of (3-D triangle corner arrays, kind, face_id, back_region).
    """
    x = width * wall_fractions(nw, grading)
    z = [zlevels[0]]
    last = len(zlevels) - 2
    for k in range(len(zlevels) - 1):
        g = grading if k == last else 0.0
        zz = _slab_nodes(zlevels[k], zlevels[k + 1], ndiv_z[k], g)[1:]
        z.extend(zz.tolist())
    z = np.array(z)
    out = []
    # side faces: grid in (s, z); region from z of centroid
    sp, st = _grid(x, z)
    bounds = np.asarray(zlevels)

    def region_of(zc):
        return int(np.searchsorted(bounds, zc)) - 0  # 1-based slab index

    side_tris = sp[st]  # (n, 3, 2): (s, z)
    for face in (FACE_XMIN, FACE_XMAX, FACE_YMIN, FACE_YMAX):
        corners = np.zeros(side_tris.shape[:2] + (3,))
        s, zz = side_tris[..., 0], side_tris[..., 1]
        if face in (FACE_XMIN, FACE_XMAX):
            corners[..., 0] = 0.0 if face == FACE_XMIN else width
            corners[..., 1] = s
        else:
            corners[..., 0] = s
            corners[..., 1] = 0.0 if face == FACE_YMIN else width
        corners[..., 2] = zz
        outward = {FACE_XMIN: (-1, 0, 0), FACE_XMAX: (1, 0, 0),
                   FACE_YMIN: (0, -1, 0), FACE_YMAX: (0, 1, 0)}[face]
        n = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        flip = n @ np.array(outward, float) < 0
        corners[flip] = corners[flip][:, [0, 2, 1]]
        zc = corners[..., 2].mean(axis=1)
        for cr, zci in zip(corners, zc):
            out.append((cr, SurfaceKind.FICTITIOUS_FACE, face, region_of(zci)))
    gp, gt = _grid(x, x)
    for face, zval, up in ((FACE_BOTTOM, zlevels[0], -1), (FACE_TOP, zlevels[-1], 1)):
        hz = gp[gt]
        corners = np.zeros(hz.shape[:2] + (3,))
        corners[..., :2] = hz
        corners[..., 2] = zval
        if up < 0:
            corners = corners[:, [0, 2, 1]]
        kind = SurfaceKind.GROUND_PLANE if (face == FACE_BOTTOM and ground) \
            else SurfaceKind.FICTITIOUS_FACE
        back = 1 if face == FACE_BOTTOM else len(zlevels) - 1
        for cr in corners:
            out.append((cr, kind, face, back))
    return out


def generate_unit_cell(width, layer_heights, permittivities, patch_width,
                       mesh_length_patch, mesh_length_box, box_height=None, ground=True,
                       template_id="", grading=0.0) -> UnitCellGeometry:
    """Mesh a w x w x h_box cell: layered substrate, optional patch, air on top.

    The box faces depend only on ``width``, the layer heights, ``box_height``,
    ``mesh_length_box`` and ``grading``, so cells that differ in the patch share
    bit-identical fictitious surfaces.  A positive ``grading`` (below 1)
    clusters box nodes towards the side walls and the air slab's nodes towards
    the substrate, where the fields of the ground-plane edges vary fastest.
    """
    layer_heights = tuple(float(h) for h in np.atleast_1d(layer_heights))
    permittivities = tuple(complex(e) for e in np.atleast_1d(permittivities))
    if len(layer_heights) != len(permittivities) or not layer_heights:
        raise GeometryError("one permittivity per layer is required")
    if width <= 0 or any(h <= 0 for h in layer_heights):
        raise GeometryError("width and layer heights must be positive")
    if mesh_length_box <= 0 or mesh_length_patch <= 0:
        raise GeometryError("mesh lengths must be positive")
    if any(e.real <= 0 for e in permittivities):
        raise GeometryError("Re(eps_r) must be positive")
    z_sub = float(sum(layer_heights))
    if box_height is None:
        box_height = z_sub + 1.25e-3
    if box_height <= z_sub + GEOM_TOL:
        raise GeometryError("box must leave an air region above the substrate so the "
                            "patch lies strictly inside")
    if patch_width is not None:
        if not (0 < patch_width < width):
            raise GeometryError(f"patch width {patch_width} must satisfy 0 < p < w = {width}")
        if mesh_length_patch > patch_width:
            raise GeometryError("patch mesh length exceeds the patch width; refine the mesh")
    if mesh_length_box > width:
        raise GeometryError("box mesh length exceeds the cell width; refine the mesh")
    if not 0.0 <= grading < 1.0:
        raise GeometryError("grading must lie in [0, 1)")
    nw = max(2, int(math.ceil(width / mesh_length_box - 1e-9)))
    zlevels = [0.0]
    for h in layer_heights:
        zlevels.append(zlevels[-1] + h)
    zlevels.append(float(box_height))
    ndiv = [max(1, int(math.ceil((zlevels[k + 1] - zlevels[k]) / mesh_length_box - 1e-9)))
            for k in range(len(zlevels) - 1)]
    nlayer = len(layer_heights)
    air = nlayer + 1

    corners, kinds, faces, fronts, backs = [], [], [], [], []
    for cr, kind, face, back in _box_faces(width, zlevels, nw, ndiv, ground, grading):
        corners.append(cr)
        kinds.append(kind)
        faces.append(face)
        fronts.append(EXTERIOR)
        backs.append(back)
    # interfaces between slabs; normal +z, front is the region above
    fx = wall_fractions(nw, grading)
    x = width * fx
    for k in range(1, nlayer + 1):
        zval = zlevels[k]
        if k == nlayer and patch_width is not None:
            n_patch = max(1, int(math.ceil(patch_width / mesh_length_patch - 1e-9)))
            gap = 0.5 * (width - patch_width)
            h_frame = 0.5 * (mesh_length_box + mesh_length_patch)
            n_rows = max(1, int(math.ceil(gap / h_frame - 1e-9)))
            p2, t2, is_patch = patch_interface(width, patch_width, nw, n_patch, n_rows, fx)
        else:
            p2, t2 = _grid(x, x)
            t2 = _orient_up(p2, t2)
            is_patch = np.zeros(len(t2), bool)
        for tri, pec in zip(t2, is_patch):
            cr = np.column_stack([p2[tri], np.full(3, zval)])
            corners.append(cr)
            kinds.append(SurfaceKind.PEC if pec else SurfaceKind.DIELECTRIC_INTERFACE)
            faces.append(-1)
            fronts.append(k + 1)
            backs.append(k)
    corners = np.array(corners)
    flat = corners.reshape(-1, 3)
    verts, tri = merge_vertices(flat, np.arange(len(flat)).reshape(-1, 3), tol=1e-12)
    mesh = TriMesh(verts, tri, np.array(kinds, int), np.array(faces, int), np.array(fronts, int),
                   np.array(backs, int)).validate()
    del air
    return UnitCellGeometry(float(width), float(box_height), layer_heights, permittivities,
                            None if patch_width is None else float(patch_width), bool(ground),
                            mesh, template_id)


def icosphere(radius: float, level: int, center=(0.0, 0.0, 0.0), front=EXTERIOR, back=1,
              kind=SurfaceKind.DIELECTRIC_INTERFACE) -> TriMesh:
    """Subdivided icosahedron projected onto a sphere, outward normals."""
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t), (0, -1, -t),
         (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = list(f)
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    verts = np.array(verts) * radius + np.asarray(center, float)
    tris = np.array(faces, int)
    c = verts[tris]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    flip = np.einsum("ij,ij->i", n, c.mean(1) - np.asarray(center, float)) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    nt = len(tris)
    return TriMesh(verts, tris, np.full(nt, int(kind)), np.full(nt, -1), np.full(nt, front),
                   np.full(nt, back)).validate()


def rectangle_plate(lx, ly, nx, ny, z=0.0, front=1, back=0,
                    kind=SurfaceKind.PEC) -> TriMesh:
    """Flat open plate in the plane ``z`` meshed on an nx x ny grid."""
    p2, t2 = _grid(np.linspace(0, lx, nx + 1), np.linspace(0, ly, ny + 1))
    t2 = _orient_up(p2, t2)
    verts = np.column_stack([p2, np.full(len(p2), z)])
    nt = len(t2)
    return TriMesh(verts, t2, np.full(nt, int(kind)), np.full(nt, -1), np.full(nt, front),
                   np.full(nt, back)).validate()


def concatenate(meshes: Sequence[TriMesh], merge: bool = False) -> TriMesh:
    verts, tris, parts = [], [], []
    off = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    v = np.concatenate(verts)
    t = np.concatenate(tris)
    if merge:
        v, t = merge_vertices(v, t)
    cat = lambda name: np.concatenate([getattr(m, name) for m in meshes])
    return TriMesh(v, t, cat("kinds"), cat("face_ids"), cat("front"), cat("back"))
