"""Galerkin assembly of the L and K operators with RWG test and source functions.

Notation used below: ``L[k, l] = <f_k, f_l G> - <div f_k, div f_l G> / k^2`` and
``K[k, l] = p.v. <f_k, grad G x f_l>`` with ``G = exp(-jkR) / (4 pi R)``
(time dependence ``exp(+j w t)``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..mesh import GEOM_TOL, RwgBasisSet, SurfaceKind
from ..quadrature import QuadratureRule, triangle_rule
from .potentials import static_potentials
from . import _pairs_py

try:  # compiled pair integrals
    from ._fill import regular_block as _regular_block
    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - exercised when the build is skipped
    _regular_block = _pairs_py.regular_block
    HAVE_COMPILED = False

log = logging.getLogger(__name__)

C0 = 299792458.0
MU0 = 1.25663706212e-6
EPS0 = 1.0 / (MU0 * C0 * C0)
ETA0 = 376.730313668
FOUR_PI = 4.0 * np.pi

_CHUNK_PAIRS = 40000
_TIE_MARGIN = 1e-9


class AssemblyError(RuntimeError):
    """Operator assembly failed (bad inputs or degenerate geometry)."""


class SingularityError(ValueError):
    """Green's function requested at coincident points."""


@dataclass(frozen=True)
class Medium:
    """Homogeneous non-magnetic medium at a fixed frequency."""

    eps_r: complex = 1.0
    frequency: float = 1.0e9
    name: str = ""

    def __post_init__(self):
        if complex(self.eps_r).real <= 0:
            raise ValueError("Re(eps_r) must be positive")
        if not self.frequency > 0:
            raise ValueError("frequency must be positive")

    @property
    def omega(self) -> float:
        return 2.0 * np.pi * self.frequency

    @property
    def k0(self) -> float:
        return self.omega / C0

    @property
    def k(self) -> complex:
        return complex(self.k0 * np.sqrt(complex(self.eps_r)))

    @property
    def wavelength(self) -> float:
        return C0 / self.frequency


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """Dense Galerkin matrix, rows = test functions, columns = source functions."""

    data: np.ndarray
    kind: str
    medium_id: str = ""
    scaled: bool = False

    @property
    def shape(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


def green(k, r, r_prime):
    """Free-space Green's function ``exp(-jkR) / (4 pi R)``."""
    r = np.asarray(r, float)
    rp = np.asarray(r_prime, float)
    R = np.linalg.norm(r - rp, axis=-1)
    if np.any(R == 0):
        raise SingularityError("green() is singular at R = 0; use the singular pair scheme")
    return np.exp(-1j * k * R) / (FOUR_PI * R)


# ---------------------------------------------------------------------------
# triangle bookkeeping


@dataclass(frozen=True, eq=False)
class _HalfTable:
    tris: np.ndarray     # mesh triangle ids in use
    corners: np.ndarray  # (T, 3, 3)
    index: np.ndarray    # (T, 3) RWG index of the half opposite local vertex, -1 if none
    coef: np.ndarray     # (T, 3)
    normals: np.ndarray  # (T, 3) stored normals
    side: np.ndarray     # (T,) region-facing sign
    areas: np.ndarray
    longest: np.ndarray


def _half_table(basis: RwgBasisSet) -> _HalfTable:
    rwg, t, local, coef = basis.halves()
    tris, inv = np.unique(t, return_inverse=True)
    index = np.full((len(tris), 3), -1, dtype=np.int64)
    cf = np.zeros((len(tris), 3))
    index[inv, local] = rwg
    cf[inv, local] = coef
    mesh = basis.mesh
    corners = np.ascontiguousarray(mesh.vertices[mesh.triangles[tris]])
    e = np.linalg.norm(corners - np.roll(corners, 1, axis=1), axis=2).max(axis=1)
    n = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    areas = 0.5 * np.linalg.norm(n, axis=1)
    if np.any(areas <= 0):
        raise AssemblyError("degenerate triangle in basis support")
    side = basis.tri_side[tris] if basis.tri_side is not None else np.ones(len(tris))
    return _HalfTable(tris, corners, index, cf, n / (2.0 * areas[:, None]), side.astype(float),
                      areas, e)


def _near_pairs(test: _HalfTable, src: _HalfTable, factor: float):
    """Pairs whose centroid distance is below factor x the longer max edge.

    Distances that tie with the threshold (common on structured grids) count
    as near, so the classification does not depend on where the two sets sit.
    """
    factor = factor * (1.0 + _TIE_MARGIN)
    ct = test.corners.mean(axis=1)
    cs = src.corners.mean(axis=1)
    tree = cKDTree(cs)
    reach = factor * (test.longest + src.longest.max())
    cand = tree.query_ball_point(ct, reach)
    ii, jj = [], []
    for i, js in enumerate(cand):
        if not js:
            continue
        js = np.asarray(js)
        d = np.linalg.norm(cs[js] - ct[i], axis=1)
        ok = d < factor * np.maximum(test.longest[i], src.longest[js])
        ii.append(np.full(ok.sum(), i))
        jj.append(js[ok])
    if not ii:
        return np.zeros(0, int), np.zeros(0, int)
    ii = np.concatenate(ii)
    jj = np.concatenate(jj)
    order = np.lexsort((jj, ii))
    return ii[order], jj[order]


def _rule_points(corners, rule):
    pts = np.ascontiguousarray(rule.map(corners))
    n = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    area = 0.5 * np.linalg.norm(n, axis=1)
    return pts, np.ascontiguousarray(area[:, None] * rule.weights[None, :])


def _smooth_terms(k, diff, R):
    """Smooth remainders of G and grad G after removing the static parts."""
    x = 1j * k * R
    with np.errstate(divide="ignore", invalid="ignore"):
        sm0 = np.where(R > 0, np.expm1(-x) / (FOUR_PI * R), -1j * k / FOUR_PI)
        small = np.abs(x) < 1e-3
        h = np.where(small, x * x / 2 - x ** 3 / 3 + x ** 4 / 8, 1.0 - (1.0 + x) * np.exp(-x))
        fg = np.where(R > 0, h / (FOUR_PI * R ** 3), 0.0)
    return sm0, fg[..., None] * diff


def _local_from_inner(tq, tw, tc, sc, g0, g1, gg):
    """Local 3x3 matrices of listed pairs from inner integrals at test points.

    Shapes: tq (P, q, 3), tw (P, q), tc/sc (P, 3, 3), g0 (P, q), g1/gg (P, q, 3).
    """
    ra = tq[:, :, None, :] - tc[:, None, :, :]  # P q a x
    S = np.einsum("pq,pq->p", tw, g0)
    t1 = np.einsum("pq,pqax,pqx->pa", tw, ra, g1)
    t2 = np.einsum("pq,pqax,pbx,pq->pab", tw, ra, sc, g0)
    A = t1[:, :, None] - t2
    cr = np.cross(ra, gg[:, :, None, :])  # P q a x
    cw = np.einsum("pq,pqax->pax", tw, cr)
    K = np.einsum("pax,pax->pa", tc, cw)[:, :, None] - np.einsum("pbx,pax->pab", sc, cw)
    return A, S, K


def _near_local(tc, sc, k, quad: QuadratureRule):
    """Singularity-extracted local matrices for the listed pairs.

    The outer/inner role assignment is averaged with its mirror image so the
    rule is symmetric: swapping test and source transposes the result.
    """
    A1, S1, K1 = _near_one_sided(tc, sc, k, quad)
    A2, S2, K2 = _near_one_sided(sc, tc, k, quad)
    return (0.5 * (A1 + A2.transpose(0, 2, 1)), 0.5 * (S1 + S2),
            0.5 * (K1 + K2.transpose(0, 2, 1)))


def inner_integrals(points, corners, k, inner_rule):
    """``int G``, ``int G r'`` and ``int grad_r G`` over triangles, pairwise.

    ``points`` (P, q, 3) are observation points for triangle ``corners[p]``.
    Static parts are integrated analytically, the smooth remainder with
    ``inner_rule``.
    """
    P, nq = points.shape[:2]
    r = points.reshape(-1, 3)
    tri = np.repeat(corners, nq, axis=0)
    s0, s1, sg = static_potentials(r, tri)
    g0 = (s0 / FOUR_PI).reshape(P, nq).astype(complex)
    g1 = (s1 / FOUR_PI).reshape(P, nq, 3).astype(complex)
    gg = (sg / FOUR_PI).reshape(P, nq, 3).astype(complex)
    sq, sw = _rule_points(corners, inner_rule)
    diff = points[:, :, None, :] - sq[:, None, :, :]
    R = np.linalg.norm(diff, axis=-1)
    sm0, smg = _smooth_terms(k, diff, R)
    g0 += np.einsum("ps,pqs->pq", sw, sm0)
    g1 += np.einsum("ps,pqs,psx->pqx", sw, sm0, sq)
    gg += np.einsum("ps,pqsx->pqx", sw, smg)
    return g0, g1, gg


def _near_one_sided(tc, sc, k, quad: QuadratureRule):
    tq, tw = _rule_points(tc, quad.near_outer)
    g0, g1, gg = inner_integrals(tq, sc, k, quad.near_inner)
    return _local_from_inner(tq, tw, tc, sc, g0, g1, gg)


def _scatter(out, rows_idx, rows_cf, cols_idx, cols_cf, X, ti=None, sj=None):
    """Add c_a c_b X[..., a, b] into ``out`` at the RWG indices of each half.

    With ``ti``/``sj`` given, X is a pair list (P, 3, 3); otherwise a dense
    block (nt, ns, 3, 3).
    """
    if ti is None:
        r = rows_idx[:, None, :, None]
        c = cols_idx[None, :, None, :]
        w = rows_cf[:, None, :, None] * cols_cf[None, :, None, :] * X
    else:
        r = rows_idx[ti][:, :, None]
        c = cols_idx[sj][:, None, :]
        w = rows_cf[ti][:, :, None] * cols_cf[sj][:, None, :] * X
    r, c = np.broadcast_arrays(r, c)
    mask = (r >= 0) & (c >= 0)
    r, c, w = r[mask], c[mask], w[mask]
    if r.size == 0:
        return
    ncol = out.shape[1]
    ur, inv = np.unique(r, return_inverse=True)
    flat = inv * ncol + c
    n = len(ur) * ncol
    acc = np.bincount(flat, weights=w.real, minlength=n) + 1j * np.bincount(flat, weights=w.imag,
                                                                              minlength=n)
    out[ur] += acc.reshape(len(ur), ncol)


def assemble_operators(test: RwgBasisSet, source: RwgBasisSet, k, quadrature=None,
                       want=("L", "K"), return_scalar=False):
    """Assemble L and/or principal-value K between two RWG sets.

    Returns a dict with the requested dense matrices.  With
    ``return_scalar`` the vector-potential and charge parts of L are also
    returned separately as ``"A"`` and ``"Phi"`` (``L = A - Phi / k^2``).
    """
    quad = quadrature or QuadratureRule()
    k = complex(k)
    if len(test) == 0 or len(source) == 0:
        raise AssemblyError("test and source basis sets must be nonempty")
    if "L" in want and k == 0:
        raise AssemblyError("k = 0: the charge term of L is undefined")
    tt = _half_table(test)
    st = _half_table(source)
    nt, ns = len(tt.tris), len(st.tris)
    out = {}
    if "L" in want:
        out["L"] = np.zeros((len(test), len(source)), complex)
    if "K" in want:
        out["K"] = np.zeros((len(test), len(source)), complex)
    if return_scalar:
        out["A"] = np.zeros((len(test), len(source)), complex)
        out["Phi"] = np.zeros((len(test), len(source)), complex)
    reg = quad.regular
    tq, tw = _rule_points(tt.corners, reg)
    sq, sw = _rule_points(st.corners, reg)
    ni, nj = _near_pairs(tt, st, quad.near_factor)
    near_mask = np.zeros((nt, ns), bool)
    near_mask[ni, nj] = True
    chunk = max(1, _CHUNK_PAIRS // max(ns, 1))
    for i0 in range(0, nt, chunk):
        i1 = min(nt, i0 + chunk)
        A = np.empty((i1 - i0, ns, 3, 3), complex)
        S = np.empty((i1 - i0, ns), complex)
        K = np.empty((i1 - i0, ns, 3, 3), complex)
        _regular_block(tq[i0:i1], tw[i0:i1], tt.corners[i0:i1], sq, sw, st.corners, k, A, S, K)
        nm = near_mask[i0:i1]
        A[nm] = 0.0
        S[nm] = 0.0
        K[nm] = 0.0
        _accumulate(out, tt, st, A, S, K, k, slice(i0, i1))
    # near pairs, in batches
    for p0 in range(0, len(ni), 4000):
        pi, pj = ni[p0:p0 + 4000], nj[p0:p0 + 4000]
        A, S, K = _near_local(tt.corners[pi], st.corners[pj], k, quad)
        _accumulate(out, tt, st, A, S, K, k, None, pi, pj)
    return out


def _accumulate(out, tt, st, A, S, K, k, rows, pi=None, pj=None):
    if pi is None:
        ri, rc = tt.index[rows], tt.coef[rows]
        Sb = S[..., None, None]
    else:
        ri, rc = tt.index, tt.coef
        Sb = S[:, None, None]
    if "L" in out:
        _scatter(out["L"], ri, rc, st.index, st.coef, A - (4.0 / (k * k)) * Sb, pi, pj)
    if "K" in out:
        _scatter(out["K"], ri, rc, st.index, st.coef, K, pi, pj)
    if "A" in out:
        _scatter(out["A"], ri, rc, st.index, st.coef, A, pi, pj)
        _scatter(out["Phi"], ri, rc, st.index, st.coef, 4.0 * np.broadcast_to(Sb, A.shape), pi, pj)


def _tri_keys(corners):
    keys = np.round(corners / GEOM_TOL).astype(np.int64)
    return [tuple(sorted(map(tuple, c))) for c in keys.tolist()]


def coincident_triangles(test: RwgBasisSet, source: RwgBasisSet):
    """Index pairs of geometrically coincident support triangles."""
    tt, st = _half_table(test), _half_table(source)
    lookup = {key: j for j, key in enumerate(_tri_keys(st.corners))}
    ii, jj = [], []
    for i, key in enumerate(_tri_keys(tt.corners)):
        j = lookup.get(key)
        if j is not None:
            ii.append(i)
            jj.append(j)
    return tt, st, np.array(ii, dtype=int), np.array(jj, dtype=int)


def rotated_gram(test: RwgBasisSet, source: RwgBasisSet, region_normals: bool = False):
    """``<f_k, n x f_l>`` over coincident triangles.

    ``n`` is the stored normal of the source triangle, or its region-facing
    normal when ``region_normals`` is set.
    """
    tt, st, ii, jj = coincident_triangles(test, source)
    out = np.zeros((len(test), len(source)), complex)
    if len(ii) == 0:
        return out
    rule = triangle_rule(2)
    tc, sc = tt.corners[ii], st.corners[jj]
    n = st.normals[jj] * (st.side[jj][:, None] if region_normals else 1.0)
    q, w = _rule_points(tc, rule)
    ra = q[:, :, None, :] - tc[:, None, :, :]  # P q a x
    rb = q[:, :, None, :] - sc[:, None, :, :]  # P q b x
    nrb = np.cross(n[:, None, None, :], rb)
    X = np.einsum("pq,pqax,pqbx->pab", w, ra, nrb)
    _scatter(out, tt.index, tt.coef, st.index, st.coef, X.astype(complex), ii, jj)
    return out


def assemble_L(test: RwgBasisSet, source: RwgBasisSet, medium, quadrature=None,
               ) -> InteractionMatrix:
    """Mixed-potential L matrix in ``medium`` (a :class:`Medium` or a wavenumber)."""
    k = medium.k if isinstance(medium, Medium) else complex(medium)
    data = assemble_operators(test, source, k, quadrature, want=("L",))["L"]
    return InteractionMatrix(data, "L", getattr(medium, "name", ""), False)


def assemble_K(test: RwgBasisSet, source: RwgBasisSet, medium, side_sign=None,
               quadrature=None) -> InteractionMatrix:
    """K matrix evaluated as a one-sided limit.

    ``side_sign = +1`` takes the limit from the side the stored normal of
    the source triangles points into, ``-1`` from the other side.  The result
    is ``p.v. K + side_sign / 2 * <f_k, f_l x n>``.  ``side_sign = 0`` returns
    the principal value alone.  Coincident test and source surfaces require
    an explicit ``side_sign``.
    """
    k = medium.k if isinstance(medium, Medium) else complex(medium)
    data = assemble_operators(test, source, k, quadrature, want=("K",))["K"]
    gram = None
    if side_sign is None:
        _, _, ii, _ = coincident_triangles(test, source)
        if len(ii):
            raise AssemblyError("test and source surfaces coincide: side_sign is required")
    elif side_sign not in (-1, 0, 1):
        raise ValueError("side_sign must be -1, 0 or +1")
    elif side_sign != 0:
        gram = rotated_gram(test, source)
        data = data - 0.5 * side_sign * gram
    return InteractionMatrix(data, "K", getattr(medium, "name", ""), False)


@dataclass(frozen=True, eq=False)
class RegionBlock:
    """Scaled EFIE/MFIE block of one homogeneous region.

    Unknown order is ``[J (all RWG), m (non-PEC RWG)]`` with ``m = M / eta0``.
    """

    matrix: np.ndarray
    basis: RwgBasisSet
    m_index: np.ndarray
    medium: Medium

    @property
    def n_j(self) -> int:
        return len(self.basis)

    @property
    def n_m(self) -> int:
        return len(self.m_index)


def pec_touching(basis: RwgBasisSet) -> np.ndarray:
    kinds = basis.mesh.kinds
    pec = np.isin(kinds, [SurfaceKind.PEC, SurfaceKind.GROUND_PLANE])
    return pec[basis.tri_plus] | pec[basis.tri_minus]


def assemble_region_block(basis: RwgBasisSet, medium: Medium, quadrature=None,
                          include_residue: bool = True) -> RegionBlock:
    """EFIE/MFIE block of a closed region.

    Rows are the tested tangential E (divided by eta0) and the negated tested
    tangential H on the boundary, approached from inside the region:

        [ jk0 L          K + N/2    ] [J]   [<f, E_inc>/eta0]
        [ K + N/2   -jk0 eps_r L    ] [m] = [-<f, H_inc>    ]

    ``N = <f_k, n x f_l>`` uses the normal pointing into the region.  The
    ``N/2`` terms cancel between the two sides of every surface once regions
    are joined, so the final systems may drop them (``include_residue``).
    """
    if basis.region is None:
        raise AssemblyError("region block needs a basis built with region=...")
    _check_closed(basis)
    k = medium.k
    ops = assemble_operators(basis, basis, k, quadrature)
    L, K = ops["L"], ops["K"]
    if include_residue:
        K = K + 0.5 * rotated_gram(basis, basis, region_normals=True)
    midx = np.nonzero(~pec_touching(basis))[0]
    k0 = medium.k0
    eps = complex(medium.eps_r)
    Km = K[:, midx]
    top = np.hstack([1j * k0 * L, Km])
    bottom = np.hstack([K[midx], -1j * k0 * eps * L[np.ix_(midx, midx)]])
    return RegionBlock(np.vstack([top, bottom]), basis, midx, medium)


def _check_closed(basis: RwgBasisSet):
    mesh = basis.mesh
    sel = np.nonzero(basis.tri_side != 0)[0]
    t = mesh.triangles[sel]
    e = np.sort(np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    if np.any(counts != 2):
        raise AssemblyError(f"region {basis.region} boundary is not closed")
    # consistent orientation: every edge traversed once in each direction
    # once triangles are flipped to face the region
    tt = t.copy()
    flip = basis.tri_side[sel] < 0
    tt[flip] = tt[flip][:, [0, 2, 1]]
    d = np.concatenate([tt[:, [1, 2]], tt[:, [2, 0]], tt[:, [0, 1]]])
    fwd = {tuple(x) for x in d.tolist()}
    if len(fwd) != len(d) or any((b, a) not in fwd for a, b in fwd):
        raise AssemblyError(f"region {basis.region} has inconsistent normals")


@dataclass(frozen=True, eq=False)
class BasisSamples:
    """Quadrature samples of RWG functions, one row per half-function.

    ``wf[h, q]`` is the quadrature weight times the vector value of half ``h``
    at ``points[h, q]``; ``rwg[h]`` is the owning function.
    """

    rwg: np.ndarray
    points: np.ndarray
    wf: np.ndarray
    nfunc: int

    def test(self, field_values) -> np.ndarray:
        """``<f_k, F>`` for field values sampled at ``points`` (shape (H, q, 3))."""
        v = np.einsum("hqx,hqx->h", self.wf, field_values)
        return (np.bincount(self.rwg, v.real, self.nfunc)
                + 1j * np.bincount(self.rwg, v.imag, self.nfunc))

    def expand(self, coeffs) -> np.ndarray:
        """Weighted current samples ``c_k wf`` for a coefficient vector."""
        return np.asarray(coeffs)[self.rwg][:, None, None] * self.wf


def basis_samples(basis: RwgBasisSet, degree: int = 4, subset=None) -> BasisSamples:
    """Sample RWG functions (optionally a subset, renumbered) on a triangle rule."""
    rwg, t, local, coef = basis.halves()
    nfunc = len(basis)
    if subset is not None:
        pos = np.full(len(basis), -1)
        pos[np.asarray(subset)] = np.arange(len(subset))
        keep = pos[rwg] >= 0
        rwg, t, local, coef = pos[rwg][keep], t[keep], local[keep], coef[keep]
        nfunc = len(subset)
    rule = triangle_rule(degree)
    mesh = basis.mesh
    c = mesh.vertices[mesh.triangles[t]]
    pts, w = _rule_points(c, rule)
    p = c[np.arange(len(t)), local]
    wf = (w * coef[:, None])[..., None] * (pts - p[:, None, :])
    return BasisSamples(rwg, pts, wf, nfunc)
