import numpy as np
import pytest

from emsurf.kernels import _pairs_py
from emsurf.kernels.assembly import (HAVE_COMPILED, AssemblyError, C0, Medium, assemble_K,
                                     assemble_L, assemble_operators, assemble_region_block,
                                     green)
from emsurf.mesh import build_rwg, icosphere, rectangle_plate
from emsurf.quadrature import triangle_rule
from emsurf.validation.mie import bistatic_rcs
from emsurf.validation.sphere import dielectric_sphere_pmchwt


def test_green_function_value():
    r = np.array([[0.0, 0.0, 0.0]])
    rp = np.array([[0.3, 0.4, 0.0]])
    k = 2.0
    assert np.ravel(green(k, r, rp))[0] == pytest.approx(np.exp(-1j * k * 0.5) / (4 * np.pi * 0.5))


def _pair_inputs(rng, nt=5, ns=4):
    def tris(n, shift):
        base = rng.uniform(0, 1, (n, 3, 3))
        return base + shift
    tc, sc = tris(nt, 0.0), tris(ns, 3.0)
    rule = triangle_rule(4)
    def pts(c):
        area = 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
        return np.ascontiguousarray(rule.map(c)), np.ascontiguousarray(area[:, None] * rule.weights)
    tq, tw = pts(tc)
    sq, sw = pts(sc)
    return tq, tw, np.ascontiguousarray(tc), sq, sw, np.ascontiguousarray(sc)


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernels not built")
def test_compiled_pairs_match_numpy(rng):
    from emsurf.kernels._fill import regular_block

    args = _pair_inputs(rng)
    k = 2.1 - 0.05j
    out = []
    for fn in (regular_block, _pairs_py.regular_block):
        A = np.empty((5, 4, 3, 3), complex)
        S = np.empty((5, 4), complex)
        K = np.empty((5, 4, 3, 3), complex)
        fn(*args, k, A, S, K)
        out.append((A, S, K))
    for a, b in zip(*out):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


@pytest.fixture(scope="module")
def sphere_basis():
    return build_rwg(icosphere(1.0, 1), region=0)


def test_galerkin_L_is_symmetric(sphere_basis):
    L = np.asarray(assemble_L(sphere_basis, sphere_basis, 1.3))
    assert np.linalg.norm(L - L.T) <= 1e-13 * np.linalg.norm(L)


def test_pmchwt_sum_is_symmetric(sphere_basis):
    f = 1.0 * C0 / (2 * np.pi)
    inner = build_rwg(sphere_basis.mesh, region=1)
    Z = (assemble_region_block(sphere_basis, Medium(1.0, f)).matrix
         + assemble_region_block(inner, Medium(2.5, f)).matrix)
    assert np.linalg.norm(Z - Z.T) <= 1e-13 * np.linalg.norm(Z)


def test_translation_invariance_on_structured_grid():
    # grid-aligned triangles put many pair distances exactly on the near threshold
    plate = rectangle_plate(4.0, 4.0, 8, 8)
    b = build_rwg(plate)
    shift = np.array([13.5, 27.0, 0.0])
    a1 = assemble_operators(b, b.translated([4.0, 0.0, 0.0]), 1.1)
    a2 = assemble_operators(b.translated(shift), b.translated(shift + [4.0, 0.0, 0.0]), 1.1)
    for key in ("L", "K"):
        assert np.linalg.norm(a1[key] - a2[key]) <= 1e-12 * np.linalg.norm(a1[key])


def test_K_requires_side_for_coincident_surfaces(sphere_basis):
    with pytest.raises(AssemblyError):
        assemble_K(sphere_basis, sphere_basis, 1.0)
    with pytest.raises(ValueError):
        assemble_K(sphere_basis, sphere_basis, 1.0, side_sign=2)
    Kp = np.asarray(assemble_K(sphere_basis, sphere_basis, 1.0, side_sign=1))
    Km = np.asarray(assemble_K(sphere_basis, sphere_basis, 1.0, side_sign=-1))
    K0 = np.asarray(assemble_K(sphere_basis, sphere_basis, 1.0, side_sign=0))
    np.testing.assert_allclose(0.5 * (Kp + Km), K0, atol=1e-14)


def test_dielectric_sphere_converges_to_mie():
    th = np.radians(np.linspace(0.0, 180.0, 91))
    errs = []
    for level in (1, 2):
        sol = dielectric_sphere_pmchwt(1.0, 1.0, 4.0, level)
        errs.append(max(np.max(np.abs(10 * np.log10(
            sol.rcs(th, p) / bistatic_rcs(1.0, 1.0, th, p, eps_r=4.0)))) for p in "EH"))
    assert errs[1] < 1.5
    assert errs[0] / errs[1] > 3.0  # second order in the edge length
