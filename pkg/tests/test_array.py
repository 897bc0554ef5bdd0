import numpy as np
import pytest

from emsurf.array import (ArrayLayout, ExcitationError, HertzianDipole, LayoutError, PlaneWave,
                          assemble_coupling_generators, build_layout, coupling_block)
from emsurf.kernels.assembly import ETA0
from emsurf.macromodel import build_cell_model
from emsurf.pipeline import array_radius, assemble_system, build_models, cuts, solve_array, wavenumber
from emsurf.selftest import FIXTURE_FREQUENCY, fixture_geometry
from emsurf.solver import GmresConfig
from emsurf.validation.monolithic import solve_monolithic


def test_layout_indexing():
    lay = ArrayLayout((3, 2), (1.0, 2.0), ("a",) * 6, (0.5, 0.0, 0.0))
    for m in range(6):
        assert lay.index(*lay.lattice(m)) == m
    np.testing.assert_allclose(lay.position(lay.index(2, 1)), [2.5, 2.0, 0.0])
    assert len(lay.offsets()) == 5 * 3
    with pytest.raises(LayoutError):
        ArrayLayout((0, 2), (1.0, 1.0), (), (0, 0, 0))
    with pytest.raises(LayoutError, match="covers"):
        ArrayLayout((2, 2), (1.0, 1.0), ("a",) * 3, (0, 0, 0))


def test_plane_wave_fields():
    pw = PlaneWave((0.0, 0.6, -0.8), (1.0, 0.0, 0.0), 2.0)
    pts = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    E, H = pw.fields(pts, 3.0)
    np.testing.assert_allclose(np.linalg.norm(E, axis=1), 2.0)
    np.testing.assert_allclose(H, np.cross([0.0, 0.6, -0.8], E) / ETA0)
    with pytest.raises(ExcitationError):
        PlaneWave((0.0, 0.0, 2.0))
    with pytest.raises(ExcitationError):
        PlaneWave((0.0, 0.0, 1.0), (0.0, 0.0, 1.0))


def test_dipole_near_field_satisfies_reciprocity_of_orientation():
    a = HertzianDipole((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
    b = HertzianDipole((0.3, 0.2, 0.1), (0.0, 0.6, 0.8))
    k = 5.0
    Ea, _ = a.fields(np.array([[0.3, 0.2, 0.1]]), k)
    Eb, _ = b.fields(np.array([[0.0, 0.0, 0.0]]), k)
    assert np.dot(Ea[0], [0.0, 0.6, 0.8]) == pytest.approx(np.dot(Eb[0], [1.0, 0.0, 0.0]))
    with pytest.raises(ExcitationError):
        HertzianDipole(orientation=(1.0, 1.0, 0.0))


@pytest.fixture(scope="module")
def models():
    return build_models({"p54": fixture_geometry()}, FIXTURE_FREQUENCY)


def test_layout_rejects_unknown_or_mismatched_templates(models):
    with pytest.raises(LayoutError, match="no macromodel"):
        build_layout((1, 2), 13.5e-3, ["p54", "zz"], models)
    with pytest.raises(LayoutError, match="period"):
        build_layout((1, 1), 10e-3, ["p54"], models)


def test_dipole_inside_a_box_is_rejected(models):
    system = assemble_system(models, (1, 1), ["p54"], FIXTURE_FREQUENCY)
    with pytest.raises(ExcitationError, match="inside"):
        solve_array(system, HertzianDipole((5e-3, 5e-3, 5e-3)))


def test_reciprocal_generators(models):
    from emsurf.array import box_template

    box = box_template(models["p54"])
    w = 13.5e-3
    fwd = coupling_block(box, (w, 0.0, 0.0), (0.0, 0.0, 0.0), FIXTURE_FREQUENCY)
    bwd = coupling_block(box, (0.0, 0.0, 0.0), (w, 0.0, 0.0), FIXTURE_FREQUENCY)
    assert np.linalg.norm(fwd - bwd.T) <= 1e-12 * np.linalg.norm(fwd)


def test_overlap_merge_bookkeeping(solved_fixture):
    S = solved_fixture.system
    d = S.dofs
    UtU = (S.Uo.T @ S.Uo).toarray()
    np.testing.assert_array_equal(UtU, np.diag(np.diag(UtU)))
    # shared face edges have two copies, the vertical edge where four boxes meet has four
    assert set(np.diag(UtU).tolist()) <= {1.0, 2.0, 4.0}
    assert d.n_merged == d.n_stacked - d.duplicates
    assert int(np.sum(np.diag(UtU) - 1)) == d.duplicates


def test_fft_operator_matches_dense_merged_matrix(solved_fixture):
    S = solved_fixture.system
    A = S.dense()
    x = np.random.default_rng(3).standard_normal(A.shape[0]) + 0j
    assert np.linalg.norm(S.apply(x) - A @ x) <= 1e-12 * np.linalg.norm(A @ x)


def test_gmres_solution_matches_direct(solved_fixture):
    S = solved_fixture.system
    sol = solved_fixture.solution
    y = np.linalg.solve(S.dense(), sol.rhs)
    assert np.linalg.norm(sol.currents.merged - y) <= 1e-3 * np.linalg.norm(y)


def test_single_cell_matches_monolithic(models):
    g = fixture_geometry()
    S = assemble_system(models, (1, 1), ["p54"], FIXTURE_FREQUENCY)
    pw = PlaneWave((0.0, 0.6, -0.8), (1.0, 0.0, 0.0))
    sol = solve_array(S, pw, GmresConfig(tol=1e-8))
    mono = solve_monolithic(S.layout, {"p54": g}, FIXTURE_FREQUENCY, pw)
    k = wavenumber(FIXTURE_FREQUENCY)
    R = array_radius(S.layout, S.box)
    th = np.linspace(-90, 90, 61)
    a = cuts(sol.sources(), k, R, (0.0, 90.0), th)
    b = cuts(mono.outer_currents(), k, R, (0.0, 90.0), th)
    for ca, cb in zip(a, b):
        ea = np.concatenate([ca.e_theta, ca.e_phi])
        eb = np.concatenate([cb.e_theta, cb.e_phi])
        assert np.linalg.norm(ea - eb) <= 1e-3 * np.linalg.norm(eb)
