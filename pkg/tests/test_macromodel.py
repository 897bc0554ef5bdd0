import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emsurf.macromodel import (MacromodelMatrix, ReductionError, build_cell_model,
                               load_macromodel, recover_interior, save_macromodel, schur_reduce)
from emsurf.selftest import FIXTURE_FREQUENCY


@settings(max_examples=30, deadline=None)
@given(ne=st.integers(1, 12), ni=st.integers(0, 12), seed=st.integers(0, 2 ** 32 - 1))
def test_reduced_system_reproduces_full_solve(ne, ni, seed):
    # sources only on the kept unknowns: the Schur complement gives the same kept solution
    rng = np.random.default_rng(seed)
    n = ne + ni
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) + 3 * n * np.eye(n)
    b = np.zeros(n, complex)
    b[:ne] = rng.standard_normal(ne)
    x = np.linalg.solve(Z, b)
    mm = schur_reduce(Z, ne)
    xe = np.linalg.solve(mm.matrix, b[:ne])
    np.testing.assert_allclose(xe, x[:ne], rtol=1e-9, atol=1e-12)
    if ni:
        np.testing.assert_allclose(recover_interior(mm, xe), x[ne:], rtol=1e-9, atol=1e-12)


def test_singular_interior_block_is_reported():
    Z = np.eye(4, dtype=complex)
    Z[2:, 2:] = [[1.0, 2.0], [2.0, 4.0]]
    with pytest.raises(ReductionError, match="near-singular"):
        schur_reduce(Z, 2, "bad")
    with pytest.raises(ReductionError):
        recover_interior(schur_reduce(np.eye(3) * 2, 1, keep_factors=False), np.ones(1))


def test_cache_round_trip(tmp_path):
    m = MacromodelMatrix(np.arange(6).reshape(2, 3) * (1 + 2j), "cell-a", 9.6e9, key="abc")
    path = tmp_path / "m.emm"
    save_macromodel(path, m)
    back = load_macromodel(path, "abc")
    np.testing.assert_array_equal(back.matrix, m.matrix)
    assert back.template_id == "cell-a" and back.frequency == 9.6e9
    with pytest.raises(ValueError, match="key"):
        load_macromodel(path, "other")
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_macromodel(path)
    path.write_bytes(b"garbage!" + raw[8:])
    with pytest.raises(ValueError, match="not a macromodel"):
        load_macromodel(path)


@pytest.fixture(scope="module")
def cell_model(cell_geometry):
    return build_cell_model(cell_geometry, FIXTURE_FREQUENCY, keep_system=True)


def test_incidence_matrix_structure(cell_model):
    U = cell_model.incidence.matrix.tocsr()
    assert set(np.unique(U.data).tolist()) <= {-1.0, 1.0}
    # each raw unknown is one signed copy of at most one unique unknown
    assert np.diff(U.indptr).max() == 1
    assert cell_model.n_eq + cell_model.incidence.n_int == U.shape[1]


def test_boundary_cases_present(cell_model):
    counts = cell_model.decomposition.case_counts()
    assert counts["dielectric interface"] > 0 and counts["PEC interface"] > 0
    assert counts["fictitious face over dielectric"] > 0
    assert counts["fictitious face on ground plane"] > 0
    assert sum(counts.values()) == cell_model.geometry.mesh.ntri


def test_macromodel_is_schur_complement_of_projected_system(cell_model):
    Zt = cell_model.reduced_full
    n = cell_model.n_eq
    ref = Zt[:n, :n] - Zt[:n, n:] @ np.linalg.solve(Zt[n:, n:], Zt[n:, :n])
    M = cell_model.macromodel.matrix
    assert np.linalg.norm(M - ref) <= 1e-10 * np.linalg.norm(ref)


def test_cache_hit(tmp_path, cell_geometry):
    a = build_cell_model(cell_geometry, FIXTURE_FREQUENCY, cache_dir=tmp_path)
    b = build_cell_model(cell_geometry, FIXTURE_FREQUENCY, cache_dir=tmp_path)
    assert not a.cache_hit and b.cache_hit
    assert len(os.listdir(tmp_path)) == 1
    np.testing.assert_array_equal(a.macromodel.matrix, b.macromodel.matrix)
