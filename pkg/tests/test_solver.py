import numpy as np
import pytest
import scipy.sparse as sp

from emsurf.solver import (ConvergenceError, GmresConfig, IdentityPreconditioner,
                           NearFieldPreconditioner, PreconditionerError, PreconditionerSpec,
                           build_preconditioner, gmres_solve, near_field_matrix)


def test_gmres_matches_direct_solve(rng):
    n = 60
    A = np.eye(n) * 4 + rng.standard_normal((n, n)) / np.sqrt(n) + 0.5j * np.eye(n)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    y, rep = gmres_solve(lambda v: A @ v, None, b, GmresConfig(tol=1e-10, restart=10))
    assert rep.converged
    assert np.linalg.norm(A @ y - b) <= 1e-10 * np.linalg.norm(b) * 1.0001
    np.testing.assert_allclose(y, np.linalg.solve(A, b), rtol=1e-8)
    assert rep.history[0] == 1.0 and rep.history[-1] <= 1e-10


def test_exact_preconditioner_converges_in_one_step(rng):
    n = 30
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) + 6 * np.eye(n)
    P = NearFieldPreconditioner(sp.csc_matrix(A))
    b = rng.standard_normal(n) + 0j
    y, rep = gmres_solve(lambda v: A @ v, P, b, GmresConfig(tol=1e-8))
    assert rep.iterations == 1
    np.testing.assert_allclose(A @ y, b, atol=1e-8)


def test_iteration_limit_raises(rng):
    n = 80
    A = np.diag(np.linspace(1, 1e4, n)) + 0j
    b = np.ones(n, complex)
    with pytest.raises(ConvergenceError) as err:
        gmres_solve(lambda v: A @ v, IdentityPreconditioner(), b,
                    GmresConfig(tol=1e-12, restart=5, maxiter=10))
    assert len(err.value.history) > 1
    _, rep = gmres_solve(lambda v: A @ v, None, b, GmresConfig(tol=1e-12, restart=5, maxiter=10),
                         raise_on_failure=False)
    assert not rep.converged and rep.iterations == 10


def test_zero_rhs():
    y, rep = gmres_solve(lambda v: v, None, np.zeros(4, complex))
    assert rep.converged and np.all(y == 0)


def test_config_validation():
    with pytest.raises(ValueError):
        GmresConfig(tol=0.0)
    with pytest.raises(ValueError):
        GmresConfig(restart=0)
    with pytest.raises(ValueError):
        PreconditionerSpec(-1.0).resolve(1e9)
    # default radius is one eighth of the free-space wavelength
    assert PreconditionerSpec().resolve(299792458.0) == pytest.approx(1 / 8)


def test_near_field_pattern_respects_radius():
    mids = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    pos = np.array([[0.0, 0, 0], [10.0, 0, 0]])

    def blocks(m, mp):
        return np.full((2, 2), 1.0 + m + 10 * mp)

    P = near_field_matrix(blocks, pos, mids, 1.5).toarray()
    assert np.count_nonzero(P[:2, 2:]) == 0 and np.count_nonzero(P[2:, :2]) == 0
    np.testing.assert_array_equal(P[:2, :2], np.full((2, 2), 1.0))
    P = near_field_matrix(blocks, pos, mids, 0.5).toarray()
    np.testing.assert_array_equal(P, np.diag([1.0, 1.0, 12.0, 12.0]))


def test_empty_diagonal_rejected():
    mids = np.array([[0.0, 0, 0]])
    with pytest.raises(PreconditionerError):
        build_preconditioner(lambda m, mp: np.zeros((1, 1)), np.zeros((1, 3)), mids, 1.0)
