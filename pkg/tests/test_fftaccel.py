import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emsurf.fftaccel import (ToeplitzError, build_block_toeplitz, circulant_length,
                             storage_bound)


def random_generators(rng, mx, my, n):
    shape = (2 * mx - 1, 2 * my - 1, n, n)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def dense_reference(gen, mx, my):
    # block (m, m') = gen[dx + mx - 1, dy + my - 1] with (dx, dy) = lattice(m) - lattice(m')
    n = gen.shape[2]
    M = mx * my
    out = np.zeros((M * n, M * n), complex)
    for m in range(M):
        ax, ay = divmod(m, my)
        for mp in range(M):
            bx, by = divmod(mp, my)
            out[m * n:(m + 1) * n, mp * n:(mp + 1) * n] = gen[ax - bx + mx - 1, ay - by + my - 1]
    return out


@settings(max_examples=30, deadline=None)
@given(mx=st.integers(1, 6), my=st.integers(1, 6), n=st.integers(1, 5),
       seed=st.integers(0, 2 ** 32 - 1))
def test_apply_matches_dense(mx, my, n, seed):
    rng = np.random.default_rng(seed)
    gen = random_generators(rng, mx, my, n)
    op = build_block_toeplitz(gen, (mx, my))
    x = rng.standard_normal(mx * my * n) + 1j * rng.standard_normal(mx * my * n)
    ref = dense_reference(gen, mx, my) @ x
    assert np.linalg.norm(op.apply(x) - ref) <= 1e-12 * np.linalg.norm(ref)


def test_dict_generators_and_block_recovery(rng):
    mx, my, n = 3, 2, 4
    gen = random_generators(rng, mx, my, n)
    as_dict = {(dx, dy): gen[dx + mx - 1, dy + my - 1]
               for dx in range(-mx + 1, mx) for dy in range(-my + 1, my)}
    op = build_block_toeplitz(as_dict, (mx, my))
    np.testing.assert_allclose(op.block((-2, 1)), gen[0, 2], atol=1e-12)
    np.testing.assert_allclose(op.densify(), dense_reference(gen, mx, my), atol=1e-12)


def test_one_dimensional_lattice(rng):
    gen = random_generators(rng, 7, 1, 3)
    op = build_block_toeplitz(gen, (7, 1))
    x = rng.standard_normal(21) + 0j
    np.testing.assert_allclose(op @ x, dense_reference(gen, 7, 1) @ x, atol=1e-12)


@pytest.mark.parametrize("m", [1, 2, 3, 7, 8, 17, 64, 100])
def test_circulant_length_bounds(m):
    p = circulant_length(m)
    assert (p == 1) if m == 1 else (2 * m - 1 <= p <= 2 * m)


@pytest.mark.parametrize("dims", [(1, 1), (4, 4), (9, 5), (16, 16)])
def test_storage_within_bound(dims):
    n = 6
    op = build_block_toeplitz(np.zeros((2 * dims[0] - 1, 2 * dims[1] - 1, n, n)), dims)
    assert op.storage <= storage_bound(2, n, dims[0] * dims[1])


def test_errors(rng):
    with pytest.raises(ToeplitzError):
        build_block_toeplitz(np.zeros((3, 3, 2, 2)), (3, 3))
    with pytest.raises(ToeplitzError, match="missing"):
        build_block_toeplitz({(0, 0): np.eye(2)}, (2, 1))
    op = build_block_toeplitz(random_generators(rng, 2, 2, 2), (2, 2))
    with pytest.raises(ToeplitzError):
        op.apply(np.zeros(5))
    with pytest.raises(ToeplitzError):
        op.block((2, 0))
    with pytest.raises(ToeplitzError, match="cap"):
        op.densify(cap=4)
