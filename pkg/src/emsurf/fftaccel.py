"""Block-Toeplitz operators on 1-D and 2-D lattices applied through circulant FFTs.

The operator couples ``M = Mx * My`` cells, each with ``n`` local unknowns.
Block ``(m, m')`` depends only on the lattice offset ``m - m'`` and is given by
a generator ``G[dx + Mx - 1, dy + My - 1]`` of shape ``(n, n)``.  Each of the
``n^2`` scalar Toeplitz sequences is embedded in a circulant whose length per
axis is at least ``2 M - 1``; only the circulant spectra are stored.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

DENSIFY_CAP = 20000


class ToeplitzError(ValueError):
    """Inconsistent generator data or vector sizes."""


def circulant_length(m: int) -> int:
    """FFT-friendly length >= 2m - 1 that never exceeds 2m."""
    if m <= 1:
        return 1
    p = sfft.next_fast_len(2 * m - 1)
    return p if p <= 2 * m else 2 * m


@dataclass(frozen=True, eq=False)
class BlockToeplitzOperator:
    """Block-Toeplitz coupling operator with cached circulant spectra."""

    dims: tuple
    n: int
    spectra: np.ndarray  # (Px, Py, n, n)
    pad: tuple
    workers: int = 1

    @property
    def ncells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def shape(self):
        s = self.ncells * self.n
        return (s, s)

    @property
    def dtype(self):
        return self.spectra.dtype

    @property
    def storage(self) -> int:
        """Number of complex numbers held by the operator."""
        return int(self.spectra.size)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.ncells * self.n,):
            raise ToeplitzError(f"vector of length {self.ncells * self.n} expected, got {x.shape}")
        mx, my = self.dims
        px, py = self.pad
        xs = x.reshape(mx, my, self.n)
        xf = sfft.fftn(xs, s=(px, py), axes=(0, 1), workers=self.workers)
        yf = np.matmul(self.spectra, xf[..., None])[..., 0]
        y = sfft.ifftn(yf, axes=(0, 1), workers=self.workers)[:mx, :my]
        return np.ascontiguousarray(y).reshape(-1)

    __matmul__ = apply

    def matvec(self, x):
        return self.apply(x)

    def block(self, offset) -> np.ndarray:
        """Generator block for lattice offset ``(dx, dy)`` recovered from the spectra."""
        dx, dy = offset
        mx, my = self.dims
        if abs(dx) >= mx or abs(dy) >= my:
            raise ToeplitzError(f"offset {offset} outside the lattice")
        px, py = self.pad
        gen = sfft.ifftn(self.spectra, axes=(0, 1), workers=self.workers)
        return gen[dx % px, dy % py]

    def densify(self, cap: int = DENSIFY_CAP) -> np.ndarray:
        size = self.ncells * self.n
        if size > cap:
            raise ToeplitzError(f"densify refused: {size} unknowns exceed the cap of {cap}")
        mx, my = self.dims
        px, py = self.pad
        gen = sfft.ifftn(self.spectra, axes=(0, 1), workers=self.workers)
        out = np.zeros((size, size), dtype=complex)
        n = self.n
        for m in range(self.ncells):
            ax, ay = divmod(m, my)
            for mp in range(self.ncells):
                bx, by = divmod(mp, my)
                out[m * n:(m + 1) * n, mp * n:(mp + 1) * n] = gen[(ax - bx) % px, (ay - by) % py]
        return out


def build_block_toeplitz(generators, dims, workers: int = 1) -> BlockToeplitzOperator:
    """Embed generator blocks in circulants and keep their spectra.

    ``generators`` is an array of shape ``(2Mx-1, 2My-1, n, n)`` or a mapping
    from ``(dx, dy)`` offsets to ``(n, n)`` blocks.  For a 1-D lattice use
    ``dims = (M, 1)``.
    """
    mx, my = (int(d) for d in dims)
    if mx < 1 or my < 1:
        raise ToeplitzError("lattice dimensions must be positive")
    if isinstance(generators, dict):
        missing = [(dx, dy) for dx in range(-mx + 1, mx) for dy in range(-my + 1, my)
                   if (dx, dy) not in generators]
        if missing:
            raise ToeplitzError(f"missing generator blocks for offsets {missing[:5]}")
        n = np.shape(generators[(0, 0)])[0]
        gen = np.zeros((2 * mx - 1, 2 * my - 1, n, n), complex)
        for (dx, dy), blk in generators.items():
            if abs(dx) < mx and abs(dy) < my:
                gen[dx + mx - 1, dy + my - 1] = blk
    else:
        gen = np.asarray(generators)
        if gen.shape[:2] != (2 * mx - 1, 2 * my - 1) or gen.ndim != 4 or gen.shape[2] != gen.shape[3]:
            raise ToeplitzError(f"generator array must have shape ({2 * mx - 1}, {2 * my - 1}, n, n)")
        n = gen.shape[2]
    px, py = circulant_length(mx), circulant_length(my)
    circ = np.zeros((px, py, n, n), complex)
    for dx in range(-mx + 1, mx):
        for dy in range(-my + 1, my):
            circ[dx % px, dy % py] = gen[dx + mx - 1, dy + my - 1]
    del gen
    spectra = sfft.fftn(circ, axes=(0, 1), workers=workers, overwrite_x=True)
    return BlockToeplitzOperator((mx, my), int(n), spectra, (px, py), workers)


def storage_bound(d: int, n: int, m: int) -> int:
    """Upper bound ``2^(d+1) n^2 M`` on stored complex numbers."""
    return 2 ** (d + 1) * n * n * m
