"""Near-field sparse preconditioner and restarted, right-preconditioned GMRES."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernels.assembly import C0


class ConvergenceError(RuntimeError):
    """GMRES hit the iteration limit."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class PreconditionerError(RuntimeError):
    """Near-field matrix could not be factored."""


@dataclass(frozen=True)
class PreconditionerSpec:
    """Near-field radius; ``None`` selects one eighth of the free-space wavelength."""

    radius: float | None = None

    def resolve(self, frequency: float) -> float:
        r = C0 / frequency / 8.0 if self.radius is None else float(self.radius)
        if not r > 0:
            raise ValueError("near-field radius must be positive")
        return r


@dataclass(frozen=True)
class GmresConfig:
    tol: float = 1e-4
    restart: int = 100
    maxiter: int = 1000

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.restart < 1 or self.maxiter < 1:
            raise ValueError("restart and maxiter must be positive")


@dataclass
class SolveReport:
    iterations: int = 0
    residual: float = np.nan
    matvecs: int = 0
    converged: bool = False
    history: list = field(default_factory=list)
    times: dict = field(default_factory=dict)


class NearFieldPreconditioner:
    """Sparse LU of the near-field part of the merged system matrix."""

    def __init__(self, matrix: sp.csc_matrix, factor_time: float = 0.0):
        self.matrix = matrix.tocsc()
        t0 = time.perf_counter()
        try:
            self.lu = spla.splu(self.matrix, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise PreconditionerError(f"near-field matrix is singular ({exc}); "
                                      "try a larger near-field radius") from None
        self.factor_time = time.perf_counter() - t0 + factor_time

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def solve(self, x):
        return self.lu.solve(np.asarray(x, complex))

    __call__ = solve


class IdentityPreconditioner:
    nnz = 0
    factor_time = 0.0

    def solve(self, x):
        return np.asarray(x)

    __call__ = solve


def near_field_matrix(blocks, positions, midpoints, radius, Uo=None):
    """Sparse ``Uo^T Z_nf Uo`` from dense cell-pair blocks.

    ``blocks(m, mp)`` returns the dense ``(n, n)`` block coupling source cell
    ``mp`` into test cell ``m`` (or None when no entry can be near);
    ``positions`` are cell origins and ``midpoints`` the local edge midpoints.
    An entry survives when its two edge midpoints are closer than ``radius``.
    """
    n = len(midpoints)
    M = len(positions)
    rows, cols, vals = [], [], []
    lo = midpoints.min(axis=0)
    hi = midpoints.max(axis=0)
    for m in range(M):
        for mp in range(M):
            gap = np.maximum(0.0, np.abs(positions[m] - positions[mp]) - (hi - lo))
            if np.linalg.norm(gap) >= radius:
                continue
            blk = blocks(m, mp)
            if blk is None:
                continue
            a = midpoints + positions[m]
            b = midpoints + positions[mp]
            d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
            i, j = np.nonzero((d < radius) & (blk != 0))
            rows.append(m * n + i)
            cols.append(mp * n + j)
            vals.append(blk[i, j])
    rows = np.concatenate(rows) if rows else np.zeros(0, int)
    cols = np.concatenate(cols) if cols else np.zeros(0, int)
    vals = np.concatenate(vals) if vals else np.zeros(0, complex)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(M * n, M * n))
    if Uo is not None:
        P = (Uo.T @ P @ Uo).tocsc()
    P.sum_duplicates()
    P.eliminate_zeros()
    return P


def build_preconditioner(blocks, positions, midpoints, radius, Uo=None) -> NearFieldPreconditioner:
    t0 = time.perf_counter()
    P = near_field_matrix(blocks, positions, midpoints, radius, Uo)
    # keep the pattern structurally nonsingular
    diag = P.diagonal()
    if np.any(diag == 0):
        raise PreconditionerError("near-field matrix has empty diagonal entries; "
                                  "try a larger near-field radius")
    return NearFieldPreconditioner(P, time.perf_counter() - t0)


def gmres_solve(apply: Callable, preconditioner, rhs, config: GmresConfig = GmresConfig(),
                raise_on_failure: bool = True, x0=None):
    """Solve ``A y = b`` with GMRES on ``A P^-1 u = b``, ``y = P^-1 u``.

    The reported residual is the true relative residual ``|b - A y| / |b|``.
    """
    b = np.asarray(rhs, complex)
    n = b.size
    prec = preconditioner if preconditioner is not None else IdentityPreconditioner()
    report = SolveReport()
    t0 = time.perf_counter()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        report.converged = True
        report.residual = 0.0
        report.times["iterations"] = 0.0
        return np.zeros(n, complex), report
    y = np.zeros(n, complex) if x0 is None else np.asarray(x0, complex).copy()
    m = min(config.restart, n)
    total = 0
    r = b - apply(y) if x0 is not None else b.copy()
    report.matvecs += int(x0 is not None)
    beta = np.linalg.norm(r)
    report.history.append(beta / bnorm)
    while total < config.maxiter and beta / bnorm > config.tol:
        V = np.zeros((m + 1, n), complex)
        H = np.zeros((m + 1, m), complex)
        cs = np.zeros(m, complex)
        sn = np.zeros(m, complex)
        g = np.zeros(m + 1, complex)
        V[0] = r / beta
        g[0] = beta
        j = 0
        for j in range(m):
            w = apply(prec.solve(V[j]))
            report.matvecs += 1
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = np.vdot(V[i], w)
                w = w - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] != 0:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                tmp = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -np.conj(sn[i]) * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = tmp
            a, c = H[j, j], H[j + 1, j]
            denom = np.sqrt(abs(a) ** 2 + abs(c) ** 2)
            cs[j] = abs(a) / denom if denom else 1.0
            sn[j] = (a / abs(a)) * np.conj(c) / denom if abs(a) else 1.0
            H[j, j] = cs[j] * a + sn[j] * c
            H[j + 1, j] = 0.0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            report.history.append(abs(g[j + 1]) / bnorm)
            if abs(g[j + 1]) / bnorm <= config.tol or total >= config.maxiter:
                break
        k = j + 1
        z = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k else np.zeros(0)
        y = y + prec.solve(z @ V[:k])
        r = b - apply(y)
        report.matvecs += 1
        beta = np.linalg.norm(r)
        if beta / bnorm <= config.tol:
            break
    report.iterations = total
    report.residual = float(beta / bnorm)
    report.converged = report.residual <= config.tol
    report.times["iterations"] = time.perf_counter() - t0
    if not report.converged and raise_on_failure:
        raise ConvergenceError(f"GMRES did not converge in {total} iterations "
                               f"(relative residual {report.residual:.3e})", report.history)
    return y, report
