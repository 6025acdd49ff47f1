"""Solvers for shifted Dirichlet Laplacians ``a (-L) + b + c V``.

On boxes ``-L`` is diagonalized by the type-I sine transform, which gives
exact solves and exact propagators ``f(-L)``; on balls a sparse LU
factorization of the masked stencil is used; 1D boxes with a potential use
a tridiagonal factorization.
"""

from __future__ import annotations

import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .grid import Grid


def box_eigenvalues(grid: Grid) -> np.ndarray:
    """Eigenvalues of ``-L`` on the interior block of a box grid.

    Returns an array of the interior shape with entries
    ``sum_k 4/dx_k^2 sin^2(j_k pi / (2 (m_k + 1)))``.
    """
    parts = []
    for m, dx in zip((n - 2 for n in grid.shape), grid.spacing):
        j = np.arange(1, m + 1)
        parts.append(4.0 / dx**2 * np.sin(j * np.pi / (2 * (m + 1))) ** 2)
    mesh = np.meshgrid(*parts, indexing="ij")
    return sum(mesh)


def neg_laplacian_matrix(grid: Grid) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse ``-L`` restricted to interior nodes and their flat indices."""
    mask = grid.mask
    flat = np.flatnonzero(mask.ravel())
    index = -np.ones(mask.size, dtype=np.int64)
    index[flat] = np.arange(len(flat))
    index = index.reshape(mask.shape)
    rows, cols, vals = [], [], []
    diag = sum(2.0 / dx**2 for dx in grid.spacing)
    ids = np.arange(len(flat))
    rows.append(ids)
    cols.append(ids)
    vals.append(np.full(len(flat), diag))
    pos = np.argwhere(mask)
    for axis, dx in enumerate(grid.spacing):
        for step in (-1, 1):
            nb = pos.copy()
            nb[:, axis] += step
            ok = (nb[:, axis] >= 0) & (nb[:, axis] < grid.shape[axis])
            j = np.full(len(pos), -1)
            j[ok] = index[tuple(nb[ok].T)]
            keep = j >= 0
            rows.append(ids[keep])
            cols.append(j[keep])
            vals.append(np.full(int(keep.sum()), -1.0 / dx**2))
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(flat), len(flat)))
    return A, flat


def _interior_slices(grid: Grid):
    return tuple(slice(1, -1) for _ in grid.shape)


class BoxSpectral:
    """Sine-transform diagonalization of ``-L`` on a box grid."""

    def __init__(self, grid: Grid):
        if grid.domain.kind != "box":
            raise ValueError("sine-transform solver needs a box domain")
        self.grid = grid
        self.mu = box_eigenvalues(grid)
        self._core = _interior_slices(grid)

    def forward(self, values: np.ndarray) -> np.ndarray:
        return scipy.fft.dstn(values[self._core], type=1, norm="ortho")

    def backward(self, coeffs: np.ndarray, dtype=None) -> np.ndarray:
        out = np.zeros(self.grid.shape, dtype=dtype or coeffs.dtype)
        out[self._core] = scipy.fft.idstn(coeffs, type=1, norm="ortho")
        return out

    def apply_multiplier(self, values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
        """Return ``g(-L) values`` for ``multiplier = g(mu)``."""
        coeffs = self.forward(values) * multiplier
        return self.backward(coeffs, dtype=np.result_type(values, multiplier))

    def solve(self, rhs: np.ndarray, a, b) -> np.ndarray:
        """Solve ``(a (-L) + b) x = rhs``."""
        return self.apply_multiplier(rhs, 1.0 / (a * self.mu + b))


class SparseShifted:
    """LU factorization of ``a (-L) + b + diag(c)`` on interior nodes."""

    def __init__(self, grid: Grid, a, b, c_diag: np.ndarray | None = None):
        self.grid = grid
        A, self.flat = neg_laplacian_matrix(grid)
        diag = np.full(len(self.flat), b, dtype=np.result_type(a, b, float))
        if c_diag is not None:
            diag = diag + np.asarray(c_diag).ravel()[self.flat]
        M = (a * A + sp.diags(diag)).tocsc()
        self._lu = spla.splu(M)
        self._dtype = M.dtype

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        r = np.asarray(rhs).ravel()[self.flat]
        if not np.iscomplexobj(self._dtype.type(0)) and np.iscomplexobj(r):
            x = self._lu.solve(np.ascontiguousarray(r.real)) + 1j * self._lu.solve(
                np.ascontiguousarray(r.imag))
        else:
            x = self._lu.solve(r.astype(np.result_type(r, self._dtype)))
        out = np.zeros(self.grid.shape, dtype=x.dtype)
        out.ravel()[self.flat] = x
        return out


class TridiagonalShifted:
    """``a (-L) + b + diag(c)`` on a 1D box, factorized once."""

    def __init__(self, grid: Grid, a, b, c_diag: np.ndarray | None = None):
        if grid.dim != 1 or grid.domain.kind != "box":
            raise ValueError("tridiagonal solver needs a 1D box")
        self.grid = grid
        m = grid.shape[0] - 2
        dx = grid.spacing[0]
        diag = np.full(m, 2.0 * a / dx**2 + b, dtype=np.result_type(a, b, float))
        if c_diag is not None:
            diag = diag + np.asarray(c_diag)[1:-1]
        off = np.full(m - 1, -a / dx**2, dtype=np.result_type(a, float))
        self._tri = kernels.Tridiagonal(off, diag, off)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = self._tri.solve(np.asarray(rhs)[1:-1])
        out = np.zeros(self.grid.shape, dtype=x.dtype)
        out[1:-1] = x
        return out


def shifted_solver(grid: Grid, a, b):
    """A callable ``rhs -> (a (-L) + b)^{-1} rhs`` for any supported grid."""
    if grid.domain.kind == "box":
        spec = BoxSpectral(grid)
        inv = 1.0 / (a * spec.mu + b)
        return lambda rhs: spec.apply_multiplier(rhs, inv)
    return SparseShifted(grid, a, b).solve
