"""Pure numpy/scipy implementations of the hot kernels.

Same signatures as the compiled ``_kernels`` module; used when the
extension is not built or when selected explicitly.
"""

import numpy as np
from scipy.linalg import lapack


def laplacian(values, spacing, mask):
    v = np.asarray(values)
    out = np.zeros_like(v)
    core = tuple(slice(1, -1) for _ in v.shape)
    for axis, dx in enumerate(spacing):
        hi = list(core)
        lo = list(core)
        hi[axis] = slice(2, None)
        lo[axis] = slice(None, -2)
        out[core] += (v[tuple(hi)] - 2.0 * v[core] + v[tuple(lo)]) / (dx * dx)
    out[~mask] = 0
    return out


def sin_power_quotient(s, p, eps):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    big = s > eps
    sb = s[big]
    out[big] = p * sb ** (p - 2.0) * np.cos(sb**p)
    return out


class Tridiagonal:
    """Factorized tridiagonal matrix (LAPACK ``?gttrf``)."""

    def __init__(self, lower, diag, upper):
        diag = np.asarray(diag)
        complex_ = np.iscomplexobj(diag) or np.iscomplexobj(lower) or np.iscomplexobj(upper)
        dtype = complex if complex_ else float
        self.dtype = dtype
        gttrf, self._gttrs = (
            (lapack.zgttrf, lapack.zgttrs) if complex_ else (lapack.dgttrf, lapack.dgttrs)
        )
        dl, d, du, du2, ipiv, info = gttrf(
            np.asarray(lower, dtype), np.asarray(diag, dtype), np.asarray(upper, dtype)
        )
        if info != 0:
            raise np.linalg.LinAlgError(f"singular tridiagonal matrix (info={info})")
        self._lu = (dl, d, du, du2, ipiv)

    def solve(self, rhs):
        rhs = np.asarray(rhs)
        if self.dtype is float and np.iscomplexobj(rhs):
            return self.solve(rhs.real) + 1j * self.solve(rhs.imag)
        x, info = self._gttrs(*self._lu, np.asarray(rhs, self.dtype))
        return x
