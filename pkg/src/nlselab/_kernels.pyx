# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: Dirichlet Laplacian, sin-power quotient, Thomas solve."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, pow

cnp.import_array()

ctypedef fused scalar:
    double
    double complex


cdef void _lap1(const scalar[:] v, scalar[:] out, double c0) noexcept nogil:
    cdef Py_ssize_t i, n = v.shape[0]
    for i in range(1, n - 1):
        out[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) * c0


cdef void _lap2(const scalar[:, :] v, scalar[:, :] out, double c0, double c1) noexcept nogil:
    cdef Py_ssize_t i, j, n0 = v.shape[0], n1 = v.shape[1]
    for i in range(1, n0 - 1):
        for j in range(1, n1 - 1):
            out[i, j] = ((v[i + 1, j] - 2.0 * v[i, j] + v[i - 1, j]) * c0
                         + (v[i, j + 1] - 2.0 * v[i, j] + v[i, j - 1]) * c1)


cdef void _lap3(const scalar[:, :, :] v, scalar[:, :, :] out,
                double c0, double c1, double c2) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t n0 = v.shape[0], n1 = v.shape[1], n2 = v.shape[2]
    for i in range(1, n0 - 1):
        for j in range(1, n1 - 1):
            for k in range(1, n2 - 1):
                out[i, j, k] = ((v[i + 1, j, k] - 2.0 * v[i, j, k] + v[i - 1, j, k]) * c0
                                + (v[i, j + 1, k] - 2.0 * v[i, j, k] + v[i, j - 1, k]) * c1
                                + (v[i, j, k + 1] - 2.0 * v[i, j, k] + v[i, j, k - 1]) * c2)


def _laplacian_typed(const scalar[::1] flat_v, scalar[::1] flat_out, tuple shape, spacing):
    cdef double c0, c1 = 0.0, c2 = 0.0
    cdef const scalar[:] v1
    cdef scalar[:] o1
    cdef const scalar[:, :] v2
    cdef scalar[:, :] o2
    cdef const scalar[:, :, :] v3
    cdef scalar[:, :, :] o3
    arr_v = np.asarray(flat_v).reshape(shape)
    arr_o = np.asarray(flat_out).reshape(shape)
    c0 = 1.0 / (spacing[0] * spacing[0])
    if len(shape) > 1:
        c1 = 1.0 / (spacing[1] * spacing[1])
    if len(shape) > 2:
        c2 = 1.0 / (spacing[2] * spacing[2])
    if len(shape) == 1:
        v1 = arr_v
        o1 = arr_o
        with nogil:
            _lap1(v1, o1, c0)
    elif len(shape) == 2:
        v2 = arr_v
        o2 = arr_o
        with nogil:
            _lap2(v2, o2, c0, c1)
    else:
        v3 = arr_v
        o3 = arr_o
        with nogil:
            _lap3(v3, o3, c0, c1, c2)


def laplacian(values, spacing, mask):
    v = np.ascontiguousarray(values)
    if v.dtype != np.float64 and v.dtype != np.complex128:
        v = v.astype(np.complex128 if np.iscomplexobj(v) else np.float64)
    out = np.zeros_like(v)
    _laplacian_typed(v.ravel(), out.ravel(), v.shape, tuple(spacing))
    out[~np.asarray(mask)] = 0
    return out


def sin_power_quotient(s, double p, double eps):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(s, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.zeros_like(flat)
    cdef const double[::1] sv = flat
    cdef double[::1] ov = out
    cdef Py_ssize_t i, n = flat.shape[0]
    cdef double x, xp
    with nogil:
        for i in range(n):
            x = sv[i]
            if x > eps:
                xp = pow(x, p)
                ov[i] = p * (xp / (x * x)) * cos(xp)
    return out.reshape(np.shape(s))


cdef Py_ssize_t _thomas_factor(const scalar[::1] a, const scalar[::1] c, const scalar[::1] d,
                               scalar[::1] cp, scalar[::1] denom) noexcept nogil:
    # returns the index of a zero pivot, or -1
    cdef Py_ssize_t i, n = d.shape[0]
    denom[0] = d[0]
    if denom[0] == 0:
        return 0
    cp[0] = c[0] / denom[0]
    for i in range(1, n):
        denom[i] = d[i] - a[i] * cp[i - 1]
        if denom[i] == 0:
            return i
        cp[i] = c[i] / denom[i]
    return -1


def _factor_real(const double[::1] a, const double[::1] c, const double[::1] d,
                 double[::1] cp, double[::1] denom):
    cdef Py_ssize_t bad
    with nogil:
        bad = _thomas_factor(a, c, d, cp, denom)
    return bad


def _factor_complex(const double complex[::1] a, const double complex[::1] c,
                    const double complex[::1] d, double complex[::1] cp, double complex[::1] denom):
    cdef Py_ssize_t bad
    with nogil:
        bad = _thomas_factor(a, c, d, cp, denom)
    return bad


cdef void _thomas_solve(const scalar[::1] a, const scalar[::1] cp, const scalar[::1] denom,
                        const scalar[::1] rhs, scalar[::1] x) noexcept nogil:
    # forward sweep with precomputed modified coefficients, then back substitution
    cdef Py_ssize_t i, n = rhs.shape[0]
    x[0] = rhs[0] / denom[0]
    for i in range(1, n):
        x[i] = (rhs[i] - a[i] * x[i - 1]) / denom[i]
    for i in range(n - 2, -1, -1):
        x[i] = x[i] - cp[i] * x[i + 1]


def _solve_real(const double[::1] a, const double[::1] cp, const double[::1] denom,
                const double[::1] rhs, double[::1] x):
    with nogil:
        _thomas_solve(a, cp, denom, rhs, x)


def _solve_complex(const double complex[::1] a, const double complex[::1] cp,
                   const double complex[::1] denom,
                   const double complex[::1] rhs, double complex[::1] x):
    with nogil:
        _thomas_solve(a, cp, denom, rhs, x)


cdef class Tridiagonal:
    """Thomas factorization of a diagonally dominant tridiagonal matrix."""

    cdef public object dtype
    cdef object _a, _cp, _denom

    def __init__(self, lower, diag, upper):
        complex_ = np.iscomplexobj(diag) or np.iscomplexobj(lower) or np.iscomplexobj(upper)
        self.dtype = complex if complex_ else float
        d = np.ascontiguousarray(diag, dtype=self.dtype)
        n = d.shape[0]
        a = np.zeros(n, dtype=self.dtype)
        a[1:] = np.asarray(lower, dtype=self.dtype)
        c = np.zeros(n, dtype=self.dtype)
        c[:-1] = np.asarray(upper, dtype=self.dtype)
        cp = np.zeros(n, dtype=self.dtype)
        denom = np.zeros(n, dtype=self.dtype)
        factor = _factor_real if self.dtype is float else _factor_complex
        if factor(a, c, d, cp, denom) >= 0:
            raise np.linalg.LinAlgError("zero pivot in tridiagonal factorization")
        self._a, self._cp, self._denom = a, cp, denom

    def solve(self, rhs):
        r = np.ascontiguousarray(rhs)
        if self.dtype is float:
            if np.iscomplexobj(r):
                return self.solve(r.real) + 1j * self.solve(r.imag)
            r = r.astype(np.float64, copy=False)
            x = np.empty_like(r)
            _solve_real(self._a, self._cp, self._denom, r, x)
        else:
            r = r.astype(np.complex128, copy=False)
            x = np.empty_like(r)
            _solve_complex(self._a, self._cp, self._denom, r, x)
        return x
