import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlselab import _kernels_py, kernels
from nlselab.grid import DomainSpec, build_grid
from nlselab.ground_state import GroundStateOptions, minimize_on_sphere

compiled = pytest.mark.skipif("cython" not in kernels.available_backends(),
                              reason="compiled extension not built")


@pytest.fixture
def restore_backend():
    previous = kernels.BACKEND
    yield
    kernels.use_backend(previous)


def _compiled():
    from nlselab import _kernels
    return _kernels


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_switch_returns_previous(restore_backend):
    before = kernels.BACKEND
    assert kernels.use_backend("python") == before
    assert kernels.BACKEND == "python"


@compiled
@settings(max_examples=40, deadline=None)
@given(dim=st.integers(1, 3), seed=st.integers(0, 2**31), cplx=st.booleans())
def test_laplacian_parity(dim, seed, cplx):
    r = np.random.default_rng(seed)
    shape = tuple(int(n) for n in r.integers(3, 12, dim))
    v = r.normal(size=shape)
    if cplx:
        v = v + 1j * r.normal(size=shape)
    spacing = tuple(r.uniform(0.01, 1.0, dim))
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(slice(1, -1) for _ in shape)] = True
    mask &= r.random(shape) < 0.8
    a = _kernels_py.laplacian(v, spacing, mask)
    b = _compiled().laplacian(v, spacing, mask)
    npt.assert_allclose(b, a, rtol=1e-13, atol=1e-13 * np.abs(a).max())


@compiled
@settings(max_examples=40, deadline=None)
@given(p=st.floats(2.1, 6.0), seed=st.integers(0, 2**31))
def test_quotient_parity(p, seed):
    s = np.abs(np.random.default_rng(seed).normal(size=200)) * 2
    s[:3] = [0.0, 1e-9, 1e-7]
    a = _compiled().sin_power_quotient(s, p, 1e-8)
    b = _kernels_py.sin_power_quotient(s, p, 1e-8)
    assert a[0] == b[0] == 0.0 and a[1] == b[1] == 0.0
    # cos(s**p) carries the rounding of s**p, amplified by the argument size
    bound = 1e-14 * p * s ** (p - 2) * (1 + s**p)
    assert np.all(np.abs(a - b) <= bound)


@compiled
@settings(max_examples=30, deadline=None)
@given(n=st.integers(3, 200), seed=st.integers(0, 2**31), cplx=st.booleans())
def test_tridiagonal_parity(n, seed, cplx):
    r = np.random.default_rng(seed)
    lower, upper = r.normal(size=n - 1), r.normal(size=n - 1)
    diag = 4.0 + np.abs(r.normal(size=n))
    if cplx:
        diag = diag + 1j * r.normal(size=n)
    rhs = r.normal(size=n) + 1j * r.normal(size=n)
    a = _kernels_py.Tridiagonal(lower, diag, upper).solve(rhs)
    b = _compiled().Tridiagonal(lower, diag, upper).solve(rhs)
    npt.assert_allclose(b, a, rtol=1e-11, atol=1e-12)
    dense = np.diag(diag) + np.diag(lower, -1) + np.diag(upper, 1)
    npt.assert_allclose(dense @ b, rhs, atol=1e-10)


@compiled
def test_ground_state_backend_independent(sin3, restore_backend):
    g = build_grid(DomainSpec.box([-1.0, -1.0], [1.0, 1.0]), 31)
    opts = GroundStateOptions(tol_res=1e-10, n_starts=2)
    out = {}
    for name in ("python", "cython"):
        kernels.use_backend(name)
        out[name] = minimize_on_sphere(sin3, g, 1.0, opts)
    npt.assert_allclose(out["cython"].m_value, out["python"].m_value, rtol=1e-12)
    npt.assert_allclose(out["cython"].u.values, out["python"].u.values, atol=1e-9)
