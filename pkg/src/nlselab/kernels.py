"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy/scipy
fallback takes over. :func:`use_backend` switches explicitly (tests and the
benchmark compare both).
"""

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
_active = _BACKENDS[BACKEND]


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def use_backend(name: str) -> str:
    """Select ``"python"`` or ``"cython"``; returns the previous backend name."""
    global _active, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    previous = BACKEND
    BACKEND, _active = name, _BACKENDS[name]
    return previous


def laplacian(values, spacing, mask):
    return _active.laplacian(values, spacing, mask)


def sin_power_quotient(s, p, eps):
    return _active.sin_power_quotient(s, p, eps)


def Tridiagonal(lower, diag, upper):
    return _active.Tridiagonal(lower, diag, upper)
