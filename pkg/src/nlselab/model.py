"""Nonlinearity ``W``, potential ``V`` and the admissibility conditions.

Two ``W`` families are built in: ``sin_power`` (``W(s) = sin(|s|**p)``) and
``table`` (a cubic spline through ``(s, W)`` samples on ``s >= 0``, extended
evenly and held constant past the last sample). A third family, ``zero``,
turns the problem into the linear Dirichlet eigenproblem and is meant for
validation runs only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from . import kernels

EPS_QUOT = 1e-12


class ModelError(ValueError):
    """Invalid model parameters or tables."""


def _read_csv_rows(path) -> np.ndarray:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                if rows:
                    raise
                continue  # header line
    return np.asarray(rows, dtype=float)


@dataclass(frozen=True)
class Nonlinearity:
    """Even nonlinearity ``W`` with first and second derivatives.

    Parameters
    ----------
    family : {"sin_power", "table", "zero"}
    p : float
        Growth exponent near zero (``|W'(s)| <= c |s|**(p-1)``).
    table_s, table_w : tuple of float, optional
        Samples for the ``table`` family; ``table_s`` must start at 0 and
        increase strictly.
    """

    family: str = "sin_power"
    p: float = 3.0
    table_s: tuple = ()
    table_w: tuple = ()
    _spline: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in ("sin_power", "table", "zero"):
            raise ModelError(f"unknown W family {self.family!r}")
        if self.family == "table":
            s = np.asarray(self.table_s, dtype=float)
            w = np.asarray(self.table_w, dtype=float)
            if s.ndim != 1 or s.shape != w.shape or len(s) < 4:
                raise ModelError("W table needs at least 4 (s, W) pairs")
            if s[0] != 0.0 or np.any(np.diff(s) <= 0):
                raise ModelError("W table abscissae must start at 0 and increase strictly")
            # zero slope at both ends: even at 0, constant continuation past the end
            spline = CubicSpline(s, w, bc_type=((1, 0.0), (1, 0.0)))
            object.__setattr__(self, "_spline", spline)
            object.__setattr__(self, "table_s", tuple(s))
            object.__setattr__(self, "table_w", tuple(w))

    @classmethod
    def from_table_csv(cls, path, p: float) -> "Nonlinearity":
        data = _read_csv_rows(path)
        if data.ndim != 2 or data.shape[1] != 2:
            raise ModelError(f"{path}: expected two columns s,W")
        return cls("table", p, tuple(data[:, 0]), tuple(data[:, 1]))

    def _spline_eval(self, a, nu):
        s_max = self.table_s[-1]
        inside = a <= s_max
        out = np.empty_like(a)
        out[inside] = self._spline(a[inside], nu)
        out[~inside] = self.table_w[-1] if nu == 0 else 0.0
        return out

    def W(self, s):
        a = np.abs(np.asarray(s, dtype=float))
        if self.family == "sin_power":
            return np.sin(a**self.p)
        if self.family == "zero":
            return np.zeros_like(a)
        return self._spline_eval(a, 0)

    def Wprime(self, s):
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        if self.family == "sin_power":
            return self.p * np.sign(s) * a ** (self.p - 1) * np.cos(a**self.p)
        if self.family == "zero":
            return np.zeros_like(a)
        return np.sign(s) * self._spline_eval(a, 1)

    def Wsecond(self, s):
        a = np.abs(np.asarray(s, dtype=float))
        if self.family == "sin_power":
            p = self.p
            ap = a**p
            return p * (p - 1) * a ** (p - 2) * np.cos(ap) - p * p * a ** (2 * p - 2) * np.sin(ap)
        if self.family == "zero":
            return np.zeros_like(a)
        return self._spline_eval(a, 2)

    def quotient(self, s):
        """``F(s) = W'(s) / s`` for ``s > EPS_QUOT``, zero below."""
        s = np.asarray(s, dtype=float)
        if self.family == "sin_power":
            return kernels.sin_power_quotient(s, float(self.p), EPS_QUOT)
        out = np.zeros_like(s)
        big = s > EPS_QUOT
        out[big] = self.Wprime(s[big]) / s[big]
        return out

    def default_witness(self) -> float | None:
        """A point ``s0`` with ``W(s0) < 0`` if the family has an obvious one."""
        if self.family == "sin_power":
            return (1.5 * math.pi) ** (1.0 / self.p)
        if self.family == "table":
            w = np.asarray(self.table_w)
            i = int(np.argmin(w))
            return self.table_s[i] if w[i] < 0 else None
        return None


@dataclass(frozen=True)
class Potential:
    """Nonnegative external potential.

    Parameters
    ----------
    family : {"zero", "quadratic", "table"}
    v2 : float
        Curvature of the quadratic well ``v2 * |x - center|**2``.
    center : tuple of float
        Well center ``x_V``.
    table_axes, table_values : optional
        Regular grid samples for the ``table`` family.
    """

    family: str = "zero"
    v2: float = 0.0
    center: tuple = ()
    table_axes: tuple = ()
    table_values: object = None
    _interp: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in ("zero", "quadratic", "table"):
            raise ModelError(f"unknown V family {self.family!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.family == "quadratic" and self.v2 < 0:
            raise ModelError(f"quadratic well needs v2 >= 0, got {self.v2}")
        if self.family == "table":
            vals = np.asarray(self.table_values, dtype=float)
            if np.any(vals < 0):
                idx = np.unravel_index(int(np.argmin(vals)), vals.shape)
                raise ModelError(f"V table has a negative entry {vals[idx]} at index {idx}")
            axes = tuple(np.asarray(a, dtype=float) for a in self.table_axes)
            interp = RegularGridInterpolator(axes, vals, method="linear", bounds_error=False,
                                             fill_value=None)
            object.__setattr__(self, "_interp", interp)

    @classmethod
    def from_table_csv(cls, path, dim: int) -> "Potential":
        """Load ``x[,y[,z]],V`` rows sampled on a full tensor grid."""
        data = _read_csv_rows(path)
        if data.ndim != 2 or data.shape[1] != dim + 1:
            raise ModelError(f"{path}: expected {dim + 1} columns")
        axes = tuple(np.unique(data[:, k]) for k in range(dim))
        shape = tuple(len(a) for a in axes)
        if np.prod(shape) != len(data):
            raise ModelError(f"{path}: samples do not form a full tensor grid")
        idx = tuple(np.searchsorted(a, data[:, k]) for k, a in enumerate(axes))
        vals = np.empty(shape)
        vals[idx] = data[:, -1]
        return cls("table", table_axes=axes, table_values=vals)

    def V(self, x):
        """Potential at points ``x`` of shape ``(..., N)``."""
        x = np.asarray(x, dtype=float)
        if self.family == "zero":
            return np.zeros(x.shape[:-1])
        if self.family == "quadratic":
            return self.v2 * np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        return self._interp(x)

    def gradV(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "zero":
            return np.zeros_like(x)
        if self.family == "quadratic":
            return 2.0 * self.v2 * (x - np.asarray(self.center))
        out = np.empty_like(x)
        step = 1e-6
        for k in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[k] = step
            out[..., k] = (self._interp(x + e) - self._interp(x - e)) / (2 * step)
        return out


@dataclass(frozen=True)
class ModelSpec:
    """Full model: nonlinearity, potential and the scalar parameters.

    ``c`` is an optional user-supplied growth constant; when omitted the
    sampled estimate from :func:`validate_conditions` is used.
    """

    W: Nonlinearity = field(default_factory=Nonlinearity)
    V: Potential = field(default_factory=Potential)
    alpha: float = 1.0
    sigma: float = 1.0
    h: float = 1.0
    s0: float | None = None
    c: float | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ModelError(f"alpha must be positive, got {self.alpha}")
        if not self.sigma > 0:
            raise ModelError(f"sigma must be positive, got {self.sigma}")
        if not self.h > 0:
            raise ModelError(f"h must be positive, got {self.h}")
        if self.s0 is None:
            object.__setattr__(self, "s0", self.W.default_witness())

    @property
    def p(self) -> float:
        return self.W.p

    @property
    def beta(self) -> float:
        return 1.0 + self.alpha / 2.0

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)


# thin functional aliases -------------------------------------------------
def eval_W(model: ModelSpec, s):
    return model.W.W(s)


def eval_Wprime(model: ModelSpec, s):
    return model.W.Wprime(s)


def eval_Wsecond(model: ModelSpec, s):
    return model.W.Wsecond(s)


def nonlinear_quotient(model: ModelSpec, s):
    return model.W.quotient(s)


def eval_V(model: ModelSpec, x):
    return model.V.V(x)


def eval_gradV(model: ModelSpec, x):
    return model.V.gradV(x)


# condition report --------------------------------------------------------
@dataclass
class ConditionResult:
    name: str
    passed: bool
    worst_sample: float | None
    detail: str

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed,
                "worst_sample": self.worst_sample, "detail": self.detail}


# which checks each group of experiments relies on
REQUIRED = {
    "ground_state": ("even_bounded", "growth"),
    "evolution": ("even_bounded", "growth", "V_nonnegative"),
    "localization_l2": ("even_bounded", "growth", "negative_witness", "p_range_localization",
                        "V_nonnegative"),
    "localization_h1": ("even_bounded", "growth", "negative_witness", "p_range_localization",
                        "second_derivative_growth", "V_nonnegative"),
}


@dataclass
class ConditionReport:
    results: list
    k_bound: float
    c_estimate: float
    c2_estimate: float

    def __getitem__(self, name) -> ConditionResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def passed(self, purpose: str | None = None) -> bool:
        names = REQUIRED[purpose] if purpose else [r.name for r in self.results]
        return all(self[n].passed for n in names)

    def failures(self, purpose: str | None = None) -> list[ConditionResult]:
        names = REQUIRED[purpose] if purpose else [r.name for r in self.results]
        return [self[n] for n in names if not self[n].passed]

    def as_dict(self) -> dict:
        return {"k_bound": self.k_bound, "c_estimate": self.c_estimate,
                "c2_estimate": self.c2_estimate,
                "conditions": [r.as_dict() for r in self.results]}


def critical_exponent(dim: int) -> float:
    """Sobolev exponent ``2N/(N-2)``; infinite for ``N <= 2``."""
    return math.inf if dim <= 2 else 2.0 * dim / (dim - 2)


def validate_conditions(model: ModelSpec, sample_range: tuple = (-3.0, 3.0),
                        n_samples: int = 2001, dim: int = 1,
                        grid=None) -> ConditionReport:
    """Sample ``W`` (and ``V`` on ``grid`` if given) against the conditions.

    Parameters
    ----------
    model : ModelSpec
    sample_range : (float, float)
        Interval of ``s`` values sampled for ``W``.
    n_samples : int
        Number of samples, at least 100.
    dim : int
        Space dimension ``N`` used for the exponent restrictions.
    grid : Grid, optional
        Interior nodes on which ``V >= 0`` is checked; without a grid the
        check uses the family definition (quadratic and zero wells are
        nonnegative, tables are checked at load time).

    Returns
    -------
    ConditionReport
    """
    if n_samples < 100:
        raise ModelError("validate_conditions needs at least 100 samples")
    lo, hi = sample_range
    s = np.linspace(lo, hi, n_samples)
    Wn = model.W
    p = model.p
    results = []

    w = Wn.W(s)
    asym = np.abs(Wn.W(-s) - w)
    k = float(np.max(np.abs(w)))
    i = int(np.argmax(asym))
    results.append(ConditionResult(
        "even_bounded", bool(asym[i] == 0 and np.isfinite(k)), float(s[i]),
        f"max |W(-s)-W(s)| = {asym[i]:.3g}, k = max|W| = {k:.6g}"))

    nz = np.abs(s) > 1e-8
    ratio = np.abs(Wn.Wprime(s[nz])) / np.abs(s[nz]) ** (p - 1)
    j = int(np.argmax(ratio))
    c_est = float(ratio[j])
    c_bound = model.c if model.c is not None else c_est
    two_star = critical_exponent(dim)
    growth_ok = bool(np.isfinite(c_est) and c_est <= c_bound * (1 + 1e-6) and 2 < p < two_star)
    results.append(ConditionResult(
        "growth", growth_ok, float(s[nz][j]),
        f"|W'(s)|/|s|^(p-1) <= {c_est:.6g}; need 2 < p={p} < 2*={two_star}"))

    if model.s0 is None:
        results.append(ConditionResult("negative_witness", False, None, "no witness s0"))
    else:
        w0 = float(Wn.W(model.s0))
        results.append(ConditionResult("negative_witness", w0 < 0, float(model.s0),
                                       f"W(s0) = {w0:.6g}"))

    upper = 2.0 + 4.0 / dim
    results.append(ConditionResult(
        "p_range_localization", bool(2 < p < upper), float(p),
        f"need 2 < p < 2 + 4/N = {upper:.6g}, have p = {p}"))

    ratio2 = np.abs(Wn.Wsecond(s[nz])) / np.abs(s[nz]) ** (p - 2)
    j2 = int(np.argmax(ratio2))
    c2 = float(ratio2[j2])
    results.append(ConditionResult(
        "second_derivative_growth", bool(np.isfinite(c2)), float(s[nz][j2]),
        f"|W''(s)|/|s|^(p-2) <= {c2:.6g} on the sampled range"))

    if grid is not None:
        vals = model.V.V(grid.points())[grid.mask]
        vmin = float(vals.min()) if vals.size else 0.0
        pts = grid.points()[grid.mask]
        worst = float(np.linalg.norm(pts[int(np.argmin(vals))])) if vals.size else None
        results.append(ConditionResult("V_nonnegative", vmin >= 0, worst,
                                       f"min V on interior nodes = {vmin:.6g}"))
    else:
        results.append(ConditionResult("V_nonnegative", True, None,
                                       f"{model.V.family} family is nonnegative by construction"))
    return ConditionReport(results, k, c_est, c2)
