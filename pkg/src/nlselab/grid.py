"""Bounded domains, uniform Cartesian grids and Dirichlet finite differences.

Fields live on the full node array of a grid; every node outside the
interior mask holds an exact zero, which is the discrete homogeneous
Dirichlet condition (zero ghost extension). The compact ``2N+1`` point
Laplacian is paired with the edge-based Dirichlet form
:func:`dirichlet_form` so that summation by parts holds exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels

MAX_DIM = 3
MIN_NODES = 8
_BALL_EPS = 1e-12


class GridError(ValueError):
    """Raised for invalid domain or grid construction."""


@dataclass(frozen=True)
class DomainSpec:
    """A box or a ball in R^N.

    Parameters
    ----------
    kind : {"box", "ball"}
    center : tuple of float
    half_widths : tuple of float, optional
        Box half widths, one per axis.
    radius : float, optional
        Ball radius.
    """

    kind: str
    center: tuple
    half_widths: tuple | None = None
    radius: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.kind == "box":
            if self.half_widths is None or len(self.half_widths) != len(self.center):
                raise GridError("box needs one half width per axis")
            hw = tuple(float(w) for w in self.half_widths)
            if min(hw) <= 0:
                raise GridError(f"box half widths must be positive, got {hw}")
            object.__setattr__(self, "half_widths", hw)
        elif self.kind == "ball":
            if self.radius is None or not self.radius > 0:
                raise GridError(f"ball radius must be positive, got {self.radius}")
            object.__setattr__(self, "radius", float(self.radius))
        else:
            raise GridError(f"unknown domain kind {self.kind!r}")
        if not 1 <= self.dim:
            raise GridError("domain needs at least one axis")

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "DomainSpec":
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape:
            raise GridError("lower and upper corners differ in dimension")
        return cls("box", tuple((lo + hi) / 2), half_widths=tuple((hi - lo) / 2))

    @classmethod
    def ball(cls, center: Sequence[float], radius: float) -> "DomainSpec":
        return cls("ball", tuple(np.atleast_1d(center)), radius=radius)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def bounds(self) -> list[tuple[float, float]]:
        """Per-axis extent of the closure."""
        if self.kind == "box":
            return [(c - w, c + w) for c, w in zip(self.center, self.half_widths)]
        return [(c - self.radius, c + self.radius) for c in self.center]

    @property
    def diameter(self) -> float:
        if self.kind == "box":
            return 2.0 * float(np.linalg.norm(self.half_widths))
        return 2.0 * self.radius

    def contains_origin(self) -> bool:
        c = np.asarray(self.center)
        if self.kind == "box":
            return bool(np.all(np.abs(c) < np.asarray(self.half_widths)))
        return bool(np.linalg.norm(c) < self.radius)

    def scaled(self, factor: float) -> "DomainSpec":
        """Image of the domain under ``x -> factor * x`` (about the origin)."""
        if not factor > 0:
            raise GridError("scale factor must be positive")
        center = tuple(factor * c for c in self.center)
        if self.kind == "box":
            return DomainSpec("box", center, half_widths=tuple(factor * w for w in self.half_widths))
        return DomainSpec("ball", center, radius=factor * self.radius)


def inflate_domain(domain: DomainSpec, h: float, alpha: float) -> DomainSpec:
    """Return ``{x : h**beta * x in domain}`` with ``beta = 1 + alpha / 2``."""
    if not 0 < h < 1:
        raise GridError(f"inflation needs 0 < h < 1, got h={h}")
    if not alpha > 0:
        raise GridError(f"alpha must be positive, got {alpha}")
    beta = 1.0 + alpha / 2.0
    return domain.scaled(h ** (-beta))


class Grid:
    """Uniform node grid covering the closure of a domain.

    Nodes are ``lo + i * dx`` for ``i = 0 .. n-1`` on every axis; arrays use
    ``ij`` indexing so axis ``k`` of a field is coordinate ``x_k``.
    """

    def __init__(self, domain: DomainSpec, nodes_per_axis):
        n = np.broadcast_to(np.asarray(nodes_per_axis, dtype=int), (domain.dim,))
        if domain.dim > MAX_DIM:
            raise GridError(f"N={domain.dim} exceeds the supported maximum of {MAX_DIM}")
        if np.any(n < MIN_NODES):
            raise GridError(f"need at least {MIN_NODES} nodes per axis, got {tuple(n)}")
        self.domain = domain
        self.shape = tuple(int(k) for k in n)
        self.axes = [np.linspace(lo, hi, k) for (lo, hi), k in zip(domain.bounds, self.shape)]
        self.spacing = tuple((hi - lo) / (k - 1) for (lo, hi), k in zip(domain.bounds, self.shape))
        self.cell_volume = float(np.prod(self.spacing))
        if domain.kind == "box":
            mask = np.zeros(self.shape, dtype=bool)
            mask[tuple(slice(1, -1) for _ in self.shape)] = True
        else:
            r2 = sum((X - c) ** 2 for X, c in zip(self.coords, domain.center))
            mask = r2 < domain.radius**2 * (1.0 - _BALL_EPS)
        mask.setflags(write=False)
        self.mask = mask
        self._faces = None

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def coords(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    @property
    def n_interior(self) -> int:
        return int(self.mask.sum())

    def points(self) -> np.ndarray:
        """Node coordinates as an array of shape ``shape + (N,)``."""
        return np.stack(self.coords, axis=-1)

    def same_as(self, other: "Grid") -> bool:
        return self is other or (
            self.domain == other.domain and self.shape == other.shape
        )

    def field(self, values, dtype=None) -> "Field":
        return Field(self, values, dtype=dtype)

    def sample(self, func: Callable, dtype=None) -> "Field":
        """Evaluate ``func(*coords)`` on the nodes and impose the zero trace."""
        return Field(self, func(*self.coords), dtype=dtype)

    def zeros(self, dtype=float) -> "Field":
        return Field(self, np.zeros(self.shape, dtype=dtype))

    def __repr__(self):
        return f"Grid({self.domain.kind}, N={self.dim}, shape={self.shape}, dx={self.spacing})"

    # boundary faces ------------------------------------------------------
    def boundary_faces(self):
        """Faces between an interior node and a non-interior neighbour.

        Returns a tuple ``(interior_index, inward_index, axis, sign, area)``
        of arrays: ``interior_index`` is the flat index of the interior node
        next to the boundary, ``inward_index`` the flat index one further
        step into the domain (``-1`` if it leaves the array), ``sign`` the
        component of the inward unit normal along ``axis``.
        """
        if self._faces is None:
            rows = []
            flat_mask = self.mask
            for axis in range(self.dim):
                area = self.cell_volume / self.spacing[axis]
                for sign in (+1, -1):
                    # boundary neighbour sits at index i - sign along axis
                    shifted = np.zeros(self.shape, dtype=bool)
                    src = [slice(None)] * self.dim
                    dst = [slice(None)] * self.dim
                    if sign > 0:
                        dst[axis], src[axis] = slice(1, None), slice(None, -1)
                    else:
                        dst[axis], src[axis] = slice(None, -1), slice(1, None)
                    shifted[tuple(dst)] = flat_mask[tuple(src)]
                    exposed = flat_mask & ~shifted
                    idx = np.argwhere(exposed)
                    inward = idx.copy()
                    inward[:, axis] += sign
                    ok = (inward[:, axis] >= 0) & (inward[:, axis] < self.shape[axis])
                    flat_inward = np.full(len(idx), -1)
                    flat_inward[ok] = np.ravel_multi_index(inward[ok].T, self.shape)
                    rows.append((
                        np.ravel_multi_index(idx.T, self.shape) if len(idx) else np.zeros(0, int),
                        flat_inward,
                        np.full(len(idx), axis),
                        np.full(len(idx), sign),
                        np.full(len(idx), area),
                    ))
            self._faces = tuple(np.concatenate(col) for col in zip(*rows))
        return self._faces


def build_grid(domain: DomainSpec, nodes_per_axis) -> Grid:
    """Build the uniform grid with ``nodes_per_axis`` nodes along every axis."""
    return Grid(domain, nodes_per_axis)


def build_grid_spacing(domain: DomainSpec, dx: float) -> Grid:
    """Build a grid with (approximately) fixed spacing ``dx`` on every axis.

    The node count is rounded so that nested boxes/balls sharing a center
    share node positions whenever their extents are multiples of ``dx``.
    """
    n = [int(round((hi - lo) / dx)) + 1 for lo, hi in domain.bounds]
    return Grid(domain, n)


def transfer(f: "Field", target: Grid, scale: float = 1.0) -> "Field":
    """Copy node values of ``f`` onto ``target`` where node positions match.

    A node ``y`` of ``target`` receives the value at the node ``x`` of the
    source grid with ``x * scale == y``; unmatched nodes get zero. Used for
    zero-extension and restriction between nested grids of equal spacing
    (``scale=1``) and for node-to-node rescaling between a domain and its
    inflated copy (``scale = h**beta``).
    """
    src = f.grid
    if src.dim != target.dim:
        raise GridError("grids differ in dimension")
    out = np.zeros(target.shape, dtype=f.values.dtype)
    src_sel, dst_sel = [], []
    for k in range(src.dim):
        xs = src.axes[k] * scale
        ys = target.axes[k]
        tol = 1e-9 * target.spacing[k]
        j = np.clip(np.searchsorted(xs, ys), 1, len(xs) - 1)
        near = np.where(np.abs(xs[j - 1] - ys) <= np.abs(xs[j] - ys), j - 1, j)
        ok = np.abs(xs[near] - ys) <= tol
        src_sel.append(near[ok])
        dst_sel.append(np.flatnonzero(ok))
    block = f.values[np.ix_(*src_sel)]
    out[np.ix_(*dst_sel)] = block
    return Field(target, out)


class Field:
    """Immutable node samples of a real or complex scalar with zero trace."""

    __array_priority__ = 100

    def __init__(self, grid: Grid, values, dtype=None):
        arr = np.array(np.broadcast_to(values, grid.shape), dtype=dtype, copy=True)
        if not np.issubdtype(arr.dtype, np.inexact):
            arr = arr.astype(float)
        arr[~grid.mask] = 0
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def _check(self, other):
        if isinstance(other, Field):
            if not self.grid.same_as(other.grid):
                raise GridError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._check(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._check(other))

    def __rsub__(self, other):
        return Field(self.grid, self._check(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._check(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._check(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __abs__(self):
        return Field(self.grid, np.abs(self.values))

    def conj(self):
        return Field(self.grid, np.conj(self.values))

    @property
    def real(self):
        return Field(self.grid, self.values.real)

    @property
    def imag(self):
        return Field(self.grid, self.values.imag)

    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.mask]

    def __repr__(self):
        kind = "complex" if self.is_complex else "real"
        return f"Field({kind}, {self.grid!r})"


def _values(f):
    return f.values if isinstance(f, Field) else np.asarray(f)


def integrate(f) -> float | complex:
    """Riemann sum ``prod(dx) * sum_interior f`` matched to the stencil."""
    if isinstance(f, Field):
        return f.grid.cell_volume * f.values.sum()
    raise TypeError("integrate expects a Field")


def laplacian(f: Field) -> Field:
    """Compact ``2N+1`` point Laplacian with zero Dirichlet extension."""
    return Field(f.grid, kernels.laplacian(f.values, f.grid.spacing, f.grid.mask))


def gradient(f: Field) -> list[Field]:
    """Second order central differences at interior nodes."""
    g = f.grid
    out = []
    v = f.values
    for axis, dx in enumerate(g.spacing):
        d = np.zeros_like(v)
        hi = [slice(None)] * g.dim
        lo = [slice(None)] * g.dim
        mid = [slice(None)] * g.dim
        hi[axis], lo[axis], mid[axis] = slice(2, None), slice(None, -2), slice(1, -1)
        d[tuple(mid)] = (v[tuple(hi)] - v[tuple(lo)]) / (2.0 * dx)
        out.append(Field(g, d))
    return out


def forward_differences(v: np.ndarray, spacing) -> list[np.ndarray]:
    """Edge differences ``(v[i+1] - v[i]) / dx`` along every axis, zero padded."""
    out = []
    for axis, dx in enumerate(spacing):
        out.append(np.diff(v, axis=axis) / dx)
    return out


def dirichlet_form(f: Field, g: Field | None = None) -> float:
    """Edge quadrature of ``Re int conj(grad f) . grad g``.

    Paired with :func:`laplacian` and :func:`integrate` this satisfies
    ``integrate(-laplacian(f) * g) == dirichlet_form(f, g)`` up to rounding.
    """
    grid = f.grid
    df = forward_differences(f.values, grid.spacing)
    if g is None:
        total = sum(float(np.sum(np.abs(d) ** 2)) for d in df)
    else:
        if not grid.same_as(g.grid):
            raise GridError("fields live on different grids")
        dg = forward_differences(g.values, grid.spacing)
        total = sum(float(np.real(np.sum(np.conj(a) * b))) for a, b in zip(df, dg))
    return grid.cell_volume * total


def boundary_flux_samples(f: Field, scheme: str = "edge"):
    """Normal-derivative samples on every boundary face.

    Parameters
    ----------
    scheme : {"edge", "one_sided2"}
        ``"edge"`` uses the difference across the boundary edge, ``f_1 / dx``,
        which is the flux that appears in the exact discrete momentum balance
        of the edge Laplacian. ``"one_sided2"`` is the second order one-sided
        estimate ``(4 f_1 - f_2) / (2 dx)`` of the continuum derivative.

    Returns
    -------
    area : ndarray, shape (F,)
        Surface element of each face.
    normal : ndarray, shape (F, N)
        Inward unit normal.
    grad_sq : ndarray, shape (F,)
        Estimate of ``|grad f|^2`` at the face; the tangential derivative
        vanishes because ``f`` is zero on the boundary.
    """
    grid = f.grid
    interior, inward, axis, sign, area = grid.boundary_faces()
    flat = f.values.ravel()
    f1 = flat[interior]
    dx = np.asarray(grid.spacing)[axis]
    if scheme == "edge":
        dn = f1 / dx
    elif scheme == "one_sided2":
        f2 = np.where(inward >= 0, flat[np.maximum(inward, 0)], 0.0)
        dn = (4.0 * f1 - f2) / (2.0 * dx)
    else:
        raise ValueError(f"unknown flux scheme {scheme!r}")
    normal = np.zeros((len(interior), grid.dim))
    normal[np.arange(len(interior)), axis] = sign
    return area, normal, np.abs(dn) ** 2


# dumps -------------------------------------------------------------------
_MAGIC = b"NLSEGRID"
_VERSION = 1


def field_to_csv(f: Field, path) -> None:
    """Write ``x[,y[,z]],value`` rows (row-major, ``ij`` axis order)."""
    grid = f.grid
    names = ["x", "y", "z"][: grid.dim]
    cols = [c.ravel() for c in grid.coords]
    vals = f.values.ravel()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if f.is_complex:
            fh.write(",".join(names + ["value_re", "value_im"]) + "\n")
            for row in zip(*cols, vals.real, vals.imag):
                fh.write(",".join(format_real(v) for v in row) + "\n")
        else:
            fh.write(",".join(names + ["value"]) + "\n")
            for row in zip(*cols, vals):
                fh.write(",".join(format_real(v) for v in row) + "\n")


def field_to_binary(f: Field, path) -> None:
    """Binary dump: 16 byte header (magic, version, N, nodes/axis) + float64 data."""
    grid = f.grid
    if len(set(grid.shape)) != 1:
        raise GridError("binary dump needs the same node count on every axis")
    header = _MAGIC + struct.pack("<BBHI", _VERSION, grid.dim, int(f.is_complex), grid.shape[0])
    with open(path, "wb") as fh:
        fh.write(header)
        data = f.values
        if f.is_complex:
            data = np.stack([data.real, data.imag], axis=-1)
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_binary_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(16)
    if head[:8] != _MAGIC:
        raise GridError("not a NLSEGRID dump")
    version, dim, is_complex, n = struct.unpack("<BBHI", head[8:])
    return {"version": version, "dim": dim, "complex": bool(is_complex), "nodes_per_axis": n}


def format_real(v) -> str:
    """17 significant digits, '.' decimal separator, locale independent."""
    return format(float(v), ".17g")
