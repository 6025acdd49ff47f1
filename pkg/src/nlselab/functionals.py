"""Integral diagnostics: charge, actions, energy, barycenter, localization
ratios, momentum and the two force terms of the barycenter equation.

Gradient energies use the edge form :func:`~nlselab.grid.dirichlet_form`,
so that the gradient of every action below is exactly the discrete
Euler-Lagrange operator built from :func:`~nlselab.grid.laplacian`.
Pointwise vector quantities (momentum density, kinetic phase density) use
the central differences of :func:`~nlselab.grid.gradient`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Field, GridError, dirichlet_form, gradient, integrate, boundary_flux_samples
from .model import EPS_QUOT, ModelSpec


def _beta(alpha: float) -> float:
    return 1.0 + alpha / 2.0


def charge(psi: Field) -> float:
    """``int |psi|^2``."""
    return float(np.real(integrate(abs(psi) * abs(psi))))


def charge_h(psi: Field, h: float, alpha: float) -> float:
    """Scaled charge ``h**(-N beta) int |psi|^2``."""
    return h ** (-psi.grid.dim * _beta(alpha)) * charge(psi)


@dataclass(frozen=True)
class ActionScaling:
    """Coefficients of ``measure * int (kin/2 |grad u|^2 + pot W(u))``.

    ``ActionScaling()`` is the plain action ``J``; :meth:`semiclassical`
    gives ``J_h`` and ``measure=1`` in it gives the internal energy.
    """

    kin: float = 1.0
    pot: float = 1.0
    measure: float = 1.0

    @classmethod
    def semiclassical(cls, h: float, alpha: float, dim: int, scaled_measure: bool = True):
        measure = h ** (-dim * _beta(alpha)) if scaled_measure else 1.0
        return cls(kin=h * h, pot=h ** (-alpha), measure=measure)


def scaled_action(u: Field, model: ModelSpec, scaling: ActionScaling) -> float:
    kinetic = 0.5 * scaling.kin * dirichlet_form(u)
    potential = scaling.pot * float(integrate(Field(u.grid, model.W.W(u.values))))
    return scaling.measure * (kinetic + potential)


def action_J(u: Field, model: ModelSpec) -> float:
    """``J(u) = int (|grad u|^2 / 2 + W(u))``."""
    return scaled_action(u, model, ActionScaling())


def action_J_h(u: Field, model: ModelSpec, h: float | None = None) -> float:
    """``J_h(u) = h**(-N beta) int (h^2/2 |grad u|^2 + h**(-alpha) W(u))``."""
    h = model.h if h is None else h
    return scaled_action(u, model, ActionScaling.semiclassical(h, model.alpha, u.grid.dim))


def internal_energy_Jtilde_h(u: Field, model: ModelSpec, h: float | None = None) -> float:
    """``int (h^2/2 |grad u|^2 + h**(-alpha) W(u))`` without the measure factor."""
    h = model.h if h is None else h
    return scaled_action(u, model,
                         ActionScaling.semiclassical(h, model.alpha, u.grid.dim, scaled_measure=False))


def potential_values(grid, model: ModelSpec) -> np.ndarray:
    """``V`` sampled on the nodes, zero outside the interior."""
    v = np.asarray(model.V.V(grid.points()), dtype=float)
    v = np.broadcast_to(v, grid.shape).copy()
    v[~grid.mask] = 0.0
    return v


def total_energy(psi: Field, model: ModelSpec, h: float | None = None,
                 v_values: np.ndarray | None = None) -> float:
    """``E = int (h^2/2 |grad psi|^2 + h**(-alpha) W(|psi|) + V |psi|^2)``.

    ``v_values`` may pass precomputed nodal ``V`` to avoid re-evaluation.
    """
    h = model.h if h is None else h
    grid = psi.grid
    a = np.abs(psi.values)
    kinetic = 0.5 * h * h * dirichlet_form(psi)
    pot = h ** (-model.alpha) * grid.cell_volume * float(np.sum(model.W.W(a)[grid.mask]))
    if v_values is None and model.V.family == "zero":
        ext = 0.0
    else:
        v = potential_values(grid, model) if v_values is None else v_values
        ext = grid.cell_volume * float(np.sum(v * a * a))
    return kinetic + pot + ext


def barycenter(psi: Field) -> np.ndarray:
    """``q = int x |psi|^2 / int |psi|^2``."""
    rho = np.abs(psi.values) ** 2
    total = rho.sum()
    if not total > 0:
        raise GridError("barycenter of a zero-charge field is undefined")
    return np.array([float(np.sum(X * rho) / total) for X in psi.grid.coords])


def _inside(grid, center, radius) -> np.ndarray:
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    r2 = sum((X - ck) ** 2 for X, ck in zip(grid.coords, c))
    return r2 < radius * radius


def mass_inside_ball(psi: Field, center, radius: float, h: float = 1.0, alpha: float = 0.0) -> float:
    rho = np.abs(psi.values) ** 2
    scale = h ** (-psi.grid.dim * _beta(alpha))
    return scale * psi.grid.cell_volume * float(np.sum(rho[_inside(psi.grid, center, radius)]))


def mass_outside_ball(psi: Field, center, radius: float, h: float = 1.0, alpha: float = 0.0) -> float:
    """``h**(-N beta) int_{Omega minus B(center, radius)} |psi|^2``.

    A node belongs to the ball iff its own position lies strictly inside,
    so inside and outside masses partition the scaled charge exactly.
    """
    rho = np.abs(psi.values) ** 2
    scale = h ** (-psi.grid.dim * _beta(alpha))
    return scale * psi.grid.cell_volume * float(np.sum(rho[~_inside(psi.grid, center, radius)]))


def modulus_gradient_density(psi: Field) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Edge densities ``|D_k |psi||^2`` and the edge midpoint coordinates.

    Returns per axis the squared forward difference of ``|psi|`` on every
    edge together with the coordinates of the edge midpoints, so that
    ``cell_volume * sum(density) == dirichlet_form(|psi|)``.
    """
    grid = psi.grid
    u = np.abs(psi.values)
    dens, mids = [], []
    coords = grid.coords
    for axis, dx in enumerate(grid.spacing):
        d = np.diff(u, axis=axis) / dx
        dens.append(d * d)
        lo = [slice(None)] * grid.dim
        lo[axis] = slice(None, -1)
        mid = []
        for k, X in enumerate(coords):
            Xs = X[tuple(lo)]
            mid.append(Xs + 0.5 * dx if k == axis else Xs)
        mids.append(mid)
    return dens, mids


def grad_ratio_outside_ball(psi: Field, center, radius: float) -> float:
    """Share of the Dirichlet energy of ``|psi|`` on edges outside the ball.

    Edge membership is decided by the edge midpoint.
    """
    dens, mids = modulus_gradient_density(psi)
    c = np.broadcast_to(np.asarray(center, dtype=float), (psi.grid.dim,))
    total = 0.0
    outside = 0.0
    for d, mid in zip(dens, mids):
        r2 = sum((X - ck) ** 2 for X, ck in zip(mid, c))
        total += float(d.sum())
        outside += float(d[r2 >= radius * radius].sum())
    if not total > 0:
        raise GridError("gradient ratio of a field with zero gradient is undefined")
    return outside / total


def momentum(psi: Field) -> np.ndarray:
    """``int Im(conj(psi) grad psi)`` with central differences."""
    grads = gradient(psi)
    conj = np.conj(psi.values)
    return np.array([psi.grid.cell_volume * float(np.sum(np.imag(conj * g.values))) for g in grads])


def kinetic_phase_density(psi: Field) -> np.ndarray:
    """``|Im(conj(psi) grad psi)|^2 / max(|psi|^2, EPS_QUOT^2)`` at nodes.

    This is ``u^2 |grad s|^2`` for ``psi = u exp(i s)``, computed without a
    phase field.
    """
    grads = gradient(psi)
    conj = np.conj(psi.values)
    j2 = sum(np.imag(conj * g.values) ** 2 for g in grads)
    rho = np.abs(psi.values) ** 2
    out = np.zeros_like(rho)
    big = np.sqrt(rho) > EPS_QUOT
    out[big] = j2[big] / rho[big]
    return out


def boundary_force(u: Field, scheme: str = "edge") -> np.ndarray:
    """``1/2 sum_faces |grad u|^2 n dsigma`` (inward normals).

    The default edge flux makes the discrete momentum balance exact for
    the kinetic term; see :func:`~nlselab.grid.boundary_flux_samples`.
    """
    area, normal, grad_sq = boundary_flux_samples(u, scheme)
    return 0.5 * np.sum((area * grad_sq)[:, None] * normal, axis=0)


def potential_force(u: Field, model: ModelSpec) -> np.ndarray:
    """``-int u^2 grad V``."""
    grid = u.grid
    if model.V.family == "zero":
        return np.zeros(grid.dim)
    g = model.V.gradV(grid.points())
    rho = np.abs(u.values) ** 2
    return -grid.cell_volume * np.array([float(np.sum(rho * g[..., k])) for k in range(grid.dim)])


@dataclass
class DiagnosticsSample:
    """One row of a trajectory record."""

    t: float
    charge: float
    energy: float
    J_value: float
    barycenter: np.ndarray
    momentum: np.ndarray
    mass_out_fraction: float = float("nan")
    grad_out_ratio: float = float("nan")
    boundary_force: np.ndarray = field(default_factory=lambda: np.zeros(0))
    potential_force: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @staticmethod
    def header(dim: int) -> list[str]:
        ax = ["x", "y", "z"][:dim]
        return (["t", "charge", "energy", "J"] + [f"q{a}" for a in ax] + [f"p{a}" for a in ax]
                + ["mass_out", "grad_out"] + [f"Fb_{a}" for a in ax] + [f"Fv_{a}" for a in ax])

    def row(self) -> list[float]:
        dim = len(self.barycenter)
        fb = self.boundary_force if len(self.boundary_force) else np.full(dim, np.nan)
        fv = self.potential_force if len(self.potential_force) else np.full(dim, np.nan)
        return ([self.t, self.charge, self.energy, self.J_value] + list(self.barycenter)
                + list(self.momentum) + [self.mass_out_fraction, self.grad_out_ratio]
                + list(fb) + list(fv))


def diagnostics(psi: Field, model: ModelSpec, t: float, h: float | None = None,
                ball: tuple | None = None, h1_ball: tuple | None = None,
                forces: bool = False, v_values=None) -> DiagnosticsSample:
    """Evaluate every diagnostic of ``psi`` at time ``t``.

    Parameters
    ----------
    ball : (center, radius), optional
        Ball for the outside-mass fraction (fraction of the charge).
    h1_ball : (center, radius), optional
        Ball for the outside gradient ratio of ``|psi|``.
    forces : bool
        Also evaluate the boundary and potential force terms on ``|psi|``.
    """
    q = charge(psi)
    u = abs(psi)
    dim = psi.grid.dim
    sample = DiagnosticsSample(
        t=float(t),
        charge=q,
        energy=total_energy(psi, model, h, v_values=v_values),
        J_value=action_J(u, model),
        barycenter=barycenter(psi) if q > 0 else np.full(dim, np.nan),
        momentum=momentum(psi),
    )
    if ball is not None and q > 0:
        sample.mass_out_fraction = mass_outside_ball(psi, *ball) / q
    if h1_ball is not None and q > 0:
        sample.grad_out_ratio = grad_ratio_outside_ball(psi, *h1_ball)
    if forces:
        sample.boundary_force = boundary_force(u)
        sample.potential_force = potential_force(u, model)
    return sample
