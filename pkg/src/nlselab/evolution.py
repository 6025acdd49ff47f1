"""Time integration of

    i h psi_t = -(h^2/2) L psi + (1/(2 h^alpha)) F(|psi|) psi + V psi

with zero Dirichlet data, ``F(s) = W'(s)/s``.

``crank_nicolson`` is the implicit midpoint rule. The linear part is treated
implicitly through a factorized (or diagonalized) operator and the remaining
terms are resolved by fixed-point iteration on the midpoint, so the scheme
conserves the discrete charge and energy up to the fixed-point tolerance.
``strang_splitting`` alternates exact pointwise phase rotations with the
exact discrete linear propagator (box domains only).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .functionals import DiagnosticsSample, diagnostics, kinetic_phase_density, potential_values
from .grid import Field, Grid
from .linsolve import BoxSpectral, SparseShifted, TridiagonalShifted
from .model import ModelSpec


class EvolutionError(RuntimeError):
    """A time step could not be completed."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t = {t:.17g})")
        self.t = t


@dataclass
class EvolveOpts:
    """Time stepping options.

    Parameters
    ----------
    dt : float
        Time step.
    T : float
        Final time.
    scheme : {"crank_nicolson", "strang_splitting"}
    fp_tol : float
        Relative sup-norm tolerance of the midpoint fixed point.
    fp_max : int
        Fixed-point iteration cap.
    sample_every : int
        Record a diagnostics sample every this many steps.
    snapshot_every : int
        Keep a state snapshot every this many steps (0: none besides
        ``snapshot_times``).
    snapshot_times : tuple of float
        Times at which a snapshot is kept (matched to the nearest step).
    """

    dt: float = 1e-3
    T: float = 1.0
    scheme: str = "crank_nicolson"
    fp_tol: float = 1e-12
    fp_max: int = 200
    sample_every: int = 1
    snapshot_every: int = 0
    snapshot_times: tuple = ()

    def __post_init__(self):
        if self.dt < 0:
            raise ValueError(f"dt must be nonnegative, got {self.dt}")
        if self.scheme not in ("crank_nicolson", "strang_splitting"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return 0 if self.dt == 0 else int(round(self.T / self.dt))


class _LinearPart:
    """Solves ``(1 + i dt h/4 (-L) + i dt/(2h) V_impl) x = rhs``.

    ``V_impl`` is the part of the potential included in the factorization;
    whatever is left (``v_explicit``) goes into the fixed point.
    """

    def __init__(self, grid: Grid, v: np.ndarray, dt: float, h: float):
        a = 1j * dt * h / 4.0
        cv = 1j * dt / (2.0 * h)
        self.grid = grid
        self.v_explicit = np.zeros_like(v)
        has_v = bool(np.any(v))
        if grid.domain.kind == "box" and grid.dim == 1:
            self._solve = TridiagonalShifted(grid, a, 1.0, cv * v if has_v else None).solve
        elif grid.domain.kind == "box":
            spec = BoxSpectral(grid)
            inv = 1.0 / (a * spec.mu + 1.0)
            self._solve = lambda rhs: spec.apply_multiplier(rhs, inv)
            self.v_explicit = v
        else:
            self._solve = SparseShifted(grid, a, 1.0, cv * v if has_v else None).solve
        self.v_implicit = v - self.v_explicit
        self.a = a
        self.cv = cv

    def solve(self, rhs):
        return self._solve(rhs)

    def apply_explicit(self, psi: np.ndarray, neg_lap: np.ndarray) -> np.ndarray:
        """``(1 - i dt h/4 (-L) - i dt/(2h) V_impl) psi``."""
        return psi - self.a * neg_lap - self.cv * self.v_implicit * psi


class Stepper:
    """One-step map for a fixed grid, model, ``h`` and ``dt``."""

    def __init__(self, grid: Grid, model: ModelSpec, h: float, dt: float,
                 scheme: str = "crank_nicolson", fp_tol: float = 1e-12, fp_max: int = 200):
        self.grid = grid
        self.model = model
        self.h = h
        self.dt = dt
        self.scheme = scheme
        self.fp_tol = fp_tol
        self.fp_max = fp_max
        self.v = potential_values(grid, model)
        self.coef_nl = 1.0 / (2.0 * h**model.alpha)
        self.last_iterations = 0
        if dt == 0:
            return
        if scheme == "crank_nicolson":
            self._lin = _LinearPart(grid, self.v, dt, h)
        else:
            if grid.domain.kind != "box":
                raise ValueError("strang_splitting needs a box domain")
            spec = BoxSpectral(grid)
            self._spec = spec
            self._prop = np.exp(-0.5j * dt * h * spec.mu)

    def _neg_lap(self, psi):
        return -kernels.laplacian(psi, self.grid.spacing, self.grid.mask)

    def _explicit_rhs(self, psi_mid: np.ndarray) -> np.ndarray:
        """``dt`` times the fixed-point part of the right-hand side at the midpoint."""
        F = self.model.W.quotient(np.abs(psi_mid))
        pot = self.coef_nl * F + self._lin.v_explicit
        return (-1j * self.dt / self.h) * pot * psi_mid

    def step_values(self, psi0: np.ndarray) -> np.ndarray | None:
        """Advance raw node values by ``dt``; ``None`` if the fixed point fails."""
        if self.dt == 0:
            return psi0.copy()
        if self.scheme == "strang_splitting":
            return self._strang(psi0)
        base = self._lin.apply_explicit(psi0, self._neg_lap(psi0))
        mask = self.grid.mask
        psi1 = self._lin.solve(base + self._explicit_rhs(psi0))
        for k in range(1, self.fp_max + 1):
            mid = 0.5 * (psi0 + psi1)
            nxt = self._lin.solve(base + self._explicit_rhs(mid))
            nxt[~mask] = 0.0
            change = np.max(np.abs(nxt - psi1))
            scale = max(1.0, float(np.max(np.abs(nxt))))
            psi1 = nxt
            if change <= self.fp_tol * scale:
                self.last_iterations = k
                return psi1
            if not np.isfinite(change):
                break
        self.last_iterations = self.fp_max
        return None

    def _rotate(self, psi: np.ndarray, tau: float) -> np.ndarray:
        F = self.model.W.quotient(np.abs(psi))
        return np.exp((-1j * tau / self.h) * (self.coef_nl * F + self.v)) * psi

    def _strang(self, psi0: np.ndarray) -> np.ndarray:
        half = 0.5 * self.dt
        psi = self._rotate(psi0, half)
        psi = self._spec.apply_multiplier(psi, self._prop)
        psi = self._rotate(psi, half)
        psi[~self.grid.mask] = 0.0
        return psi


def step(psi: Field, model: ModelSpec, h: float, opts: EvolveOpts, t: float = 0.0,
         stepper: Stepper | None = None) -> Field:
    """Advance ``psi`` by ``opts.dt``.

    On fixed-point failure the step is retried once as two half steps; a
    second failure raises :class:`EvolutionError`.
    """
    st = stepper or Stepper(psi.grid, model, h, opts.dt, opts.scheme, opts.fp_tol, opts.fp_max)
    values = np.asarray(psi.values, dtype=complex)
    out = st.step_values(values)
    if out is None:
        half = Stepper(psi.grid, model, h, 0.5 * opts.dt, opts.scheme, opts.fp_tol, opts.fp_max)
        mid = half.step_values(values)
        out = half.step_values(mid) if mid is not None else None
        if out is None:
            raise EvolutionError("fixed-point iteration did not converge after halving dt", t)
    return Field(psi.grid, out)


@dataclass
class TrajectoryRecord:
    """Samples and snapshots of one run."""

    samples: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    max_charge_drift: float = 0.0
    max_energy_drift: float = 0.0
    n_steps: int = 0
    halvings: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples])

    def rows(self) -> list[list[float]]:
        return [s.row() for s in self.samples]


def evolve(psi0: Field, model: ModelSpec, h: float, opts: EvolveOpts,
           callbacks: list | None = None,
           sample_fn: Callable[[Field, float], DiagnosticsSample] | None = None) -> TrajectoryRecord:
    """Integrate from ``t = 0`` to ``opts.T`` and record diagnostics.

    Parameters
    ----------
    callbacks : list of callables ``(t, psi)``, optional
        Invoked at every sample time.
    sample_fn : callable ``(psi, t) -> DiagnosticsSample``, optional
        Custom diagnostics; the default records charge, energy, action,
        barycenter and momentum.

    Returns
    -------
    TrajectoryRecord
        With the maximal relative charge and energy drift over the samples.
    """
    grid = psi0.grid
    v_values = potential_values(grid, model)
    if sample_fn is None:
        def sample_fn(psi, t):
            return diagnostics(psi, model, t, h, v_values=v_values)
    st = Stepper(grid, model, h, opts.dt, opts.scheme, opts.fp_tol, opts.fp_max)
    n_steps = opts.n_steps
    snap_steps = {int(round(t / opts.dt)) if opts.dt else 0 for t in opts.snapshot_times}
    rec = TrajectoryRecord(n_steps=n_steps)
    psi = Field(grid, np.asarray(psi0.values, dtype=complex))

    def record(n, psi):
        t = n * opts.dt
        if n % max(opts.sample_every, 1) == 0 or n == n_steps:
            rec.samples.append(sample_fn(psi, t))
            for cb in callbacks or ():
                cb(t, psi)
        if n in snap_steps or (opts.snapshot_every and n % opts.snapshot_every == 0):
            rec.snapshots[t] = psi

    record(0, psi)
    for n in range(1, n_steps + 1):
        t_prev = (n - 1) * opts.dt
        values = st.step_values(np.asarray(psi.values))
        if values is None:
            rec.halvings += 1
            psi = step(psi, model, h, opts, t_prev, stepper=_FailingStepper())
        else:
            psi = Field(grid, values)
        record(n, psi)
    c0 = rec.samples[0].charge
    e0 = rec.samples[0].energy
    for s in rec.samples:
        if c0 > 0:
            rec.max_charge_drift = max(rec.max_charge_drift, abs(s.charge - c0) / c0)
        if e0 != 0:
            rec.max_energy_drift = max(rec.max_energy_drift, abs(s.energy - e0) / abs(e0))
    return rec


class _FailingStepper:
    """Stands in for a stepper whose full step already failed."""

    @staticmethod
    def step_values(values):
        return None


def modulus_and_kinetic_phase(psi: Field) -> tuple[Field, Field]:
    """``(|psi|, u^2 |grad s|^2)`` without forming a phase field."""
    return abs(psi), Field(psi.grid, kinetic_phase_density(psi))
