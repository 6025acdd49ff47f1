"""Numerical experiments built on the solver modules.

* admissible initial data (ground state + perturbation + phase) with a
  certificate of every defining inequality;
* the conservation suite;
* orbital stability of the phase orbit of a ground state;
* ``L^2`` and ``H^1`` localization sweeps in ``h`` and barycenter
  confinement;
* the momentum and Newton laws of the barycenter under refinement.

Every sweep returns a :class:`SweepResult` whose verdict is computed only
from its stored per-point metrics.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize
import scipy.stats

from . import kernels
from .evolution import EvolveOpts, TrajectoryRecord, evolve
from .functionals import (
    ActionScaling, barycenter, boundary_force, charge, diagnostics, grad_ratio_outside_ball,
    mass_outside_ball, momentum, potential_force, potential_values,
)
from .grid import DomainSpec, Field, Grid, build_grid, forward_differences, inflate_domain
from .ground_state import GroundState, GroundStateOptions, map_from_inflated, minimize_on_sphere
from .model import ModelSpec, Nonlinearity, Potential

CHARGE_GATE = 1e-8
ENERGY_GATE = 1e-6
RATIO_BAND = (3.5, 4.5)
# below this relative energy drift the integrator sits at rounding level and
# the dt-halving ratio carries no information
RATIO_FLOOR = 1e-10


class ExperimentError(ValueError):
    """Invalid experiment request."""


# results ------------------------------------------------------------------
def _clean(obj):
    """JSON-ready copy: numpy scalars/arrays to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


@dataclass
class SweepResult:
    """Parameters, per-point metrics, verdict and tolerances of one experiment.

    ``traces`` maps a point label to ``(header, rows)`` of its time series;
    it is written as CSV next to the JSON and is not part of the JSON.
    """

    name: str
    params: dict
    per_point: list
    verdict: dict
    tolerances: dict
    traces: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return bool(self.verdict.get("passed", False))

    def as_dict(self) -> dict:
        return _clean({"name": self.name, "params": self.params, "per_point": self.per_point,
                       "verdict": self.verdict, "tolerances": self.tolerances})

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def kendall_tau(x, y) -> float:
    """Kendall rank correlation of two sequences (NaN with fewer than 2 points)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return float("nan")
    return float(scipy.stats.kendalltau(x, y).statistic)


def _first_failed(gates: dict) -> str | None:
    for name, ok in gates.items():
        if not ok:
            return name
    return None


def _verdict(gates: dict, **extra) -> dict:
    gates = {k: bool(v) for k, v in gates.items()}
    return {"passed": all(gates.values()), "gates": gates,
            "first_failed": _first_failed(gates), **extra}


def _run_jobs(func, args: list, jobs: int) -> list:
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(min(jobs, len(args))) as ex:
            return list(ex.map(func, args))
    return [func(a) for a in args]


# H^1 geometry -------------------------------------------------------------
def h1_inner(a: Field, b: Field) -> complex:
    """``<a, b>_{H^1} = int conj(a) b + int conj(grad a) . grad b`` (edge form)."""
    grid = a.grid
    da = forward_differences(a.values, grid.spacing)
    db = forward_differences(b.values, grid.spacing)
    s = np.sum(np.conj(a.values) * b.values) + sum(np.sum(np.conj(x) * y) for x, y in zip(da, db))
    return complex(grid.cell_volume * s)


def h1_norm_field(f: Field) -> float:
    return math.sqrt(max(h1_inner(f, f).real, 0.0))


def orbit_distance(psi: Field, u: Field) -> float:
    """``min_theta ||psi - u exp(i theta)||_{H^1}`` in closed form.

    ``||psi - u e^{i theta}||^2 = ||psi||^2 + ||u||^2 - 2 Re(e^{-i theta} <u, psi>)``,
    minimal when ``e^{i theta}`` is the phase of ``<u, psi>``.
    """
    d2 = h1_inner(psi, psi).real + h1_inner(u, u).real - 2.0 * abs(h1_inner(u, psi))
    return math.sqrt(max(d2, 0.0))


def orbit_distance_grid(psi: Field, u: Field, n_phase: int = 256) -> float:
    """Minimum of ``||psi - u exp(i theta)||_{H^1}`` over ``n_phase`` equispaced angles."""
    c = h1_inner(u, psi)
    theta = 2.0 * np.pi * np.arange(n_phase) / n_phase
    d2 = h1_inner(psi, psi).real + h1_inner(u, u).real - 2.0 * np.real(np.exp(-1j * theta) * c)
    return float(np.sqrt(max(float(d2.min()), 0.0)))


def h1_zero_norm(f: Field) -> float:
    """``(int |grad f|^2 + |f|^2)^{1/2}`` on the grid's own length units."""
    return h1_norm_field(f)


# admissible data -----------------------------------------------------------
@dataclass
class PerturbationSpec:
    """Smooth random perturbation ``w``.

    Parameters
    ----------
    norm_fraction : float
        Target ``H^1`` norm of the final ``w`` as a fraction of ``K h^alpha``.
    n_bumps : int
        Number of Gaussian bumps.
    width : float
        Bump width in units of the concentration length of the frame ``w``
        lives in (``h^beta`` on the physical domain, 1 on the rescaled one).
    seed : int
    """

    norm_fraction: float = 0.0
    n_bumps: int = 3
    width: float = 1.0
    seed: int = 0


@dataclass
class PhaseSpec:
    """Phase ``s`` of the datum ``(U + w) exp(i s / h)``.

    Parameters
    ----------
    fraction : float
        ``sup |grad s|`` as a fraction of its admissible bound.
    direction : tuple of float, optional
        Direction of the kick (default: first axis).
    profile : {"linear", "boundary_flat"}
        ``"linear"`` is ``s = k . x``; ``"boundary_flat"`` (box domains) is
        ``s = sum_j k_j (2 a_j / pi) sin(pi (x_j - c_j) / (2 a_j))``, whose
        gradient equals ``k`` at the box center and vanishes on the walls.
    """

    fraction: float = 0.0
    direction: tuple | None = None
    profile: str = "linear"


@dataclass
class Check:
    name: str
    value: float
    bound: float
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "bound": self.bound, "passed": self.passed}


@dataclass
class AdmissibleDatum:
    """Initial datum ``psi0 = (U + w) exp(i s / h)`` with its certificate."""

    psi0: Field
    U: Field
    w: Field
    s: Field
    k: np.ndarray
    K: float
    h: float
    setting: str
    checks: list
    reasons: list

    @property
    def accepted(self) -> bool:
        return not self.reasons

    def as_dict(self) -> dict:
        return {"K": self.K, "h": self.h, "setting": self.setting, "k": list(self.k),
                "accepted": self.accepted, "reasons": list(self.reasons),
                "checks": [c.as_dict() for c in self.checks]}


def _bumps(grid: Grid, center, width: float, n: int, seed: int, complex_valued: bool = False):
    rng = np.random.default_rng(seed)
    coords = grid.coords
    v = np.zeros(grid.shape, dtype=complex if complex_valued else float)
    for _ in range(n):
        c = np.asarray(center) + rng.uniform(-1.0, 1.0, grid.dim) * width
        amp = rng.normal()
        if complex_valued:
            amp = amp + 1j * rng.normal()
        v = v + amp * np.exp(-sum(((X - ck) / width) ** 2 for X, ck in zip(coords, c)))
    v[~grid.mask] = 0
    return v


def _orthogonalize(raw: np.ndarray, U: Field) -> np.ndarray:
    """Remove the ``L^2`` components along ``U`` and ``-L U``.

    A perturbation orthogonal to both is ``L^2`` and ``H^1`` orthogonal to
    ``U``, so renormalizing ``U + w`` changes ``w`` only at second order.
    """
    grid = U.grid
    basis = []
    for b in (U.values, -kernels.laplacian(U.values, grid.spacing, grid.mask)):
        b = np.array(b, dtype=float)
        for e in basis:
            b = b - np.sum(e * b) * e
        nb = math.sqrt(float(np.sum(b * b)))
        if nb > 0:
            basis.append(b / nb)
    out = np.array(raw, dtype=float)
    for e in basis:
        out = out - np.sum(e * out) * e
    out[~grid.mask] = 0
    return out


def _fit_perturbation(U: Field, raw: np.ndarray, sigma: float, charge_scale: float,
                      target: float) -> Field:
    """``w = c (U + t raw) - U`` with ``c`` restoring the charge and ``||w||_{H^1} = target``."""
    grid = U.grid

    def final(t):
        v = U.values + t * raw
        c = sigma / math.sqrt(charge_scale * grid.cell_volume * float(np.sum(v * v)))
        return Field(grid, c * v - U.values)

    if target <= 0 or not np.any(raw):
        return Field(grid, np.zeros(grid.shape))
    hi = target / h1_norm_field(Field(grid, raw))
    while h1_norm_field(final(hi)) < target:
        hi *= 2.0
        if hi > 1e12:
            raise ExperimentError("perturbation cannot reach the requested norm")
    t = scipy.optimize.brentq(lambda t: h1_norm_field(final(t)) - target, 0.0, hi,
                              xtol=1e-15 * hi, rtol=1e-14, maxiter=200)
    return final(t)


def _phase(grid: Grid, spec: PhaseSpec, magnitude: float, center) -> tuple[Field, np.ndarray, float]:
    """Phase field, kick vector and the sup of its exact gradient norm."""
    d = np.zeros(grid.dim)
    if spec.direction is None:
        d[0] = 1.0
    else:
        d = np.asarray(spec.direction, dtype=float)
        d = d / np.linalg.norm(d)
    k = magnitude * d
    coords = grid.coords
    if spec.profile == "linear":
        s = sum(kj * (X - cj) for kj, X, cj in zip(k, coords, center))
        grad = [np.full(grid.shape, kj) for kj in k]
    elif spec.profile == "boundary_flat":
        dom = grid.domain
        if dom.kind != "box":
            raise ExperimentError("boundary_flat phase needs a box domain")
        s = np.zeros(grid.shape)
        grad = []
        for kj, X, cj, aj in zip(k, coords, dom.center, dom.half_widths):
            arg = np.pi * (X - cj) / (2.0 * aj)
            s = s + kj * (2.0 * aj / np.pi) * np.sin(arg)
            grad.append(kj * np.cos(arg))
    else:
        raise ExperimentError(f"unknown phase profile {spec.profile!r}")
    gnorm = np.sqrt(sum(g * g for g in grad))
    sup = float(gnorm[grid.mask].max()) if grid.n_interior else 0.0
    return Field(grid, np.asarray(s, dtype=float) * np.ones(grid.shape)), k, sup


def _certify(U: Field, w: Field, model: ModelSpec, K: float, h: float, sigma: float,
             charge_scale: float, w_bound: float, w_norm: float, phase_bound: float,
             phase_sup: float, v_bound: float, u_phys: Field) -> tuple[list, list]:
    grid = U.grid
    v = U + w
    c_h = charge_scale * grid.cell_volume * float(np.sum(v.values ** 2))
    vv = potential_values(u_phys.grid, model)
    v_int = u_phys.grid.cell_volume * float(np.sum(vv * u_phys.values ** 2))
    checks = [
        Check("charge", c_h, sigma * sigma, abs(c_h - sigma * sigma) <= 1e-10 * sigma * sigma),
        Check("perturbation_norm", w_norm, w_bound, w_norm < w_bound or w_norm == 0.0),
        Check("phase_gradient", phase_sup, phase_bound, phase_sup <= phase_bound * (1 + 1e-12)),
        Check("potential_budget", v_int, v_bound, v_int <= v_bound),
    ]
    lines = {
        "charge": "C_h(U + w) equals the constraint level",
        "perturbation_norm": "||w||_H1 < K h^alpha",
        "phase_gradient": "sup |grad s| within its bound",
        "potential_budget": "int V u^2 within its bound",
    }
    reasons = [f"{c.name}: {lines[c.name]} violated ({c.value:.6g} vs {c.bound:.6g})"
               for c in checks if not c.passed]
    return checks, reasons


def make_admissible_bounded(ground: GroundState, K: float, h: float, model: ModelSpec,
                            w_spec: PerturbationSpec | None = None,
                            phase_spec: PhaseSpec | None = None) -> AdmissibleDatum:
    """Datum on a bounded domain with ``C_h(U + w) = sigma^2``,
    ``||w||_{H^1_0} < K h^alpha``, ``sup|grad s| <= K h^{N beta/2}`` and
    ``int V u^2 <= K h^{N beta}``.

    ``ground.u`` must live on the physical grid and satisfy
    ``h^{-N beta} ||U||^2 = sigma^2`` (see :func:`scaled_ground_state`).
    """
    if not ground.converged:
        raise ExperimentError("admissible data need a converged ground state")
    w_spec = w_spec or PerturbationSpec()
    phase_spec = phase_spec or PhaseSpec()
    U = ground.u
    grid = U.grid
    N, alpha, beta = grid.dim, model.alpha, 1.0 + model.alpha / 2.0
    hb = h**beta
    cs = h ** (-N * beta)
    sigma = ground.sigma
    w_bound = K * h**alpha
    q = barycenter(U)
    raw = _orthogonalize(_bumps(grid, q, w_spec.width * hb, w_spec.n_bumps, w_spec.seed), U)
    w = _fit_perturbation(U, raw, sigma, cs, w_spec.norm_fraction * w_bound)
    w_norm = h1_zero_norm(w)
    phase_bound = K * h ** (N * beta / 2.0)
    s, k, sup = _phase(grid, phase_spec, phase_spec.fraction * phase_bound, q)
    u_phys = U + w
    checks, reasons = _certify(U, w, model, K, h, sigma, cs, w_bound, w_norm, phase_bound, sup,
                               K * h ** (N * beta), u_phys)
    psi0 = Field(grid, u_phys.values * np.exp(1j * s.values / h))
    return AdmissibleDatum(psi0, U, w, s, k, K, h, "bounded", checks, reasons)


def make_admissible_large(ground: GroundState, K: float, h: float, model: ModelSpec,
                          w_spec: PerturbationSpec | None = None,
                          phase_spec: PhaseSpec | None = None) -> AdmissibleDatum:
    """Whole-space datum ``u_h(x) = (U + w)(x / h^beta)`` on the image of a large box.

    ``ground`` is a minimizer of ``J`` with ``||U|| = sigma`` on a box of the
    rescaled variable; the datum lives on the same box scaled by ``h^beta``.
    Bounds: ``||U + w|| = sigma``, ``||w||_{H^1} < K h^alpha`` (rescaled
    frame), ``sup|grad s| <= K``, ``int V u_h^2 <= K h^{N beta - 2 alpha}``.
    """
    if not ground.converged:
        raise ExperimentError("admissible data need a converged ground state")
    w_spec = w_spec or PerturbationSpec()
    phase_spec = phase_spec or PhaseSpec()
    U = ground.u
    gxi = U.grid
    N, alpha, beta = gxi.dim, model.alpha, 1.0 + model.alpha / 2.0
    hb = h**beta
    sigma = ground.sigma
    w_bound = K * h**alpha
    q = barycenter(U)
    raw = _orthogonalize(_bumps(gxi, q, w_spec.width, w_spec.n_bumps, w_spec.seed), U)
    w = _fit_perturbation(U, raw, sigma, 1.0, w_spec.norm_fraction * w_bound)
    w_norm = h1_zero_norm(w)
    gx = build_grid(gxi.domain.scaled(hb), gxi.shape)
    u_phys = map_from_inflated(U + w, gx, h, alpha)
    phase_bound = K
    s, k, sup = _phase(gx, phase_spec, phase_spec.fraction * phase_bound, hb * q)
    checks, reasons = _certify(U, w, model, K, h, sigma, 1.0, w_bound, w_norm, phase_bound, sup,
                               K * h ** (N * beta - 2.0 * alpha), u_phys)
    psi0 = Field(gx, u_phys.values * np.exp(1j * s.values / h))
    return AdmissibleDatum(psi0, map_from_inflated(U, gx, h, alpha), map_from_inflated(w, gx, h, alpha),
                           s, k, K, h, "large_box", checks, reasons)


def scaled_ground_state(model: ModelSpec, domain: DomainSpec, h: float, dxi: float,
                        opts: GroundStateOptions | None = None) -> tuple[GroundState, GroundState]:
    """Ground state of ``J_h`` on ``domain`` via ``J`` on the inflated domain.

    Returns ``(on_inflated, on_domain)``: the minimizer of ``J`` with
    ``||v|| = sigma`` on a grid of spacing about ``dxi`` over ``Omega_h``, and
    its node-to-node image ``U(x) = v(x / h^beta)`` on the physical grid
    (same node count), for which ``C_h(U) = sigma^2`` exactly.
    """
    inflated = inflate_domain(domain, h, model.alpha)
    nodes = [int(round((hi - lo) / dxi)) + 1 for lo, hi in inflated.bounds]
    gxi = build_grid(inflated, nodes)
    gx = build_grid(domain, nodes)
    gs = minimize_on_sphere(model, gxi, model.sigma, opts)
    return gs, replace(gs, u=map_from_inflated(gs.u, gx, h, model.alpha))


# radii and centers -----------------------------------------------------------
def minimal_mass_radius(psi: Field, center, fraction: float) -> float:
    """Infimum of radii ``r`` whose ball keeps outside charge fraction below ``fraction``.

    Uses the same strict node membership as :func:`mass_outside_ball`.
    """
    grid = psi.grid
    rho = np.abs(psi.values[grid.mask]) ** 2
    total = rho.sum()
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    dist = np.sqrt(sum((X[grid.mask] - ck) ** 2 for X, ck in zip(grid.coords, c)))
    order = np.argsort(-dist, kind="stable")
    tail = np.cumsum(rho[order])
    # the outside set of radius r is {dist >= r}; it must carry < fraction
    bad = np.flatnonzero(tail >= fraction * total)
    if len(bad) == 0:
        return 0.0
    return float(dist[order][bad[0]])


def bisect_radius(metric, r_max: float, target: float, iters: int = 60) -> float:
    """Smallest ``r`` in ``[0, r_max]`` with ``metric(r) < target`` (metric nonincreasing)."""
    lo, hi = 0.0, r_max
    if not metric(hi) < target:
        raise ExperimentError("no radius reaches the target; enlarge r_max")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if metric(mid) < target:
            hi = mid
        else:
            lo = mid
    return hi


def fit_center_h1(psi: Field, radius: float, start) -> tuple[np.ndarray, float]:
    """Center minimizing the outside gradient ratio of ``|psi|``.

    A coarse search over a lattice of candidate centers around ``start`` is
    followed by local refinements with the lattice step divided by 4 until
    it drops below a quarter of the grid spacing.
    """
    grid = psi.grid
    dx = min(grid.spacing)
    best = np.asarray(start, dtype=float)
    best_val = grad_ratio_outside_ball(psi, best, radius)
    step = max(dx, radius / 5.0)
    span = 5
    while True:
        offs = np.arange(-span, span + 1) * step
        mesh = np.meshgrid(*([offs] * grid.dim), indexing="ij")
        cand = np.stack([m.ravel() for m in mesh], axis=-1) + best
        center0 = best
        for c in cand:
            val = grad_ratio_outside_ball(psi, c, radius)
            if val < best_val - 1e-15 or (abs(val - best_val) <= 1e-15 and
                                          np.linalg.norm(c - center0) < np.linalg.norm(best - center0)):
                best, best_val = c, val
        if step < 0.25 * dx:
            return best, best_val
        step /= 4.0
        span = 4


def barycenter_confinement(q_series, q_hat, eps: float, h: float, R: float,
                           diameter: float, beta: float) -> dict:
    """Check ``|q(t) - q_hat| < d eps + h^beta R`` at every sample."""
    q = np.atleast_2d(np.asarray(q_series, dtype=float))
    dist = np.linalg.norm(q - np.asarray(q_hat, dtype=float), axis=1)
    bound = diameter * eps + h**beta * R
    margin = bound - dist
    return {"passed": bool(np.all(margin > 0)), "violations": int(np.sum(margin <= 0)),
            "worst_margin": float(margin.min()) if len(margin) else float("nan"),
            "bound": bound, "max_distance": float(dist.max()) if len(dist) else 0.0}


def _ball_inside(domain: DomainSpec, center, radius) -> bool:
    c = np.asarray(center, dtype=float)
    if domain.kind == "box":
        lo = np.asarray(domain.center) - np.asarray(domain.half_widths)
        hi = np.asarray(domain.center) + np.asarray(domain.half_widths)
        return bool(np.all(c - radius >= lo) and np.all(c + radius <= hi))
    return bool(np.linalg.norm(c - np.asarray(domain.center)) + radius <= domain.radius)


def boundary_layer_fraction(psi: Field, width: float) -> float:
    """Charge fraction on nodes within ``width`` of the boundary of a box or ball."""
    grid = psi.grid
    dom = grid.domain
    coords = grid.coords
    if dom.kind == "box":
        gap = np.min([hw - np.abs(X - c) for X, c, hw in zip(coords, dom.center, dom.half_widths)],
                     axis=0)
    else:
        gap = dom.radius - np.sqrt(sum((X - c) ** 2 for X, c in zip(coords, dom.center)))
    rho = np.abs(psi.values) ** 2
    total = rho.sum()
    return float(rho[gap < width].sum() / total) if total > 0 else 0.0


# conservation suite ----------------------------------------------------------
@dataclass
class ConservationCase:
    name: str
    grid: Grid
    model: ModelSpec
    psi0: Field
    h: float = 1.0


def canonical_conservation_cases(nodes_1d: int = 401, nodes_2d: int = 101,
                                 gs_opts: GroundStateOptions | None = None) -> list[ConservationCase]:
    """Stationary, kicked and perturbed runs with ``V = 0`` and quadratic ``V``
    on ``(-1, 1)^N``, ``N = 1, 2``, ``sigma = 1``, ``p = 3``, ``h = 1``."""
    gs_opts = gs_opts or GroundStateOptions(tol_res=1e-10, n_starts=2)
    base = ModelSpec(W=Nonlinearity("sin_power", 3.0), alpha=1.0, sigma=1.0, h=1.0)
    cases = []
    for dim, n in ((1, nodes_1d), (2, nodes_2d)):
        quad = base.with_(V=Potential("quadratic", 1.0, (0.0,) * dim))
        grid = build_grid(DomainSpec.box([-1.0] * dim, [1.0] * dim), n)
        u = minimize_on_sphere(base, grid, 1.0, gs_opts).u
        coords = grid.coords
        kick = np.exp(1j * sum(c * X for c, X in zip((1.0, 0.5, 0.25), coords)))
        cases.append(ConservationCase(f"stationary_{dim}d_V0", grid, base, Field(grid, u.values + 0j)))
        cases.append(ConservationCase(f"kicked_{dim}d_quadV", grid, quad, Field(grid, u.values * kick)))
        if dim == 1:
            bump = 0.1 * np.exp(-20.0 * (coords[0] - 0.3) ** 2)
            cases.append(ConservationCase("perturbed_1d_quadV", grid, quad,
                                          Field(grid, u.values + bump + 0j)))
    return cases


def _conservation_job(args):
    case, dt, T, scheme = args
    out = {"name": case.name, "dim": case.grid.dim, "nodes": case.grid.shape[0], "dt": dt, "T": T}
    for label, step in (("", dt), ("_half", dt / 2)):
        n = int(round(T / step))
        rec = evolve(case.psi0, case.model, case.h,
                     EvolveOpts(dt=step, T=T, scheme=scheme, sample_every=max(1, n // 100)))
        out["charge_drift" + label] = rec.max_charge_drift
        out["energy_drift" + label] = rec.max_energy_drift
        out["halvings" + label] = rec.halvings
    e1, e2 = out["energy_drift"], out["energy_drift_half"]
    out["energy_ratio"] = e1 / e2 if e2 > 0 else float("inf")
    out["ratio_applies"] = e1 > RATIO_FLOOR
    return out


def conservation_suite(cases: list[ConservationCase] | None = None, dt: float = 1e-3,
                       T: float = 5.0, scheme: str = "crank_nicolson", jobs: int = 1) -> SweepResult:
    """Charge and energy drift of every case at ``dt`` and ``dt/2``.

    Gates per case: charge drift ``<= 1e-8``, energy drift ``<= 1e-6`` and,
    when the drift is above the rounding floor, an energy drift ratio in
    ``[3.5, 4.5]`` under halving.
    """
    cases = cases if cases is not None else canonical_conservation_cases()
    rows = _run_jobs(_conservation_job, [(c, dt, T, scheme) for c in cases], jobs)
    gates = {}
    for r in rows:
        gates[f"{r['name']}:charge"] = r["charge_drift"] <= CHARGE_GATE
        gates[f"{r['name']}:energy"] = r["energy_drift"] <= ENERGY_GATE
        if r["ratio_applies"]:
            gates[f"{r['name']}:ratio"] = RATIO_BAND[0] <= r["energy_ratio"] <= RATIO_BAND[1]
    return SweepResult("conservation", {"dt": dt, "T": T, "scheme": scheme}, rows, _verdict(gates),
                       {"charge": CHARGE_GATE, "energy": ENERGY_GATE, "ratio_band": list(RATIO_BAND),
                        "ratio_floor": RATIO_FLOOR})


# orbital stability -----------------------------------------------------------
def _stability_job(args):
    (u, model, h, psi0, dt, T, sample_every, n_phase, label) = args
    grid = u.grid
    v_values = potential_values(grid, model)
    dists, dists_grid = [], []

    def sample_fn(psi, t):
        dists.append(orbit_distance(psi, u))
        dists_grid.append(orbit_distance_grid(psi, u, n_phase))
        return diagnostics(psi, model, t, h, v_values=v_values)

    rec = evolve(psi0, model, h, EvolveOpts(dt=dt, T=T, sample_every=sample_every), sample_fn=sample_fn)
    return {"label": label, "distance_0": dists[0], "sup_distance": max(dists),
            "sup_distance_phase_grid": max(dists_grid), "charge_drift": rec.max_charge_drift,
            "energy_drift": rec.max_energy_drift, "halvings": rec.halvings,
            "trace": (["t", "distance", "distance_phase_grid", "charge", "energy"],
                      [[s.t, d, dg, s.charge, s.energy] for s, d, dg in zip(rec.samples, dists, dists_grid)])}


def _orbit_perturbation(u: Field, target: float, seed: int, width: float) -> Field:
    grid = u.grid
    center = barycenter(u)
    eta = _bumps(grid, center, width, 3, seed, complex_valued=True)
    if target == 0:
        return Field(grid, u.values + 0j)

    def dist(t):
        return orbit_distance(Field(grid, u.values + t * eta), u) - target

    hi = target / h1_norm_field(Field(grid, eta))
    while dist(hi) < 0:
        hi *= 2.0
    t = scipy.optimize.brentq(dist, 0.0, hi, xtol=1e-15 * hi, rtol=1e-14)
    return Field(grid, u.values + t * eta)


def orbital_stability_run(model: ModelSpec, sigma: float, deltas, T: float, n_phase_grid: int = 256,
                          ensemble: int = 4, *, domain: DomainSpec | None = None, nodes: int = 401,
                          dt: float = 1e-3, h: float = 1.0, seed: int = 0,
                          gs_opts: GroundStateOptions | None = None, distance_fraction: float = 0.9,
                          sample_every: int = 10, jobs: int = 1) -> SweepResult:
    """Distance to the phase orbit ``{u* e^{i theta}}`` along perturbed trajectories.

    ``deltas`` are multiples of ``||u*||_{H^1}``. Each ensemble member starts
    at orbit distance ``distance_fraction * delta`` (random complex bump
    perturbation, distinct seed per member). ``D(delta)`` is the maximum
    over valid members of the time supremum of the distance; a ``delta = 0``
    run gives the integrator floor. Distances use the exact phase minimum;
    the minimum over ``n_phase_grid`` angles is stored alongside.
    """
    domain = domain or DomainSpec.box([-1.0], [1.0])
    gs_opts = gs_opts or GroundStateOptions(tol_res=1e-10)
    grid = build_grid(domain, nodes)
    scaling = ActionScaling.semiclassical(h, model.alpha, grid.dim) if h != 1.0 else ActionScaling()
    gs = minimize_on_sphere(model, grid, sigma, gs_opts, scaling=scaling)
    u = Field(grid, gs.u.values)
    u_norm = h1_norm_field(u)
    deltas = [float(d) for d in deltas]
    width = 0.25 * min(hw for hw in (domain.half_widths if domain.kind == "box" else (domain.radius,)))
    root = np.random.SeedSequence(seed)
    member_seeds = [int(s.generate_state(1)[0]) for s in root.spawn(len(deltas) * ensemble)]
    args = [(u, model, h, Field(grid, u.values + 0j), dt, T, sample_every, n_phase_grid, "floor")]
    for i, d in enumerate(deltas):
        for j in range(ensemble):
            psi0 = _orbit_perturbation(u, distance_fraction * d * u_norm,
                                       member_seeds[i * ensemble + j], width)
            args.append((u, model, h, psi0, dt, T, sample_every, n_phase_grid, f"delta{i}_m{j}"))
    runs = _run_jobs(_stability_job, args, jobs)
    traces = {r["label"]: r.pop("trace") for r in runs}
    for r in runs:
        r["valid"] = r["charge_drift"] <= CHARGE_GATE and r["energy_drift"] <= ENERGY_GATE
    floor = runs[0]["sup_distance"]
    per_point = [{"delta_rel": 0.0, "delta": 0.0, "members": [runs[0]], "D": floor,
                  "n_valid": int(runs[0]["valid"]), "excluded": [] if runs[0]["valid"] else ["floor"]}]
    for i, d in enumerate(deltas):
        members = runs[1 + i * ensemble: 1 + (i + 1) * ensemble]
        valid = [m for m in members if m["valid"]]
        per_point.append({
            "delta_rel": d, "delta": d * u_norm, "members": members,
            "D": max(m["sup_distance"] for m in valid) if valid else float("nan"),
            "n_valid": len(valid), "excluded": [m["label"] for m in members if not m["valid"]],
        })
    pts = sorted([p for p in per_point[1:] if p["n_valid"] > 0], key=lambda p: -p["delta"])
    tau = kendall_tau(np.arange(len(pts)), [p["D"] for p in pts])
    smallest = pts[-1] if pts else None
    bound = 5.0 * smallest["delta"] + floor if smallest else float("nan")
    gates = {
        "valid_points": len(pts) >= 2,
        "monotone": len(pts) >= 2 and tau == -1.0,
        "smallest_delta_bound": smallest is not None and smallest["D"] <= bound,
    }
    params = {"sigma": sigma, "deltas_rel": deltas, "T": T, "dt": dt, "h": h, "nodes": nodes,
              "ensemble": ensemble, "n_phase_grid": n_phase_grid, "seed": seed,
              "distance_fraction": distance_fraction, "u_h1_norm": u_norm,
              "ground_state": gs.summary(), "domain": _domain_dict(domain)}
    return SweepResult("stability", params, per_point,
                       _verdict(gates, kendall_tau=tau, floor=floor, bound=bound),
                       {"charge": CHARGE_GATE, "energy": ENERGY_GATE, "factor": 5.0}, traces)


def _domain_dict(domain: DomainSpec) -> dict:
    d = {"kind": domain.kind, "center": list(domain.center)}
    if domain.kind == "box":
        d["half_widths"] = list(domain.half_widths)
    else:
        d["radius"] = domain.radius
    return d


# localization sweeps ---------------------------------------------------------
@dataclass
class LocalizationOptions:
    """Numerical settings shared by the localization sweeps.

    Parameters
    ----------
    domain : DomainSpec
        Physical domain (bounded setting).
    dxi : float
        Grid spacing in the rescaled variable ``x / h^beta``.
    dtau : float
        Time step in units of ``h^(alpha+1)`` (the internal time scale).
    n_samples : int
        Number of sample times along each run.
    fit_fraction : float
        The fitted radius is the smallest one whose ``t = 0`` metric is below
        ``fit_fraction * eps``; the margin absorbs the breathing of the
        perturbed profile at later times.
    perturbation, phase : PerturbationSpec, PhaseSpec
    large_half_width : float
        Initial half-width (rescaled units) of the large box; enlarged to
        ``8 R`` when the fitted radius demands it.
    boundary_mass_gate : float
        Bound on the charge fraction in the outer shell of the large box.
    gs_opts : GroundStateOptions
    fp_tol : float
    """

    domain: DomainSpec = field(default_factory=lambda: DomainSpec.box([-1.0], [1.0]))
    dxi: float = 0.05
    dtau: float = 0.005
    n_samples: int = 100
    fit_fraction: float = 0.5
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    phase: PhaseSpec = field(default_factory=PhaseSpec)
    large_half_width: float = 24.0
    boundary_mass_gate: float = 1e-6
    gs_opts: GroundStateOptions = field(
        default_factory=lambda: GroundStateOptions(tol_res=1e-8, n_starts=2))
    fp_tol: float = 1e-12

    def as_dict(self) -> dict:
        return {"domain": _domain_dict(self.domain), "dxi": self.dxi, "dtau": self.dtau,
                "n_samples": self.n_samples, "fit_fraction": self.fit_fraction,
                "perturbation": self.perturbation.__dict__, "phase": self.phase.__dict__,
                "large_half_width": self.large_half_width,
                "boundary_mass_gate": self.boundary_mass_gate,
                "gs_opts": self.gs_opts.__dict__, "fp_tol": self.fp_tol}


def _evolve_opts(model: ModelSpec, h: float, T: float, opts: LocalizationOptions) -> EvolveOpts:
    dt = opts.dtau * h ** (model.alpha + 1.0)
    n = max(1, int(round(T / dt)))
    dt = T / n
    return EvolveOpts(dt=dt, T=T, sample_every=max(1, n // opts.n_samples), fp_tol=opts.fp_tol)


def _point_base(h, model, gs, datum, eo):
    return {"h": h, "beta": model.beta, "nodes": list(datum.psi0.grid.shape),
            "dx": list(datum.psi0.grid.spacing), "dt": eo.dt, "n_steps": eo.n_steps,
            "gs_converged": gs.converged, "gs_residual": gs.residual, "gs_m": gs.m_value,
            "gs_lambda": gs.lam, "datum": datum.as_dict()}


def _l2_job(args):
    model, K, h, T, eps, opts = args
    beta = model.beta
    hb = h**beta
    gs_xi, gs = scaled_ground_state(model, opts.domain, h, opts.dxi, opts.gs_opts)
    datum = make_admissible_bounded(gs, K, h, model, opts.perturbation, opts.phase) if gs.converged \
        else None
    eo = _evolve_opts(model, h, T, opts)
    if datum is None:
        return {"h": h, "valid": False, "reasons": ["ground state not converged"]}, None
    out = _point_base(h, model, gs, datum, eo)
    if not datum.accepted:
        out.update(valid=False, reasons=list(datum.reasons))
        return out, None
    psi0 = datum.psi0
    q_hat = barycenter(psi0)
    c0 = charge(psi0)
    r_max = opts.domain.diameter / hb

    def metric0(r):
        return mass_outside_ball(psi0, q_hat, hb * r) / c0

    R = bisect_radius(metric0, r_max, opts.fit_fraction * eps)
    v_values = potential_values(psi0.grid, model)
    extra = []

    def sample_fn(psi, t):
        s = diagnostics(psi, model, t, h, ball=(q_hat, hb * R), v_values=v_values)
        extra.append(minimal_mass_radius(psi, q_hat, eps) / hb)
        return s

    rec = evolve(psi0, model, h, eo, sample_fn=sample_fn)
    metric = rec.series("mass_out_fraction")
    q_series = np.array([s.barycenter for s in rec.samples])
    conf = barycenter_confinement(q_series, q_hat, eps, h, R, opts.domain.diameter, beta)
    out.update(
        valid=rec.max_charge_drift <= CHARGE_GATE and rec.max_energy_drift <= ENERGY_GATE,
        reasons=[], q_hat=list(q_hat), R=R, ball_inside=_ball_inside(opts.domain, q_hat, hb * R),
        metric_t0=float(metric[0]), sup_metric=float(metric.max()),
        R_required=float(max(extra)), passed=bool(metric.max() < eps),
        charge_drift=rec.max_charge_drift, energy_drift=rec.max_energy_drift,
        confinement=conf,
    )
    dim = psi0.grid.dim
    header = ["t", "charge", "energy"] + [f"q{a}" for a in "xyz"[:dim]] + ["mass_out", "R_required"]
    rows = [[s.t, s.charge, s.energy, *s.barycenter, s.mass_out_fraction, r]
            for s, r in zip(rec.samples, extra)]
    return out, (header, rows)


def _localization_verdict(points: list, eps: float, radius_key: str = "R") -> tuple[dict, dict]:
    """h0 detection, common radius and radius variation over valid points."""
    valid = sorted([p for p in points if p.get("valid")], key=lambda p: -p["h"])
    h0 = None
    for i, p in enumerate(valid):
        if all(q["passed"] for q in valid[i:]):
            h0 = p["h"]
            break
    passing = [p for p in valid if h0 is not None and p["h"] <= h0]
    radii = [p[radius_key] for p in passing]
    common = max(radii) if radii else float("nan")
    variation = (max(radii) - min(radii)) / min(radii) if radii else float("nan")
    covered = all(p["R_required"] <= common for p in passing) if passing else False
    tau = kendall_tau([p["h"] for p in valid], [p["sup_metric"] for p in valid])
    info = {"h0": h0, "passing_h": [p["h"] for p in passing], "common_R": common,
            "R_variation": variation, "kendall_tau_h_metric": tau,
            "n_valid": len(valid), "excluded_h": [p["h"] for p in points if not p.get("valid")]}
    gates = {"h0_detected": h0 is not None, "common_R": covered,
             "R_variation": bool(radii) and variation < 0.2}
    return gates, info


def l2_localization_sweep(model: ModelSpec, K: float, h_list, T: float, eps: float,
                          opts: LocalizationOptions | None = None, jobs: int = 1) -> SweepResult:
    """Scaled outside charge of a frozen ball ``B(q_hat, h^beta R)`` along admissible runs.

    For every ``h`` (decreasing): ground state of ``J_h`` with
    ``C_h = sigma^2``, admissible datum on the bounded domain, ``q_hat`` the
    barycenter and ``R`` the bisected radius at ``t = 0``; the same ball is
    then monitored for ``t <= T``. The metric is the outside fraction of
    the charge, ``h^{-N beta} int_out |psi|^2 / C_h(psi)``.
    """
    opts = opts or LocalizationOptions()
    h_list = [float(h) for h in h_list]
    if any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise ExperimentError("h_list must be strictly decreasing")
    results = _run_jobs(_l2_job, [(model, K, h, T, eps, opts) for h in h_list], jobs)
    points = [r[0] for r in results]
    traces = {f"h{i}": r[1] for i, r in enumerate(results) if r[1] is not None}
    gates, info = _localization_verdict(points, eps)
    passing = [p for p in points if p.get("valid") and info["h0"] is not None and p["h"] <= info["h0"]]
    gates["barycenter_confinement"] = bool(passing) and all(p["confinement"]["passed"] for p in passing)
    params = {"model": model_dict(model), "K": K, "h_list": h_list, "T": T, "eps": eps,
              "options": opts.as_dict()}
    return SweepResult("sweep-l2", params, points, _verdict(gates, **info),
                       {"eps": eps, "R_variation": 0.2, "charge": CHARGE_GATE,
                        "energy": ENERGY_GATE}, traces)


def _large_grid(model, h, half_width_xi, opts):
    dim = opts.domain.dim
    dom_xi = DomainSpec.box([-half_width_xi] * dim, [half_width_xi] * dim)
    nodes = int(round(2 * half_width_xi / opts.dxi)) + 1
    return build_grid(dom_xi, nodes)


def _h1_job(args):
    model, K, h, T, eps, setting, opts = args
    beta = model.beta
    hb = h**beta
    if setting == "bounded":
        _, gs = scaled_ground_state(model, opts.domain, h, opts.dxi, opts.gs_opts)
        make = make_admissible_bounded
    else:
        L = opts.large_half_width
        while True:
            gxi = _large_grid(model, h, L, opts)
            gs = minimize_on_sphere(model, gxi, model.sigma, opts.gs_opts)
            if not gs.converged:
                break
            r_hat = bisect_radius(lambda r: grad_ratio_outside_ball(gs.u, barycenter(gs.u), r),
                                  2.0 * L, opts.fit_fraction * eps)
            if L >= 8.0 * r_hat:
                break
            L = math.ceil(8.0 * r_hat)
        make = make_admissible_large
    eo = _evolve_opts(model, h, T, opts)
    if not gs.converged:
        return {"h": h, "valid": False, "reasons": ["ground state not converged"]}, None
    datum = make(gs, K, h, model, opts.perturbation, opts.phase)
    out = _point_base(h, model, gs, datum, eo)
    if not datum.accepted:
        out.update(valid=False, reasons=list(datum.reasons))
        return out, None
    psi0 = datum.psi0
    domain = psi0.grid.domain
    u0 = abs(psi0)
    q0 = barycenter(psi0)
    r_max = domain.diameter / hb
    R = bisect_radius(lambda r: fit_center_h1(u0, hb * r, q0)[1], r_max, opts.fit_fraction * eps)
    v_values = potential_values(psi0.grid, model)
    centers, shell = [], []
    state = {"center": fit_center_h1(u0, hb * R, q0)[0]}
    layer = hb * R

    def sample_fn(psi, t):
        u = abs(psi)
        c, ratio = fit_center_h1(u, hb * R, state["center"])
        state["center"] = c
        centers.append(c)
        s = diagnostics(psi, model, t, h, v_values=v_values)
        s.grad_out_ratio = ratio
        shell.append(boundary_layer_fraction(psi, layer))
        return s

    rec = evolve(psi0, model, h, eo, sample_fn=sample_fn)
    ratio = rec.series("grad_out_ratio")
    half = min(domain.half_widths) if domain.kind == "box" else domain.radius
    out.update(
        valid=rec.max_charge_drift <= CHARGE_GATE and rec.max_energy_drift <= ENERGY_GATE,
        reasons=[], R=R, metric_t0=float(ratio[0]), sup_metric=float(ratio.max()),
        passed=bool(ratio.max() < eps), R_required=R,
        charge_drift=rec.max_charge_drift, energy_drift=rec.max_energy_drift,
        box_half_width_scaled=half / hb, sup_boundary_mass=float(max(shell)),
        boundary_layer=layer,
    )
    if setting == "large_box":
        out["box_ratio"] = half / (hb * R)
        ok = out["sup_boundary_mass"] < opts.boundary_mass_gate and out["box_ratio"] >= 8.0
        out["valid"] = out["valid"] and ok
        if not ok:
            out["reasons"] = ["large box too small or boundary mass above gate"]
    dim = psi0.grid.dim
    ax = "xyz"[:dim]
    header = (["t", "charge", "energy"] + [f"q{a}" for a in ax] + [f"c{a}" for a in ax]
              + ["grad_out", "boundary_mass"])
    rows = [[s.t, s.charge, s.energy, *s.barycenter, *c, s.grad_out_ratio, b]
            for s, c, b in zip(rec.samples, centers, shell)]
    return out, (header, rows)


def h1_localization_sweep(model: ModelSpec, K: float, h_list, T: float, eps: float,
                          setting: str = "bounded", opts: LocalizationOptions | None = None,
                          jobs: int = 1) -> SweepResult:
    """Outside share of ``int |grad |psi||^2`` for balls ``B(q_hat(t), h^beta R)``.

    The radius is bisected at ``t = 0``; the center is re-fitted at every
    sample time (coarse lattice search plus refinement). ``setting`` is
    ``"bounded"`` (data with the bounded-domain budgets) or ``"large_box"``
    (whole-space budgets on a box of half-width at least ``8 h^beta R``
    with the outer-shell charge monitored).
    """
    if setting not in ("bounded", "large_box"):
        raise ExperimentError(f"unknown setting {setting!r}")
    opts = opts or LocalizationOptions()
    h_list = [float(h) for h in h_list]
    if any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise ExperimentError("h_list must be strictly decreasing")
    results = _run_jobs(_h1_job, [(model, K, h, T, eps, setting, opts) for h in h_list], jobs)
    points = [r[0] for r in results]
    traces = {f"h{i}": r[1] for i, r in enumerate(results) if r[1] is not None}
    gates, info = _localization_verdict(points, eps)
    if setting == "large_box":
        gates["boundary_mass"] = all(p.get("sup_boundary_mass", 1.0) < opts.boundary_mass_gate
                                     for p in points if p.get("valid"))
    params = {"model": model_dict(model), "K": K, "h_list": h_list, "T": T, "eps": eps,
              "setting": setting, "options": opts.as_dict()}
    return SweepResult(f"sweep-h1-{setting}", params, points, _verdict(gates, **info),
                       {"eps": eps, "R_variation": 0.2, "boundary_mass": opts.boundary_mass_gate,
                        "charge": CHARGE_GATE, "energy": ENERGY_GATE}, traces)


def model_dict(model: ModelSpec) -> dict:
    W, V = model.W, model.V
    out = {"W": W.family, "p": model.p, "V": V.family, "alpha": model.alpha,
           "sigma": model.sigma, "h": model.h}
    if V.family == "quadratic":
        out["v2"] = V.v2
        out["v_center"] = list(V.center)
    return out


# barycenter force law ----------------------------------------------------------
def _five_point(values: np.ndarray, spacing: float) -> tuple[float, float]:
    f = values
    d1 = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12.0 * spacing)
    d2 = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12.0 * spacing**2)
    return d1, d2


def newton_law_check(record: TrajectoryRecord, model: ModelSpec, check_times, spacing: float) -> dict:
    """Momentum and Newton laws of the barycenter at each check time.

    Needs snapshots at ``t + j * spacing``, ``j = -2..2``. With ``C`` the
    conserved charge, the momentum gap is ``|d/dt q - P / C|`` and the Newton
    gap is ``|d^2/dt^2 q - (F_V + F_b) / C|`` (max over components), where
    ``F_V = -int u^2 grad V`` and ``F_b = 1/2 int_{boundary} |grad u|^2 n``.
    """
    snaps = record.snapshots
    keys = np.array(sorted(snaps))
    if len(keys) < 5:
        raise ExperimentError("newton_law_check needs at least 5 snapshots per check time")
    rows = []
    for t in check_times:
        states = []
        for j in (-2, -1, 0, 1, 2):
            target = t + j * spacing
            i = int(np.argmin(np.abs(keys - target)))
            if abs(keys[i] - target) > 1e-9 * max(1.0, abs(target)) + 0.25 * spacing:
                raise ExperimentError(f"no snapshot near t = {target:.6g}")
            states.append(snaps[keys[i]])
        c = charge(states[2])
        qs = np.array([barycenter(s) for s in states])
        qd = np.empty(qs.shape[1])
        qdd = np.empty(qs.shape[1])
        for k in range(qs.shape[1]):
            qd[k], qdd[k] = _five_point(qs[:, k], spacing)
        psi = states[2]
        u = abs(psi)
        P = momentum(psi)
        fb = boundary_force(u)
        fv = potential_force(u, model)
        rows.append({
            "t": float(t), "charge": c, "qdot": qd, "momentum_over_charge": P / c,
            "qddot": qdd, "boundary_force": fb / c, "potential_force": fv / c,
            "momentum_gap": float(np.max(np.abs(qd - P / c))),
            "newton_gap": float(np.max(np.abs(qdd - (fb + fv) / c))),
        })
    return {
        "checks": rows,
        "max_momentum_gap": max(r["momentum_gap"] for r in rows),
        "max_newton_gap": max(r["newton_gap"] for r in rows),
        "max_boundary_force": max(float(np.max(np.abs(r["boundary_force"]))) for r in rows),
        "max_potential_force": max(float(np.max(np.abs(r["potential_force"]))) for r in rows),
    }


def _newton_job(args):
    model, domain, nodes, dt, T, check_times, phase, sigma, gs_opts = args
    grid = build_grid(domain, nodes)
    base = model.with_(V=Potential()) if model.V.family != "zero" else model
    gs = minimize_on_sphere(base, grid, sigma, gs_opts)
    if phase is not None and phase.fraction > 0:
        s, k, _ = _phase(grid, phase, phase.fraction, barycenter(gs.u))
        psi0 = Field(grid, gs.u.values * np.exp(1j * s.values))
    else:
        psi0 = Field(grid, gs.u.values + 0j)
    times = sorted({round(t + j * dt, 12) for t in check_times for j in (-2, -1, 0, 1, 2)})
    rec = evolve(psi0, model, 1.0, EvolveOpts(dt=dt, T=T, sample_every=max(1, int(round(T / dt))),
                                                snapshot_times=tuple(times)))
    rep = newton_law_check(rec, model, check_times, dt)
    rep.update(nodes=nodes, dt=dt, dx=grid.spacing[0], gs_residual=gs.residual,
               gs_converged=gs.converged, charge_drift=rec.max_charge_drift,
               energy_drift=rec.max_energy_drift)
    return rep


def _ls_slope(x, y) -> float:
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def newton_refinement_study(model: ModelSpec | None = None, *, domain: DomainSpec | None = None,
                            levels=((201, 2e-3), (401, 1e-3), (801, 5e-4), (1601, 2.5e-4)),
                            T: float = 1.6, check_times=None, kick: float = 1.0,
                            sigma: float = 1.0, momentum_floor: float = 1e-6,
                            order_min: float = 1.8, force_tol: float = 1e-6,
                            gs_opts: GroundStateOptions | None = None, jobs: int = 1) -> SweepResult:
    """Force-law check at ``h = 1`` under simultaneous ``dt`` and ``dx`` halving.

    Kicked run: ground state of the ``V = 0`` problem multiplied by
    ``exp(i s)`` with the boundary-flat phase (gradient ``kick`` at the
    center, zero on the walls), evolved with ``model`` (quadratic ``V``).
    Stationary run: the centered real ground state with ``V = 0``.

    Gates: momentum gap at every level ``<= momentum_floor + C dt^2`` with
    ``C`` the largest Richardson estimate between consecutive levels;
    least-squares order of the Newton gap ``>= order_min``; both force
    terms of the stationary run below ``force_tol``.
    """
    model = model or ModelSpec(W=Nonlinearity("sin_power", 3.0), alpha=1.0,
                               V=Potential("quadratic", 1.0, (0.0,)))
    domain = domain or DomainSpec.box([-1.0], [1.0])
    gs_opts = gs_opts or GroundStateOptions(tol_res=1e-11, n_starts=2)
    check_times = list(check_times) if check_times is not None else [
        round(0.1 * i, 10) for i in range(1, 16)]
    phase = PhaseSpec(fraction=kick, profile="boundary_flat")
    args = [(model, domain, n, dt, T, check_times, phase, sigma, gs_opts) for n, dt in levels]
    stat_model = model.with_(V=Potential())
    n_mid, dt_mid = levels[len(levels) // 2]
    args.append((stat_model, domain, n_mid, dt_mid, T, check_times, None, sigma, gs_opts))
    reps = _run_jobs(_newton_job, args, jobs)
    kicked, stationary = reps[:-1], reps[-1]
    dts = [r["dt"] for r in kicked]
    mg = [r["max_momentum_gap"] for r in kicked]
    ng = [r["max_newton_gap"] for r in kicked]
    rich = [(a - b) / (da**2 - db**2) for a, b, da, db in zip(mg, mg[1:], dts, dts[1:])]
    C = max(rich) if rich else float("nan")
    mom_ok = all(g <= momentum_floor + C * d * d for g, d in zip(mg, dts))
    order = _ls_slope(dts, ng)
    pair_orders = [math.log(a / b) / math.log(da / db) for a, b, da, db in zip(ng, ng[1:], dts, dts[1:])]
    traces = {}
    per_point = []
    for r in kicked + [stationary]:
        label = f"n{r['nodes']}" if r is not stationary else "stationary"
        checks = r.pop("checks")
        dim = len(checks[0]["qdot"])
        ax = "xyz"[:dim]
        header = (["t", "charge"] + [f"qdot_{a}" for a in ax] + [f"P_over_C_{a}" for a in ax]
                  + [f"qddot_{a}" for a in ax] + [f"Fb_{a}" for a in ax] + [f"Fv_{a}" for a in ax]
                  + ["momentum_gap", "newton_gap"])
        traces[label] = (header, [[c["t"], c["charge"], *c["qdot"], *c["momentum_over_charge"],
                                   *c["qddot"], *c["boundary_force"], *c["potential_force"],
                                   c["momentum_gap"], c["newton_gap"]] for c in checks])
        per_point.append({"run": label, **r})
    gates = {
        "momentum_law": bool(rich) and mom_ok,
        "newton_order": order >= order_min,
        "stationary_forces": stationary["max_boundary_force"] < force_tol
        and stationary["max_potential_force"] < force_tol,
    }
    params = {"model": model_dict(model), "domain": _domain_dict(domain),
              "levels": [list(lv) for lv in levels], "T": T, "check_times": check_times,
              "kick": kick, "sigma": sigma}
    return SweepResult("newton", params, per_point,
                       _verdict(gates, richardson_C=C, richardson_estimates=rich,
                                newton_order=order, newton_pair_orders=pair_orders),
                       {"momentum_floor": momentum_floor, "order_min": order_min,
                        "force_tol": force_tol}, traces)


__all__ = [
    "AdmissibleDatum", "Check", "ConservationCase", "ExperimentError", "LocalizationOptions",
    "PerturbationSpec", "PhaseSpec", "SweepResult", "barycenter_confinement", "bisect_radius",
    "boundary_layer_fraction", "canonical_conservation_cases", "conservation_suite",
    "fit_center_h1", "h1_inner", "h1_localization_sweep", "h1_norm_field", "kendall_tau",
    "l2_localization_sweep", "make_admissible_bounded", "make_admissible_large",
    "minimal_mass_radius", "model_dict", "newton_law_check", "newton_refinement_study",
    "orbit_distance", "orbit_distance_grid", "orbital_stability_run", "scaled_ground_state",
]
