import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlselab.evolution import EvolutionError, EvolveOpts, Stepper, evolve, modulus_and_kinetic_phase, step
from nlselab.functionals import charge, kinetic_phase_density, total_energy
from nlselab.grid import DomainSpec, build_grid
from nlselab.model import ModelSpec, Nonlinearity, Potential


def kicked(grid, k=1.0, c=0.1):
    x = grid.coords[0]
    return grid.sample(lambda *xs: np.exp(-sum((a - c) ** 2 for a in xs) / 0.09)) * np.exp(1j * k * x)


class TestStep:
    def test_zero_dt_identity(self, sin3, grid1d):
        psi = kicked(grid1d)
        out = step(psi, sin3, 1.0, EvolveOpts(dt=0.0))
        npt.assert_array_equal(out.values, psi.values)

    def test_negative_dt_rejected(self):
        with pytest.raises(ValueError):
            EvolveOpts(dt=-1e-3)

    def test_zero_datum(self, sin3, grid1d):
        out = step(grid1d.zeros(complex), sin3, 1.0, EvolveOpts(dt=1e-2))
        assert np.all(out.values == 0)

    def test_linear_mode_phase(self):
        g = build_grid(DomainSpec.box([0.0], [1.0]), 101)
        m = ModelSpec(W=Nonlinearity("zero"))
        dx = g.spacing[0]
        mu = 4.0 / dx**2 * math.sin(math.pi * dx / 2) ** 2
        u = g.sample(lambda x: np.sin(np.pi * x)) * (1 + 0j)
        dt = 1e-2
        c = (1 - 0.25j * dt * mu) / (1 + 0.25j * dt * mu)
        out = step(u, m, 1.0, EvolveOpts(dt=dt))
        npt.assert_allclose(out.values, c * u.values, atol=1e-13)

    def test_stationary_phase(self, sin3, ground1d):
        dt = 1e-3
        psi = ground1d.u * (1 + 0j)
        rec = evolve(psi, sin3, 1.0, EvolveOpts(dt=dt, T=0.05, snapshot_times=(0.05,)))
        out = rec.snapshots[0.05]
        expected = np.exp(-0.5j * ground1d.lam * 0.05) * psi.values
        npt.assert_allclose(out.values, expected, atol=1e-6)

    def test_trace_stays_zero(self, sin3, grid2d):
        out = step(kicked(grid2d), sin3, 1.0, EvolveOpts(dt=1e-2))
        assert np.all(out.values[~grid2d.mask] == 0)

    def test_fixed_point_failure_raises(self, sin3, grid1d):
        psi = kicked(grid1d) * 3.0
        with pytest.raises(EvolutionError, match="t = "):
            evolve(psi, sin3, 1.0, EvolveOpts(dt=0.05, T=0.05, fp_max=1))


@settings(max_examples=20, deadline=None)
@given(theta=st.floats(0, 2 * math.pi))
def test_phase_equivariance(theta):
    m = ModelSpec(W=Nonlinearity("sin_power", 3.0), V=Potential("quadratic", 1.0, (0.0,)))
    g = build_grid(DomainSpec.box([-1.0], [1.0]), 81)
    psi = kicked(g)
    rot = np.exp(1j * theta)
    a = step(psi * rot, m, 0.5, EvolveOpts(dt=1e-2)).values
    b = rot * step(psi, m, 0.5, EvolveOpts(dt=1e-2)).values
    npt.assert_allclose(a, b, atol=1e-11)


@pytest.mark.parametrize("dim", [1, 2])
def test_time_reversibility(dim):
    m = ModelSpec(W=Nonlinearity("sin_power", 3.0), V=Potential("quadratic", 1.0, (0.0,) * dim))
    g = build_grid(DomainSpec.box([-1.0] * dim, [1.0] * dim), 81 if dim == 1 else 33)
    psi = kicked(g)
    opts = EvolveOpts(dt=1e-2)
    fwd = step(psi, m, 0.7, opts)
    back = step(fwd.conj(), m, 0.7, opts).conj()
    npt.assert_allclose(back.values, psi.values, atol=1e-10)


@pytest.mark.parametrize("dom", [DomainSpec.box([-1.0], [1.0]), DomainSpec.box([-1.0, -1.0], [1.0, 1.0]),
                                 DomainSpec.ball([0.0, 0.0], 1.0)])
def test_charge_and_energy_conserved(dom):
    m = ModelSpec(W=Nonlinearity("sin_power", 3.0), V=Potential("quadratic", 1.0, (0.0,) * dom.dim))
    g = build_grid(dom, 101 if dom.dim == 1 else 33)
    rec = evolve(kicked(g), m, 0.8, EvolveOpts(dt=1e-3, T=0.05))
    assert rec.max_charge_drift < 1e-10
    assert rec.max_energy_drift < 1e-6


def test_strang_matches_crank_nicolson():
    m = ModelSpec(W=Nonlinearity("sin_power", 3.0))
    g = build_grid(DomainSpec.box([-1.0, -1.0], [1.0, 1.0]), 33)
    psi = kicked(g)
    a = evolve(psi, m, 1.0, EvolveOpts(dt=1e-3, T=0.02, snapshot_times=(0.02,))).snapshots[0.02]
    b = evolve(psi, m, 1.0, EvolveOpts(dt=1e-3, T=0.02, scheme="strang_splitting",
                                       snapshot_times=(0.02,))).snapshots[0.02]
    npt.assert_allclose(b.values, a.values, atol=1e-4)
    npt.assert_allclose(charge(b), charge(psi), rtol=1e-12)


def test_strang_needs_box(sin3):
    g = build_grid(DomainSpec.ball([0.0, 0.0], 1.0), 21)
    with pytest.raises(ValueError):
        Stepper(g, sin3, 1.0, 1e-2, "strang_splitting")


def test_second_order_in_time(sin3):
    g = build_grid(DomainSpec.box([-1.0], [1.0]), 51)
    psi = kicked(g)
    out = [evolve(psi, sin3, 1.0, EvolveOpts(dt=dt, T=0.04, snapshot_times=(0.04,))).snapshots[0.04].values
           for dt in (2e-3, 1e-3, 5e-4)]
    ratio = np.max(np.abs(out[0] - out[1])) / np.max(np.abs(out[1] - out[2]))
    npt.assert_allclose(ratio, 4.0, rtol=0.05)


def test_record_sampling(sin3, grid1d):
    rec = evolve(kicked(grid1d), sin3, 1.0, EvolveOpts(dt=1e-2, T=0.1, sample_every=3, snapshot_every=5))
    npt.assert_allclose(rec.times, [0.0, 0.03, 0.06, 0.09, 0.1], atol=1e-14)
    assert sorted(rec.snapshots) == pytest.approx([0.0, 0.05, 0.1])
    assert all(len(r) == len(rec.rows()[0]) for r in rec.rows())


def test_modulus_and_phase_split(grid1d):
    psi = kicked(grid1d, k=2.0)
    mod, dens = modulus_and_kinetic_phase(psi)
    npt.assert_allclose(mod.values, np.abs(psi.values), rtol=1e-15)
    npt.assert_array_equal(dens.values, kinetic_phase_density(psi))


def test_energy_nearly_constant_against_direct(quad_model, ground1d):
    g = ground1d.u.grid
    psi = ground1d.u * np.exp(0.5j * g.axes[0])
    rec = evolve(psi, quad_model, 0.5, EvolveOpts(dt=1e-3, T=0.02))
    npt.assert_allclose(rec.samples[0].energy, total_energy(psi, quad_model, 0.5), rtol=1e-14)
    assert rec.max_energy_drift < 1e-7
