import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlselab.functionals import ActionScaling, action_J, charge
from nlselab.grid import DomainSpec, GridError, build_grid
from nlselab.ground_state import (
    GroundStateError, GroundStateOptions, ball_infimum_sweep, cutoff_comparison, flow_history,
    initial_guesses, lagrange_multiplier, map_from_inflated, map_to_inflated, minimize_on_sphere,
    rescaled_infimum_check, residual_norm, smooth_cutoff,
)
from nlselab.model import ModelSpec, Nonlinearity

TIGHT = GroundStateOptions(tol_res=1e-10, n_starts=2)


class TestLinearMode:
    def test_first_dirichlet_eigenvalue(self):
        g = build_grid(DomainSpec.box([0.0], [1.0]), 201)
        m = ModelSpec(W=Nonlinearity("zero"), sigma=1.0)
        gs = minimize_on_sphere(m, g, 1.0, TIGHT)
        dx = g.spacing[0]
        lam = 4.0 / dx**2 * math.sin(math.pi * dx / 2) ** 2
        npt.assert_allclose(gs.lam, lam, rtol=1e-10)
        npt.assert_allclose(gs.m_value, 0.5 * lam, rtol=1e-10)

    def test_eigenfunction_shape(self):
        g = build_grid(DomainSpec.box([0.0], [1.0]), 101)
        gs = minimize_on_sphere(ModelSpec(W=Nonlinearity("zero")), g, 1.0, TIGHT)
        expected = math.sqrt(2) * np.sin(math.pi * g.axes[0])
        sign = np.sign(gs.u.values[50])
        npt.assert_allclose(sign * gs.u.values, expected, atol=1e-4)

    def test_sigma_scaling(self):
        g = build_grid(DomainSpec.box([0.0], [1.0]), 101)
        m = ModelSpec(W=Nonlinearity("zero"))
        a = minimize_on_sphere(m, g, 1.0, TIGHT)
        b = minimize_on_sphere(m, g, 3.0, TIGHT)
        npt.assert_allclose(b.m_value, 9.0 * a.m_value, rtol=1e-10)
        npt.assert_allclose(b.lam, a.lam, rtol=1e-10)


class TestNonlinear:
    def test_constraint_and_residual(self, ground1d):
        npt.assert_allclose(charge(ground1d.u), 1.0, rtol=1e-12)
        assert ground1d.converged
        assert ground1d.residual <= 1e-10 * ground1d.h1_norm

    def test_action_matches_reported_value(self, sin3, ground1d):
        npt.assert_allclose(action_J(ground1d.u, sin3), ground1d.m_value, rtol=1e-12)

    def test_multiplier_least_squares(self, sin3, ground1d):
        u = ground1d.u
        lam = lagrange_multiplier(u, sin3)
        base = residual_norm(u, lam, sin3)
        for d in (1e-3, -1e-3):
            assert residual_norm(u, lam + d, sin3) >= base

    def test_nonnegative_single_signed(self, ground2d):
        v = ground2d.u.values[ground2d.u.grid.mask]
        assert np.all(v >= -1e-12) or np.all(v <= 1e-12)

    def test_multistart_agrees(self, sin3, grid1d):
        gs = minimize_on_sphere(sin3, grid1d, 1.0, GroundStateOptions(tol_res=1e-9, n_starts=6))
        assert gs.converged
        assert gs.spread < 1e-6

    def test_summary_keys(self, ground1d):
        s = ground1d.summary()
        assert {"lambda", "m_value", "residual", "converged", "start_values"} <= set(s)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_sigma_must_be_positive(self, sin3, grid1d, sigma):
        with pytest.raises(GroundStateError):
            minimize_on_sphere(sin3, grid1d, sigma, TIGHT)

    def test_zero_multiplier_field(self, sin3, grid1d):
        with pytest.raises(GroundStateError):
            lagrange_multiplier(grid1d.zeros(), sin3)


@pytest.mark.parametrize("method", ["flow", "cg"])
def test_flow_history_nonincreasing(sin3, grid1d, method):
    opts = GroundStateOptions(tol_res=1e-8, method=method, max_iter=500)
    u0 = initial_guesses(grid1d, 1, 0)[0]
    hist = np.array(flow_history(sin3, grid1d, 1.0, opts, u0))
    assert len(hist) > 2
    assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[1:]).max())


def test_initial_guesses_deterministic(grid2d):
    a = initial_guesses(grid2d, 5, 7)
    b = initial_guesses(grid2d, 5, 7)
    assert len(a) == 5
    for x, y in zip(a, b):
        npt.assert_array_equal(x, y)


class TestCutoff:
    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 5.0))
    def test_cutoff_range(self, r):
        v = smooth_cutoff(np.array([r]), 2.0)[0]
        assert 0.0 <= v <= 1.0
        if r <= 1.0:
            assert v == 1.0
        if r >= 2.0:
            assert v == 0.0

    def test_comparison_normalized_and_supported(self, ground2d):
        w, t_n = cutoff_comparison(ground2d.u, 0.6, 1.0)
        npt.assert_allclose(charge(w), 1.0, rtol=1e-12)
        assert t_n >= 1.0
        g = w.grid
        r = np.sqrt(g.coords[0] ** 2 + g.coords[1] ** 2)
        assert np.all(w.values[r >= 0.6] == 0.0)

    def test_radius_must_fit(self, ground2d):
        with pytest.raises(GridError):
            cutoff_comparison(ground2d.u, 1.5)


def test_ball_sweep_monotone():
    m = ModelSpec(W=Nonlinearity("sin_power", 3.0))
    sw = ball_infimum_sweep(m, 1.5, [1.0, 2.0, 3.0], 0.02, GroundStateOptions(tol_res=1e-8, n_starts=2))
    assert sw.monotone
    vals = [e.m_value for e in sw.entries]
    assert vals[0] >= vals[1] >= vals[2] - 1e-9
    assert sw.plateau_gap is not None


def test_ball_sweep_rejects_unsorted(sin3):
    with pytest.raises(GroundStateError):
        ball_infimum_sweep(sin3, 1.0, [2.0, 1.0], 0.1)


class TestRescaling:
    def test_h_one_trivial(self, sin3):
        r = rescaled_infimum_check(sin3, 1.0, 1.0, DomainSpec.box([-1.0], [1.0]), 101, TIGHT)
        assert r.gap == 0.0

    def test_independent_minimizations_agree(self, sin3):
        r = rescaled_infimum_check(sin3, 1.0, 0.5, DomainSpec.box([-1.0], [1.0]), 101,
                                   GroundStateOptions(tol_res=1e-9, n_starts=2))
        assert r.reliable
        assert r.gap < 1e-10

    def test_semiclassical_constraint(self, sin3):
        h = 0.5
        r = rescaled_infimum_check(sin3, 1.0, h, DomainSpec.box([-1.0], [1.0]), 101, TIGHT)
        sc = ActionScaling.semiclassical(h, sin3.alpha, 1)
        npt.assert_allclose(sc.measure * charge(r.direct.u), 1.0, rtol=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(h=st.floats(0.2, 0.9), alpha=st.floats(0.5, 3.0))
    def test_map_round_trip(self, h, alpha):
        from nlselab.grid import inflate_domain
        dom = DomainSpec.box([-1.0], [1.0])
        g = build_grid(dom, 41)
        big = build_grid(inflate_domain(dom, h, alpha), 41)
        u = g.sample(lambda x: (1 - x**2) * np.cos(x))
        back = map_from_inflated(map_to_inflated(u, big, h, alpha), g, h, alpha)
        npt.assert_allclose(back.values, u.values, atol=1e-13)
