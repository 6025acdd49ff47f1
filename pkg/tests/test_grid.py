import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nlselab.grid import (
    DomainSpec, Field, GridError, boundary_flux_samples, build_grid, build_grid_spacing,
    dirichlet_form, field_to_binary, field_to_csv, format_real, gradient, inflate_domain,
    integrate, laplacian, read_binary_header, transfer,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def unit_interval(n):
    return build_grid(DomainSpec.box([0.0], [1.0]), n)


class TestBuildGrid:
    def test_unit_interval_eleven_nodes(self):
        g = unit_interval(11)
        npt.assert_allclose(g.spacing[0], 0.1, rtol=1e-15)
        assert g.n_interior == 9

    def test_ball_mask_is_open_disc(self):
        g = build_grid(DomainSpec.ball([0.0, 0.0], 1.0), 21)
        X, Y = g.coords
        npt.assert_array_equal(g.mask, X**2 + Y**2 < 1.0 - 1e-12)
        assert g.mask.sum() > 0

    def test_too_few_nodes(self):
        with pytest.raises(GridError):
            build_grid(DomainSpec.box([0.0, 0.0], [1.0, 1.0]), 4)

    def test_dimension_guard(self):
        with pytest.raises(GridError):
            build_grid(DomainSpec.box([0.0] * 4, [1.0] * 4), 8)

    @pytest.mark.parametrize("bad", [
        lambda: DomainSpec.box([0.0], [0.0]),
        lambda: DomainSpec.ball([0.0], -1.0),
        lambda: DomainSpec("cylinder", (0.0,)),
    ])
    def test_rejects_invalid_domains(self, bad):
        with pytest.raises(GridError):
            bad()

    def test_every_node_classified_once(self):
        g = build_grid(DomainSpec.ball([0.1, -0.2], 0.7), 33)
        assert g.mask.dtype == bool and g.mask.shape == g.shape

    def test_fixed_spacing_nests(self):
        small = build_grid_spacing(DomainSpec.box([-1.0], [1.0]), 0.01)
        big = build_grid_spacing(DomainSpec.box([-2.0], [2.0]), 0.01)
        npt.assert_allclose(small.axes[0], big.axes[0][100:301], atol=1e-12)

    def test_inward_normals_are_unit_and_point_inside(self):
        g = build_grid(DomainSpec.ball([0.0, 0.0], 1.0), 41)
        f = g.sample(lambda x, y: 1.0 - x**2 - y**2)
        area, normal, _ = boundary_flux_samples(f)
        npt.assert_allclose(np.linalg.norm(normal, axis=1), 1.0)
        interior, _, axis, sign, _ = g.boundary_faces()
        pts = g.points().reshape(-1, 2)[interior]
        # the node one step outward is outside the domain
        outward = pts.copy()
        outward[np.arange(len(pts)), axis] -= sign * g.spacing[0]
        assert np.all(np.linalg.norm(outward, axis=1) >= 1.0 - 1e-12)
        assert np.all(area > 0)


class TestInflate:
    def test_box_example(self):
        d = inflate_domain(DomainSpec.box([-1.0], [1.0]), 0.25, 1.0)
        assert d.kind == "box"
        npt.assert_allclose(d.bounds, [(-8.0, 8.0)], rtol=1e-14)

    def test_ball_example(self):
        d = inflate_domain(DomainSpec.ball([0.0, 0.0], 2.0), 0.5, 2.0)
        npt.assert_allclose(d.radius, 8.0, rtol=1e-14)

    def test_h_near_one(self):
        dom = DomainSpec.box([-1.0, 0.0], [1.0, 3.0])
        d = inflate_domain(dom, 1.0 - 1e-12, 3.0)
        npt.assert_allclose(d.bounds, dom.bounds, rtol=1e-10)

    @pytest.mark.parametrize("h", [1.0, 1.5, 0.0, -0.1])
    def test_rejects_h(self, h):
        with pytest.raises(GridError):
            inflate_domain(DomainSpec.box([-1.0], [1.0]), h, 1.0)

    @given(h=st.floats(0.05, 0.95), alpha=st.floats(0.1, 4.0))
    def test_round_trip(self, h, alpha):
        dom = DomainSpec.box([-1.0, -0.5], [2.0, 0.5])
        back = inflate_domain(dom, h, alpha).scaled(h ** (1 + alpha / 2))
        npt.assert_allclose(back.bounds, dom.bounds, rtol=1e-12, atol=1e-12)


class TestCalculus:
    def test_integrate_sine(self):
        errs = []
        for n in (101, 201):
            g = unit_interval(n)
            errs.append(abs(integrate(g.sample(lambda x: np.sin(np.pi * x))) - 2 / np.pi))
        assert errs[1] < 1e-4
        npt.assert_allclose(errs[0] / errs[1], 4.0, rtol=0.05)

    def test_integrate_zero(self):
        assert integrate(unit_interval(21).zeros()) == 0.0

    def test_gradient_of_linear_function(self):
        g = unit_interval(21)
        d = gradient(g.sample(lambda x: 3.0 * x + 1.0))[0].values
        npt.assert_allclose(d[2:-2], 3.0, rtol=1e-12)

    def test_gradient_antisymmetric_for_symmetric_bump(self):
        g = build_grid(DomainSpec.box([-1.0], [1.0]), 51)
        d = gradient(g.sample(lambda x: np.exp(-4 * x**2)))[0].values
        npt.assert_allclose(d, -d[::-1], atol=1e-14)

    def test_gradient_of_sine(self):
        g = unit_interval(201)
        d = gradient(g.sample(lambda x: np.sin(np.pi * x)))[0].values
        exact = np.pi * np.cos(np.pi * g.axes[0])
        assert np.max(np.abs(d - exact)[1:-1]) < 1e-3

    def test_laplacian_of_sine(self):
        g = unit_interval(201)
        lap = laplacian(g.sample(lambda x: np.sin(np.pi * x))).values
        exact = -np.pi**2 * np.sin(np.pi * g.axes[0])
        assert np.max(np.abs(lap - exact)) < 1e-3

    def test_laplacian_sees_zero_ghost(self):
        g = unit_interval(11)
        lap = laplacian(g.field(np.ones(11))).values
        dx2 = g.spacing[0] ** 2
        npt.assert_allclose(lap[1], -1.0 / dx2, rtol=1e-12)
        npt.assert_allclose(lap[5], 0.0, atol=1e-9)

    def test_laplacian_eigenvector(self):
        g = unit_interval(41)
        dx = g.spacing[0]
        f = g.sample(lambda x: np.sin(3 * np.pi * x))
        mu = -4.0 / dx**2 * math.sin(3 * math.pi * dx / 2) ** 2
        npt.assert_allclose(laplacian(f).values, mu * f.values, atol=1e-10)

    def test_ball_laplacian_uses_mask(self):
        g = build_grid(DomainSpec.ball([0.0, 0.0], 1.0), 21)
        lap = laplacian(g.field(np.ones(g.shape))).values
        assert np.all(lap[~g.mask] == 0)


class TestBoundaryFlux:
    def test_sine_flux_at_left_end(self):
        g = unit_interval(401)
        f = g.sample(lambda x: np.sin(np.pi * x))
        area, normal, grad_sq = boundary_flux_samples(f, scheme="one_sided2")
        left = normal[:, 0] > 0
        npt.assert_allclose(grad_sq[left], np.pi**2, rtol=1e-4)
        npt.assert_allclose(area, 1.0)
        _, _, edge = boundary_flux_samples(f)
        npt.assert_allclose(edge[left], np.pi**2, rtol=1e-2)

    def test_radial_field_on_ball_balances(self):
        g = build_grid(DomainSpec.ball([0.0, 0.0], 1.0), 41)
        f = g.sample(lambda x, y: 1.0 - x**2 - y**2)
        area, normal, grad_sq = boundary_flux_samples(f)
        npt.assert_allclose(np.sum((area * grad_sq)[:, None] * normal, axis=0), 0.0, atol=1e-10)

    def test_ground_state_flux_symmetric(self, ground1d):
        _, normal, grad_sq = boundary_flux_samples(ground1d.u)
        left, right = grad_sq[normal[:, 0] > 0], grad_sq[normal[:, 0] < 0]
        npt.assert_allclose(left, right, rtol=1e-4)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            boundary_flux_samples(unit_interval(11).zeros(), scheme="spline")


class TestFields:
    def test_trace_is_zero(self):
        g = unit_interval(11)
        f = g.field(np.ones(11))
        assert f.values[0] == 0 and f.values[-1] == 0

    def test_values_are_read_only(self):
        f = unit_interval(11).field(np.ones(11))
        with pytest.raises(ValueError):
            f.values[3] = 2.0

    def test_different_grids_do_not_combine(self):
        with pytest.raises(GridError):
            unit_interval(11).zeros() + unit_interval(12).zeros()

    def test_transfer_zero_extension(self):
        small = build_grid_spacing(DomainSpec.box([-1.0], [1.0]), 0.1)
        big = build_grid_spacing(DomainSpec.box([-2.0], [2.0]), 0.1)
        f = small.sample(lambda x: 1 - x**2)
        F = transfer(f, big)
        npt.assert_allclose(integrate(F), integrate(f), rtol=1e-14)


# summation by parts and linearity ----------------------------------------------
grids_for_sbp = [
    build_grid(DomainSpec.box([0.0], [1.0]), 17),
    build_grid(DomainSpec.box([-1.0, 0.0], [1.0, 0.5]), (12, 9)),
    build_grid(DomainSpec.ball([0.0, 0.0], 1.0), 13),
    build_grid(DomainSpec.box([0.0] * 3, [1.0] * 3), 8),
]


@pytest.mark.parametrize("grid", grids_for_sbp, ids=["1d", "2d_box", "2d_ball", "3d"])
@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_summation_by_parts(grid, data):
    # bilinear identity: normalizing avoids underflow of the relative scale
    raw = [data.draw(arrays(float, grid.shape, elements=finite)) for _ in range(2)]
    f, g = (grid.field(r / max(np.max(np.abs(r)), 1e-300)) for r in raw)
    lhs = integrate(-laplacian(f) * g)
    rhs = dirichlet_form(f, g)
    scale = math.sqrt(dirichlet_form(f) * dirichlet_form(g)) + 1e-300
    assert abs(lhs - rhs) <= 1e-10 * scale


@pytest.mark.parametrize("grid", grids_for_sbp[:3], ids=["1d", "2d_box", "2d_ball"])
@settings(max_examples=25, deadline=None)
@given(data=st.data(), a=finite, b=finite)
def test_operators_are_linear(grid, data, a, b):
    f = grid.field(data.draw(arrays(float, grid.shape, elements=finite)))
    g = grid.field(data.draw(arrays(float, grid.shape, elements=finite)))
    combo = laplacian(a * f + b * g).values
    npt.assert_allclose(combo, a * laplacian(f).values + b * laplacian(g).values,
                        atol=1e-9 * (1 + np.max(np.abs(combo))))
    for gc, gf, gg in zip(gradient(a * f + b * g), gradient(f), gradient(g)):
        npt.assert_allclose(gc.values, a * gf.values + b * gg.values,
                            atol=1e-9 * (1 + np.max(np.abs(gc.values))))


@settings(max_examples=30, deadline=None)
@given(h=st.floats(0.1, 0.9), alpha=st.sampled_from([1.0, 2.0]), dim=st.sampled_from([1, 2]))
def test_node_to_node_jacobian(h, alpha, dim):
    dom = DomainSpec.box([-1.0] * dim, [1.0] * dim)
    g = build_grid(dom, 15)
    gh = build_grid(inflate_domain(dom, h, alpha), 15)
    v = gh.sample(lambda *x: np.exp(-sum(c * c for c in x) / 50.0))
    u = transfer(v, g, scale=h ** (1 + alpha / 2))
    npt.assert_array_equal(u.values, v.values)
    npt.assert_allclose(integrate(u), h ** (dim * (1 + alpha / 2)) * integrate(v), rtol=1e-13)


# dumps --------------------------------------------------------------------------
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_real_round_trips(x):
    assert float(format_real(x)) == x


def test_csv_dump(tmp_path):
    g = build_grid(DomainSpec.box([0.0, 0.0], [1.0, 1.0]), 9)
    f = g.sample(lambda x, y: np.sin(np.pi * x) * y)
    path = tmp_path / "f.csv"
    field_to_csv(f, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,value"
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    npt.assert_array_equal(rows[:, 2].reshape(g.shape), f.values)
    npt.assert_array_equal(rows[:, 0].reshape(g.shape), g.coords[0])


def test_binary_dump(tmp_path):
    g = build_grid(DomainSpec.box([0.0], [1.0]), 11)
    f = g.field(np.exp(1j * g.axes[0]) * np.sin(np.pi * g.axes[0]))
    path = tmp_path / "f.bin"
    field_to_binary(f, path)
    head = read_binary_header(path)
    assert head == {"version": 1, "dim": 1, "complex": True, "nodes_per_axis": 11}
    raw = np.frombuffer(path.read_bytes()[16:], dtype="<f8").reshape(11, 2)
    npt.assert_array_equal(raw[:, 0] + 1j * raw[:, 1], f.values)
    assert path.read_bytes()[:8] == b"NLSEGRID"


def test_field_identity():
    g = unit_interval(11)
    f = g.sample(lambda x: x * (1 - x))
    assert isinstance(f, Field)
    npt.assert_array_equal(np.asarray(f), f.values)
