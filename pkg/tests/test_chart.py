import math

import numpy as np
import pytest

from actionangle import (
    BaseGrid,
    build_action_angle,
    build_chart,
    build_section,
    compute_actions,
    compute_shifts,
    pullback_symplectic,
    reparametrize,
)
from actionangle.chart import ActionAngleMap, GridInterpolator, Section, canonical_matrix, pullback
from actionangle.errors import InvalidInputError, ReparametrizationError

TWO_PI = 2 * math.pi


class TestGrid:
    def test_around_and_refine(self):
        g = BaseGrid.around([1.0], 0.1, 5)
        np.testing.assert_allclose(g.axes[0], [0.8, 0.9, 1.0, 1.1, 1.2])
        assert g.refined().shape == (9,)
        assert g.nearest([1.04]) == (2,)

    def test_bfs_visits_every_node_once(self):
        g = BaseGrid([np.arange(3.0), np.arange(4.0)])
        order = g.bfs((1, 1))
        assert len(order) == 12 and len({n for n, _ in order}) == 12

    def test_axes_must_increase(self):
        with pytest.raises(InvalidInputError):
            BaseGrid([[0.0, 0.0]])

    def test_linear_interpolation_reproduces_affine_data(self):
        g = BaseGrid([np.linspace(0, 1, 3), np.linspace(-1, 1, 4), [2.0]])
        f = lambda b: np.array([1 + 2 * b[0] - 3 * b[1] + 0.5 * b[2]])
        vals = np.zeros(g.shape + (1,))
        for idx in g.indices():
            vals[idx] = f(g.point(idx))
        interp = GridInterpolator(g, vals)
        for b in ([0.3, 0.1, 2.0], [0.9, -0.7, 2.0], [1.2, 0.0, 2.0]):
            assert interp(b)[0] == pytest.approx(f(np.array(b))[0], abs=1e-13)

    def test_cubic_interpolation_on_smooth_data(self):
        g = BaseGrid([np.linspace(0, 1, 9)])
        vals = np.sin(g.axes[0])[:, None]
        assert GridInterpolator(g, vals, "cubic")([0.37])[0] == pytest.approx(math.sin(0.37), abs=1e-6)


class TestSection:
    def test_single_node(self, oscillator):
        sec = build_section(oscillator, [1.0, 0.0], BaseGrid([[0.5]]))
        np.testing.assert_array_equal(sec([0.5]), [1.0, 0.0])

    def test_oscillator(self, oscillator):
        sec = build_section(oscillator, [1.0, 0.0], BaseGrid([[0.5, 1.0, 1.5]]))
        for E in (0.5, 1.0, 1.5):
            np.testing.assert_allclose(sec([E]), [math.sqrt(2 * E), 0.0], atol=1e-9)

    def test_free_particle(self, free1d):
        sec = Section(free1d, [0.0, 1.0])
        for J in (0.2, 0.5, 2.0):
            np.testing.assert_allclose(sec([J]), [0.0, math.sqrt(2 * J)], atol=1e-9)

    def test_bad_directions(self, oscillator):
        with pytest.raises(InvalidInputError):
            Section(oscillator, [1.0, 0.0], directions=np.ones((2, 2)))


class TestChartMaps:
    def test_section_maps_to_origin(self, oscillator_map):
        b, y = oscillator_map.chart.to_chart([1.0, 0.0])
        assert b[0] == pytest.approx(0.5) and y[0] == pytest.approx(0.0, abs=1e-9)

    def test_oscillator_phase(self, oscillator_map, oscillator):
        from actionangle import flow
        z = flow(oscillator, 0, [1.0, 0.0], math.pi / 2)
        _, y = oscillator_map.chart.to_chart(z)
        assert y[0] == pytest.approx(math.pi / 2, abs=1e-7)

    @pytest.mark.parametrize("fixture", ["oscillator_map", "pendulum_map"])
    def test_round_trip(self, fixture, request):
        aa = request.getfixturevalue(fixture)
        system = aa.chart.system
        rng = np.random.default_rng(7)
        J0 = aa.chart.section.level0[0]
        for _ in range(100):
            b = np.array([J0 + rng.uniform(-0.08, 0.08)])
            z = aa.chart.from_chart(b, [rng.uniform(0, TWO_PI)])
            b2, y2 = aa.chart.to_chart(z)
            assert np.max(np.abs(system.difference(aa.chart.from_chart(b2, y2), z))) < 1e-7

    def test_round_trip_on_cylinder(self, osc_free_map):
        aa = osc_free_map
        X = np.array([1.0, -0.7, 0.52, 0.48])
        np.testing.assert_allclose(aa.forward(aa.inverse(X)), X, atol=1e-8)


class TestActions:
    def test_oscillator_action_is_energy(self, oscillator):
        grid = BaseGrid([np.linspace(0.5, 2.0, 7)])
        chart = build_chart(oscillator, [1.0, 0.0], grid)
        tr = compute_actions(oscillator, chart)
        for E in (0.5, 0.75, 1.3, 2.0):
            assert tr.actions([E])[0] == pytest.approx(E, abs=1e-6)

    def test_pendulum_action(self, pendulum_map):
        assert pendulum_map.transform.actions([-0.5])[0] == pytest.approx(0.517315809222683339, abs=1e-5)

    def test_free_particle_identity(self, free_map):
        assert free_map.transform.actions([0.37])[0] == 0.37
        assert free_map.transform.inverse([0.37])[0] == 0.37

    def test_inverse(self, pendulum_map):
        tr = pendulum_map.transform
        assert tr.actions(tr.inverse([0.53]))[0] == pytest.approx(0.53, abs=1e-12)


class TestShifts:
    def test_lagrangian_section_needs_no_shift(self, oscillator_map):
        np.testing.assert_array_equal(oscillator_map.transform.shift_values, 0.0)

    def test_single_node_grid_is_gauged_to_zero(self, osc_free):
        z = np.array([1.0, 0.0, 0.0, 1.0])
        aa = build_action_angle(osc_free, z, BaseGrid([[0.5], [0.5]]))
        np.testing.assert_array_equal(aa.transform.shifts([0.5, 0.5]), 0.0)

    def test_free_particle_pair(self, free_map, free1d):
        # x = q/p on the section q = 0
        X = free_map.forward([0.6, 1.2])
        assert X[0] == pytest.approx(0.5, abs=1e-9)
        sample = pullback_symplectic(free1d, free_map.chart, free_map.transform, X)
        assert sample.canonical_residual < 1e-8

    def test_shifts_remove_action_block(self, osc_free):
        z = np.array([1.0, 0.0, 0.0, 1.0])
        D = np.array([[1.0, 0.0], [0.5, 0.0], [0.0, 0.0], [0.0, 1.0]])
        grid = BaseGrid.around(osc_free.level(z), 0.05, 3)
        chart = build_chart(osc_free, z, grid, directions=D)
        tr = compute_actions(osc_free, chart)
        X = np.array([0.3, 0.2, 0.5, 0.5])
        before = pullback_symplectic(osc_free, chart, tr, X)
        shifted = compute_shifts(osc_free, chart, tr)
        after = pullback_symplectic(osc_free, chart, shifted, X)
        assert np.max(np.abs(before.action_block)) > 0.1
        assert np.max(np.abs(after.action_block)) < 1e-5
        assert after.canonical_residual < 1e-5
        assert shifted.diagnostics["exactness_residual"] < 1e-5


class TestPullback:
    def test_oscillator(self, oscillator_map, oscillator):
        s = pullback_symplectic(oscillator, oscillator_map.chart, oscillator_map.transform, [1.3, 0.55])
        np.testing.assert_allclose(s.matrix, canonical_matrix(1), atol=1e-5)
        assert s.antisymmetry_residual == 0.0

    def test_free_particle(self, free_map, free1d):
        s = pullback_symplectic(free1d, free_map.chart, free_map.transform, [-0.4, 0.45])
        assert s.canonical_residual < 1e-6

    def test_kepler_style_product(self, osc_free_map, osc_free):
        s = pullback_symplectic(osc_free, osc_free_map.chart, osc_free_map.transform, [2.0, 0.4, 0.47, 0.53])
        assert s.canonical_residual < 1e-5
        assert np.max(np.abs(s.fibre_block)) < 1e-6


class TestReparametrization:
    def test_identity(self, free_map, free1d):
        rp = reparametrize(free_map, lambda I: I[:1], lambda I: np.eye(1))
        X = np.array([0.3, 0.5])
        np.testing.assert_allclose(rp.inverse(X), free_map.inverse(X), atol=1e-14)

    def test_free_particle_square(self, free_map, free1d):
        f = lambda I: np.array([0.5 * I[0] ** 2])
        jac = lambda I: np.array([[I[0]]])
        rp = reparametrize(free_map, f, jac)
        z = np.array([0.8, 1.1])
        X = rp.forward(z)
        assert X[1] == pytest.approx(1.1, abs=1e-10)  # I' = p
        assert X[0] == pytest.approx(0.8, abs=1e-9)  # x' = p * (q/p) = q
        for Ip in (0.5, 1.0, 1.4):
            assert pullback(free1d, rp.inverse, [0.2, Ip], 1).canonical_residual < 1e-5

    def test_torus_only_is_unchanged(self, oscillator_map):
        rp = reparametrize(oscillator_map, lambda I: np.zeros(0), lambda I: np.zeros((0, 1)))
        X = np.array([1.0, 0.5])
        np.testing.assert_allclose(rp.inverse(X), oscillator_map.inverse(X), atol=1e-14)

    def test_singular_jacobian(self, free_map):
        rp = reparametrize(free_map, lambda I: np.array([0.0]), lambda I: np.array([[0.0]]))
        with pytest.raises(ReparametrizationError):
            rp.inverse([0.1, 0.5])
