import math

import numpy as np
import pytest

from actionangle import BaseGrid, HamiltonianSystem, IntegralSet, ScalarField, build_action_angle, builtin
from actionangle.errors import NonDiffeomorphicLeavesError, NonRegularPointError
from actionangle.partial import (
    build_partial_chart,
    build_transversal,
    default_loops,
    holonomy_check,
    leaf_field_components,
    verify_block_form,
)

TWO_PI = 2 * math.pi


def partial_grid(J0, hj=0.05, nj=5):
    return BaseGrid([J0 + (np.arange(nj) - (nj - 1) / 2) * hj, np.linspace(-0.5, 0.5, 3), np.linspace(-0.5, 0.5, 3)])


@pytest.fixture(scope="module")
def momentum():
    return builtin("partial_momentum").to_system()


@pytest.fixture(scope="module")
def half_oscillator():
    return builtin("partial_oscillator").to_system()


@pytest.fixture(scope="module")
def momentum_map(momentum):
    return build_partial_chart(momentum, np.zeros(4), partial_grid(0.0))


@pytest.fixture(scope="module")
def half_oscillator_map(half_oscillator):
    return build_partial_chart(half_oscillator, [1.0, 0.0, 0.0, 0.0], partial_grid(0.5), detect="corners")


class TestTransversal:
    def test_momentum_slice(self, momentum):
        tv = build_transversal(momentum, np.zeros(4))
        np.testing.assert_allclose(tv.basis, np.eye(4)[:, [1, 3]])

    def test_oscillator_slice(self, half_oscillator):
        tv = build_transversal(half_oscillator, [1.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(tv.basis, np.eye(4)[:, [1, 3]])

    def test_complete_case_is_empty(self, osc_free):
        assert build_transversal(osc_free, [1.0, 0.0, 0.0, 1.0]).dim == 0

    def test_singular_point(self, half_oscillator):
        with pytest.raises(NonRegularPointError):
            build_transversal(half_oscillator, np.zeros(4))


class TestHolonomy:
    def test_parallel_leaves(self, momentum):
        tv = build_transversal(momentum, np.zeros(4))
        # out along q1 and back again, from several slice points
        loops = [([w, -w], [[2.0], [-2.0]]) for w in (0.0, 0.3, -0.4)]
        rep = holonomy_check(momentum, tv, loops, tol=1e-9)
        assert rep.verdict == "supported" and rep.max_displacement < 1e-9

    def test_torus_cycle(self, half_oscillator):
        tv = build_transversal(half_oscillator, [1.0, 0.0, 0.0, 0.0])
        loops = [([0.2, -0.1], [[TWO_PI]]), ([0.0, 0.4], [[TWO_PI]])]
        rep = holonomy_check(half_oscillator, tv, loops)
        assert rep.verdict == "supported" and rep.max_displacement < 1e-7

    def test_non_returning_path_is_inconclusive(self, momentum):
        tv = build_transversal(momentum, np.zeros(4))
        rep = holonomy_check(momentum, tv, [([0.0, 0.0], [[3.0]])])
        assert rep.inconclusive == 1 and rep.verdict == "inconclusive"


class TestPartialChart:
    def test_momentum_chart(self, momentum_map, momentum):
        u = np.array([0.7, 0.2, 0.1, -0.3])
        X = momentum_map.forward(u)
        # (x; I; z) = (q1 - q1^0; p1; q2, p2)
        np.testing.assert_allclose(X, [0.7, 0.1, 0.2, -0.3], atol=1e-9)
        assert momentum_map.chart.m == 0

    def test_oscillator_embedded(self, half_oscillator_map):
        aa = half_oscillator_map
        assert aa.chart.m == 1
        u = np.array([0.0, 0.3, -1.1, -0.2])
        X = aa.forward(u)
        assert X[1] == pytest.approx(0.5 * 1.1 ** 2, abs=1e-6)
        assert X[0] == pytest.approx(math.pi / 2, abs=1e-7)
        np.testing.assert_allclose(X[2:], [0.3, -0.2], atol=1e-9)

    def test_round_trip(self, half_oscillator_map):
        rng = np.random.default_rng(5)
        for _ in range(10):
            X = np.array([rng.uniform(0, TWO_PI), rng.uniform(0.45, 0.55), *rng.uniform(-0.4, 0.4, 2)])
            np.testing.assert_allclose(half_oscillator_map.forward(half_oscillator_map.inverse(X)), X, atol=1e-7)

    def test_complete_case_delegates(self, osc_free):
        z = np.array([1.0, 0.0, 0.0, 1.0])
        grid = BaseGrid.around(osc_free.level(z), 0.05, 3)
        direct = build_action_angle(osc_free, z, grid)
        via = build_partial_chart(osc_free, z, grid)
        assert via.d == 0
        X = np.array([0.4, 1.0, 0.5, 0.5])
        np.testing.assert_allclose(via.inverse(X), direct.inverse(X), atol=1e-8)

    def test_rank_change_raises(self):
        # F = (p1^2 + q1^2)/2 * g(p2) with g = 1 for p2 <= 0 and g' > 0 for p2 > 0:
        # leaves are circles where p2 <= 0 and drift along q2 (lines) where p2 > 0
        def g(p2):
            return 1.0 + (math.exp(-1.0 / p2) if p2 > 0 else 0.0)

        def dg(p2):
            return math.exp(-1.0 / p2) / p2 ** 2 if p2 > 0 else 0.0

        def F(z):
            return 0.5 * (z[0] ** 2 + z[2] ** 2) * g(z[3])

        def dF(z):
            h = 0.5 * (z[0] ** 2 + z[2] ** 2)
            return np.array([z[0] * g(z[3]), 0.0, z[2] * g(z[3]), h * dg(z[3])])

        system = HamiltonianSystem(2, IntegralSet((ScalarField(F, dF),)))
        z_M = [1.0, 0.0, 0.0, -1.0]
        tv = build_transversal(system, z_M)
        np.testing.assert_allclose(tv.basis, np.eye(4)[:, [1, 3]])
        grid = BaseGrid([np.array([0.5]), np.array([0.0]), np.array([-0.5, 0.0, 1.5])])
        with pytest.raises(NonDiffeomorphicLeavesError):
            build_partial_chart(system, z_M, grid, tv)


class TestBlockForm:
    def test_momentum_is_canonical(self, momentum_map, momentum):
        rep = verify_block_form(momentum, momentum_map, [0.3, 0.1, 0.2, -0.1])
        J = np.zeros((4, 4))
        J[0, 1], J[1, 0], J[2, 3], J[3, 2] = 1, -1, 1, -1
        np.testing.assert_allclose(rep.sample.matrix, J, atol=1e-8)
        assert rep.passed

    def test_oscillator_blocks(self, half_oscillator_map, half_oscillator):
        rep = verify_block_form(half_oscillator, half_oscillator_map, [2.0, 0.52, 0.1, 0.2])
        assert rep.canonical_residual < 1e-5
        assert rep.omega_A_beta_residual < 1e-6
        np.testing.assert_allclose(rep.sample.omega_AB, [[0, 1], [-1, 0]], atol=1e-6)
        assert rep.independence_residual < 1e-5

    def test_leaf_fields(self, half_oscillator_map, half_oscillator):
        comps = leaf_field_components(half_oscillator, half_oscillator_map, [1.0, 0.5, 0.1, 0.1])
        # the oscillator flow only moves its angle, at unit frequency
        np.testing.assert_allclose(comps[:, 0], [1.0, 0.0, 0.0, 0.0], atol=1e-5)

    def test_default_loops(self, half_oscillator_map, half_oscillator):
        tv = half_oscillator_map.transversal
        rep = holonomy_check(half_oscillator, tv, default_loops(half_oscillator_map, tv))
        assert rep.verdict == "supported"
