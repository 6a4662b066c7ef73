"""Independent reference values, frozen from 30-digit quadratures.

Each frozen number is checked once more here against scipy quadrature so
that a typo in a constant cannot silently loosen the other tests.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp
from scipy.special import ellipe, ellipk

from actionangle import detect_lattice, flow, liouville_integral
from actionangle.phase_space import extend_time_dependent
from actionangle.systems import _kepler_point

# pendulum H = p^2/2 - cos q
PENDULUM_PERIOD = {-0.5: 6.74300141925038417148481463120,
                   -0.9: 6.36401381516316870196322625323,
                   -0.7: 6.54102692905832001133062981669,
                   -0.3: 6.97740238890245298557448655242,
                   -0.1: 7.25553574726793056636663485782}
PENDULUM_ACTION = {-0.5: 0.517315809222683339405483000769,
                   -0.9: 0.100637033599022406522552530767,
                   -0.7: 0.305968654543754999778172971939,
                   -0.3: 0.735584213858295507363372216559,
                   -0.1: 0.961972727279242737702345125657}
KEPLER_RADIAL_ACTION = 0.5  # E = -1/2, L = 1/2
KEPLER_RADIAL_PERIOD = 2 * math.pi


def pendulum_period_quad(E):
    qmax = math.acos(-E)
    # q = qmax sin(theta) removes the endpoint singularity
    f = lambda th: qmax * math.cos(th) / math.sqrt(2 * (E + math.cos(qmax * math.sin(th))))
    return 4 * quad(f, 0, math.pi / 2, epsabs=1e-13, epsrel=1e-12)[0]


def pendulum_action_quad(E):
    qmax = math.acos(-E)
    f = lambda th: qmax * math.cos(th) * math.sqrt(max(2 * (E + math.cos(qmax * math.sin(th))), 0.0))
    return 4 / (2 * math.pi) * quad(f, 0, math.pi / 2, epsabs=1e-13, epsrel=1e-12)[0]


@pytest.mark.parametrize("E", sorted(PENDULUM_PERIOD))
def test_pendulum_frozen_values_match_quadrature(E):
    assert pendulum_period_quad(E) == pytest.approx(PENDULUM_PERIOD[E], abs=1e-11)
    assert pendulum_action_quad(E) == pytest.approx(PENDULUM_ACTION[E], abs=1e-11)
    m = (1 + E) / 2
    assert 4 * ellipk(m) == pytest.approx(PENDULUM_PERIOD[E], abs=1e-12)
    assert 8 / math.pi * (ellipe(m) - (1 - m) * ellipk(m)) == pytest.approx(PENDULUM_ACTION[E], abs=1e-12)


def test_kepler_radial_oracle():
    E, L = -0.5, 0.5
    e = math.sqrt(1 + 2 * E * L * L)
    a = -1 / (2 * E)
    rmin, rmax = a * (1 - e), a * (1 + e)
    f = lambda r: math.sqrt(max(2 * E + 2 / r - L * L / r ** 2, 0.0))
    Ir = quad(f, rmin, rmax, epsabs=1e-13, limit=200)[0] / math.pi
    assert Ir == pytest.approx(KEPLER_RADIAL_ACTION, abs=1e-7)
    assert Ir + L == pytest.approx((-2 * E) ** -0.5, abs=1e-7)
    assert _kepler_point(E, L)[0] == pytest.approx(rmax, abs=1e-14)


def test_pendulum_lattice_against_oracle(pendulum):
    lat = detect_lattice(pendulum, [math.pi / 3, 0.0])
    assert lat.m == 1
    assert lat.generators[0, 0] == pytest.approx(PENDULUM_PERIOD[-0.5], abs=1e-7)


def test_pendulum_cycle_integral_against_oracle(pendulum):
    integral, end = liouville_integral(pendulum, [math.pi / 3, 0.0], [PENDULUM_PERIOD[-0.5]])
    assert integral / (2 * math.pi) == pytest.approx(PENDULUM_ACTION[-0.5], abs=1e-9)
    assert np.max(np.abs(end - [math.pi / 3, 0.0])) < 1e-9


def test_kepler_cycle_integrals(kepler):
    z = np.array(_kepler_point(-0.5, 0.5))
    I1, _ = liouville_integral(kepler, z, [KEPLER_RADIAL_PERIOD, 0.0])
    I2, _ = liouville_integral(kepler, z, [0.0, 2 * math.pi])
    assert I1 / (2 * math.pi) == pytest.approx(KEPLER_RADIAL_ACTION + 0.5, abs=1e-8)
    assert I2 / (2 * math.pi) == pytest.approx(0.5, abs=1e-10)


def test_driven_oscillator_against_direct_integration():
    # H(t, q, p) = p^2/2 + q^2 cos t, integrated directly as a non-autonomous system
    H = lambda t, q, p: 0.5 * p[0] ** 2 + q[0] ** 2 * math.cos(t)
    grad = lambda t, q, p: (-q[0] ** 2 * math.sin(t), [2 * q[0] * math.cos(t)], [p[0]])
    system, _ = extend_time_dependent(H, 1, grad)
    rhs = lambda t, y: [y[1], -2 * y[0] * math.cos(t)]
    ref = solve_ivp(rhs, (0, 10), [1.0, 0.0], method="DOP853", rtol=1e-13, atol=1e-13).y[:, -1]
    end = flow(system, 0, [0.0, 1.0, 0.0, 0.0], 10.0)
    assert end[0] == pytest.approx(10.0, abs=1e-12)
    assert abs(end[1] - ref[0]) < 1e-8 and abs(end[3] - ref[1]) < 1e-8
