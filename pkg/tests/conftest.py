import numpy as np
import pytest

from actionangle import BaseGrid, build_action_angle, builtin


def make_system(name):
    return builtin(name).to_system()


def default_point(system):
    return np.array(system.metadata["point"], dtype=float)


@pytest.fixture(scope="session")
def oscillator():
    return make_system("oscillator1d")


@pytest.fixture(scope="session")
def free1d():
    return make_system("free1d")


@pytest.fixture(scope="session")
def osc_free():
    return make_system("osc_free")


@pytest.fixture(scope="session")
def pendulum():
    return make_system("pendulum")


@pytest.fixture(scope="session")
def kepler():
    return make_system("kepler_planar")


@pytest.fixture(scope="session")
def oscillator_map(oscillator):
    return build_action_angle(oscillator, default_point(oscillator), BaseGrid.around([0.5], 0.05, 5))


@pytest.fixture(scope="session")
def pendulum_map(pendulum):
    return build_action_angle(pendulum, default_point(pendulum), BaseGrid.around([-0.5], 0.05, 5), method="cubic")


@pytest.fixture(scope="session")
def free_map(free1d):
    return build_action_angle(free1d, default_point(free1d), BaseGrid.around([0.5], 0.05, 5))


@pytest.fixture(scope="session")
def osc_free_map(osc_free):
    z = default_point(osc_free)
    return build_action_angle(osc_free, z, BaseGrid.around(osc_free.level(z), 0.05, 3))
