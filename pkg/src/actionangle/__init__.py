"""Generalized action-angle coordinates near invariant manifolds of integrable systems."""

from .errors import ActionAngleError
from .phase_space import (
    HamiltonianSystem,
    IntegralSet,
    ScalarField,
    SymplecticModel,
    check_involution,
    check_regularity,
    extend_time_dependent,
    poisson_bracket,
)
from .flows import FlowConfig, flow, group_action, orbit_point, commutation_residual, liouville_integral
from .lattice import IsotropyLattice, detect_lattice, detect_recurrences, lattice_from_returns, continue_lattice
from .chart import (
    ActionAngleMap,
    BaseGrid,
    ChartTransform,
    Section,
    SymplecticSample,
    TrivializationChart,
    build_action_angle,
    build_chart,
    build_section,
    compute_actions,
    compute_shifts,
    pullback_symplectic,
    reparametrize,
)
from .systems import builtin, load_system, parse_system

__version__ = "0.1.0"
