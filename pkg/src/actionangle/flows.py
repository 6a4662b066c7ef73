"""Hamiltonian flows and the additive group action of R^k on phase space."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import DOP853, RK45

from .errors import (
    BlowUpError,
    ConservationError,
    IncompletenessError,
    InvalidInputError,
)
from .phase_space import HamiltonianSystem, as_point

__all__ = [
    "FlowConfig",
    "integrate",
    "flow",
    "group_action",
    "orbit_point",
    "commutation_residual",
    "sample_orbit",
    "liouville_integral",
    "flow_jacobian",
]

_METHODS = {"DOP853": DOP853, "RK45": RK45}


@dataclass(frozen=True)
class FlowConfig:
    """Integrator settings.

    ``method`` is ``"DOP853"`` (order 8 with embedded 5 and 3) or ``"RK45"``
    (Dormand-Prince 5(4)).  With ``project`` set, every accepted step is
    followed by a Gauss-Newton projection back onto the level set of all
    integrals through the initial point.
    """

    method: str = "DOP853"
    rtol: float = 1e-12
    atol: float = 1e-12
    project: bool = False
    max_steps: int = 200_000
    max_norm: float = 1e8
    conservation_tol: float = 1e-8
    check_conservation: bool = True

    def __post_init__(self):
        if self.method not in _METHODS:
            raise InvalidInputError(f"unknown integrator {self.method!r}")
        if self.rtol <= 0 or self.atol <= 0:
            raise InvalidInputError("integrator tolerances must be positive")
        if self.max_steps <= 0:
            raise InvalidInputError("max_steps must be positive")

    @property
    def order(self) -> int:
        return 8 if self.method == "DOP853" else 5

    def scaled(self, factor: float) -> "FlowConfig":
        from dataclasses import replace
        return replace(self, rtol=self.rtol * factor, atol=self.atol * factor)


DEFAULT_CONFIG = FlowConfig()


def _project(system: HamiltonianSystem, y: np.ndarray, target: np.ndarray, n_state: int) -> np.ndarray:
    z = y[:n_state].copy()
    for _ in range(2):
        res = system.level(z) - target
        jac = system.jacobian(z)
        z -= np.linalg.lstsq(jac, res, rcond=None)[0]
    out = y.copy()
    out[:n_state] = z
    return out


def integrate(system: HamiltonianSystem, field: Callable[[np.ndarray], np.ndarray], y0, T: float,
              cfg: FlowConfig = DEFAULT_CONFIG, sample_times: Optional[Sequence[float]] = None,
              n_state: Optional[int] = None):
    """Integrate ``y' = field(y)`` from 0 to T.

    Returns the end state, or ``(end, samples)`` when ``sample_times`` is
    given; samples are taken from the dense output of each step.  The first
    ``n_state`` entries of ``y`` are phase coordinates (used for projection
    and the blow-up check); any extra entries are quadrature accumulators.
    """
    y0 = np.asarray(y0, dtype=float)
    n_state = system.dim if n_state is None else n_state
    samples = None
    if sample_times is not None:
        sample_times = np.asarray(sample_times, dtype=float)
        samples = np.empty((sample_times.size, y0.size))
        if sample_times.size and (np.any(sample_times * np.sign(T or 1.0) < -1e-15)
                                  or np.any(np.abs(sample_times) > abs(T) * (1 + 1e-12) + 1e-15)):
            raise InvalidInputError("sample times must lie between 0 and T")
        at_zero = np.abs(sample_times) <= 1e-15
        samples[at_zero] = y0
    if T == 0.0:
        return (y0.copy(), samples) if samples is not None else y0.copy()

    target = system.level(y0[:n_state]) if cfg.project else None
    solver = _METHODS[cfg.method](lambda t, y: field(y), 0.0, y0.copy(), T,
                                  rtol=cfg.rtol, atol=cfg.atol)
    direction = np.sign(T)
    if samples is not None:
        order = np.argsort(sample_times * direction)
        cursor = 0
        while cursor < order.size and sample_times[order[cursor]] * direction <= 1e-15:
            cursor += 1
    steps = 0
    while solver.status == "running":
        msg = solver.step()
        steps += 1
        if solver.status == "failed":
            raise IncompletenessError(f"integrator failed at t={solver.t}: {msg}")
        y = solver.y
        if not np.all(np.isfinite(y)) or np.max(np.abs(y[:n_state])) > cfg.max_norm:
            raise BlowUpError(f"state left the finite region at t={solver.t} (flow not complete?)")
        if samples is not None and cursor < order.size:
            dense = None
            while cursor < order.size and sample_times[order[cursor]] * direction <= solver.t * direction:
                if dense is None:
                    dense = solver.dense_output()
                samples[order[cursor]] = dense(sample_times[order[cursor]])
                cursor += 1
        if cfg.project and solver.status == "running":
            solver.y = _project(system, y, target, n_state)
            solver.f = field(solver.y)
        if steps >= cfg.max_steps and solver.status == "running":
            raise IncompletenessError(
                f"step budget of {cfg.max_steps} exhausted at t={solver.t} of {T} (flow not complete?)")
    end = solver.y.copy()
    if cfg.project:
        end = _project(system, end, target, n_state)
    if cfg.check_conservation:
        _check_conservation(system, y0[:n_state], end[:n_state], cfg)
    if samples is not None:
        return end, samples
    return end


def _check_conservation(system, z0, z1, cfg):
    f0 = system.level(z0)
    f1 = system.level(z1)
    drift = np.abs(f1 - f0)
    bound = cfg.conservation_tol * (1.0 + np.abs(f0))
    if np.any(drift > bound):
        lam = int(np.argmax(drift - bound))
        raise ConservationError(
            f"integral {system.integrals[lam].label} drifted by {drift[lam]:.3e} along the flow")


def _combined_field(system: HamiltonianSystem, s: np.ndarray) -> Callable:
    s = np.asarray(s, dtype=float)
    model = system.model
    funcs = [(c, system.integrals[lam]) for lam, c in enumerate(s) if c != 0.0]

    def field(y):
        g = np.zeros(system.dim)
        for c, f in funcs:
            g += c * f.gradient(y)
        return model.vector_field(g, y)

    return field


def flow(system: HamiltonianSystem, lam: int, z0, s: float, cfg: FlowConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Flow of the lam-th integral's Hamiltonian vector field for time s."""
    if not 0 <= lam < system.k:
        raise InvalidInputError(f"integral index {lam} out of range for k={system.k}")
    z0 = as_point(z0, system.dim)
    f = system.integrals[lam]
    model = system.model
    return integrate(system, lambda y: model.vector_field(f.gradient(y), y), z0, float(s), cfg)


def _as_param(system, s) -> np.ndarray:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.shape != (system.k,):
        raise InvalidInputError(f"flow parameter must have length {system.k}")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("flow parameter has non-finite entries")
    return s


def group_action(system: HamiltonianSystem, z0, s, cfg: FlowConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Act by ``s`` in R^k: flows applied one after another, lowest index first."""
    s = _as_param(system, s)
    z = as_point(z0, system.dim).copy()
    for lam, sl in enumerate(s):
        if sl != 0.0:
            z = flow(system, lam, z, sl, cfg)
    return z


def orbit_point(system: HamiltonianSystem, z0, s, cfg: FlowConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Same as :func:`group_action` for involutive integrals, as one flow of ``sum s^l X_l`` for unit time."""
    s = _as_param(system, s)
    z0 = as_point(z0, system.dim)
    if not np.any(s):
        return z0.copy()
    return integrate(system, _combined_field(system, s), z0, 1.0, cfg)


def commutation_residual(system: HamiltonianSystem, lam: int, mu: int, z0, a: float, b: float,
                         cfg: FlowConfig = DEFAULT_CONFIG) -> float:
    if lam == mu:
        raise InvalidInputError("commutation residual needs two distinct integrals")
    one = flow(system, lam, flow(system, mu, z0, b, cfg), a, cfg)
    two = flow(system, mu, flow(system, lam, z0, a, cfg), b, cfg)
    return float(np.max(np.abs(system.difference(one, two))))


def sample_orbit(system: HamiltonianSystem, z0, directions, grids, cfg: FlowConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Orbit points ``z0`` moved by ``sum_j t_j directions[j]`` on a tensor grid of ``t``.

    Uses one dense-output integration per grid line, so a d-dimensional grid
    with N nodes per axis costs about N^(d-1) integrations.  Returns an array
    of shape ``(len(grids[0]), ..., len(grids[-1]), 2n)``.
    """
    z0 = as_point(z0, system.dim)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    grids = [np.asarray(g, dtype=float) for g in grids]
    if len(grids) != directions.shape[0]:
        raise InvalidInputError("one grid per direction is required")
    if not grids:
        return z0.copy()
    field = _combined_field(system, directions[0])
    g = grids[0]
    line = np.empty((g.size, system.dim))
    pos = g >= 0
    neg = ~pos
    if np.any(pos):
        _, line[pos] = integrate(system, field, z0, float(g[pos].max()), cfg, sample_times=g[pos])
    if np.any(neg):
        _, line[neg] = integrate(system, field, z0, float(g[neg].min()), cfg, sample_times=g[neg])
    if len(grids) == 1:
        return line
    rest = [sample_orbit(system, zi, directions[1:], grids[1:], cfg) for zi in line]
    return np.stack(rest)


def liouville_integral(system: HamiltonianSystem, z0, s, cfg: FlowConfig = DEFAULT_CONFIG):
    """Integral of the Liouville one-form along ``tau -> orbit_point(z0, tau*s)``, tau in [0, 1].

    For the canonical model the one-form is ``p.dq``; otherwise it is the
    primitive ``-int_0^1 tau z^T Omega(tau z) dz dtau`` of ``-Omega``
    (both agree with ``p.dq`` on closed loops when Omega is canonical).
    Returns ``(integral, end_point)``.
    """
    z0 = as_point(z0, system.dim)
    s = _as_param(system, s)
    field = _combined_field(system, s)
    n = system.n
    model = system.model
    if model.canonical:
        def aug(y):
            dz = field(y[:-1])
            return np.append(dz, y[n:2 * n] @ dz[:n])
    else:
        nodes, weights = np.polynomial.legendre.leggauss(8)
        taus = 0.5 * (nodes + 1.0)
        weights = 0.5 * weights

        def aug(y):
            z = y[:-1]
            dz = field(z)
            acc = 0.0
            for t, w in zip(taus, weights):
                acc += w * t * (z @ model.omega_at(t * z) @ dz)
            return np.append(dz, -acc)

    end = integrate(system, aug, np.append(z0, 0.0), 1.0, cfg, n_state=system.dim)
    return float(end[-1]), end[:-1]


def flow_jacobian(system: HamiltonianSystem, z0, s, cfg: FlowConfig = DEFAULT_CONFIG, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of ``z -> group_action(z, s)``."""
    z0 = as_point(z0, system.dim)
    cols = []
    for j in range(system.dim):
        e = np.zeros(system.dim)
        e[j] = h
        cols.append((group_action(system, z0 + e, s, cfg) - group_action(system, z0 - e, s, cfg)) / (2 * h))
    return np.column_stack(cols)
