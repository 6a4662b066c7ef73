"""Trivialization charts and generalized action-angle coordinates.

A chart point is addressed by a base point ``b`` (the integral values ``J``
followed by any transversal coordinates ``w``) and group coordinates ``y``:
``y^a = t^a`` along cylinder directions and ``y^i = phi^i`` in ``[0, 2pi)``
along torus directions, where a phase point equals ``g(s) sigma(b)`` with
``s = sum_a t^a e_a + sum_i phi^i v_i(b) / 2pi``.

Action-angle coordinates are ordered ``(y'; I; w)`` with the angles first,
so the canonical symplectic matrix has the same ``[[0, Id], [-Id, 0]]``
shape as the ambient ``(q; p)`` matrix.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    ChartError,
    DegenerateFibreError,
    InvalidInputError,
    NonExactnessError,
    OffFibreError,
    RefinementError,
    ReparametrizationError,
    SectionError,
)
from .flows import DEFAULT_CONFIG, FlowConfig, liouville_integral, orbit_point, sample_orbit
from .lattice import IsotropyLattice, continue_lattice, detect_lattice, refine_return
from .phase_space import HamiltonianSystem, as_point

__all__ = [
    "BaseGrid",
    "GridInterpolator",
    "Section",
    "TrivializationChart",
    "ChartTransform",
    "ActionAngleMap",
    "SymplecticSample",
    "build_section",
    "build_chart",
    "compute_actions",
    "compute_shifts",
    "pullback_symplectic",
    "pullback",
    "reparametrize",
    "build_action_angle",
    "canonical_matrix",
]

TWO_PI = 2.0 * np.pi


def canonical_matrix(k: int) -> np.ndarray:
    om = np.zeros((2 * k, 2 * k))
    om[:k, k:] = np.eye(k)
    om[k:, :k] = -np.eye(k)
    return om


# base grids and interpolation -------------------------------------------------


class BaseGrid:
    """Tensor grid of base points."""

    def __init__(self, axes: Sequence):
        self.axes = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in axes)
        for ax in self.axes:
            if ax.size > 1 and np.any(np.diff(ax) <= 0):
                raise InvalidInputError("grid axes must be strictly increasing")

    @classmethod
    def around(cls, center, spacing, nodes=5) -> "BaseGrid":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), center.shape)
        nodes = np.broadcast_to(np.asarray(nodes, dtype=int), center.shape)
        axes = []
        for c, h, m in zip(center, spacing, nodes):
            offs = (np.arange(m) - (m - 1) / 2.0) * h
            axes.append(c + offs)
        return cls(axes)

    @property
    def shape(self) -> tuple:
        return tuple(ax.size for ax in self.axes)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def point(self, idx) -> np.ndarray:
        return np.array([ax[i] for ax, i in zip(self.axes, idx)])

    def indices(self):
        return itertools.product(*(range(n) for n in self.shape))

    def nearest(self, b) -> tuple:
        return tuple(int(np.argmin(np.abs(ax - x))) for ax, x in zip(self.axes, b))

    def bfs(self, root) -> list:
        """Nodes in breadth-first order from ``root`` as ``(node, parent)`` pairs."""
        seen = {root}
        order = [(root, None)]
        queue = deque([root])
        while queue:
            node = queue.popleft()
            for d in range(self.ndim):
                for step in (-1, 1):
                    nb = list(node)
                    nb[d] += step
                    nb = tuple(nb)
                    if 0 <= nb[d] < self.shape[d] and nb not in seen:
                        seen.add(nb)
                        order.append((nb, node))
                        queue.append(nb)
        return order

    def refined(self) -> "BaseGrid":
        """Same extent with the spacing halved."""
        axes = []
        for ax in self.axes:
            if ax.size < 2:
                axes.append(ax)
            else:
                axes.append(np.linspace(ax[0], ax[-1], 2 * ax.size - 1))
        return BaseGrid(axes)

    def spacing(self) -> np.ndarray:
        return np.array([np.min(np.diff(ax)) if ax.size > 1 else 0.0 for ax in self.axes])


class GridInterpolator:
    """Vector-valued interpolation on a :class:`BaseGrid`.

    ``method="linear"`` is piecewise multilinear (linear extrapolation outside
    the grid); ``"cubic"`` uses tensor-product not-a-knot cubic splines.
    Single-node axes are treated as constant directions.
    """

    def __init__(self, grid: BaseGrid, values: np.ndarray, method: str = "linear"):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        self.method = method
        self._live = [d for d, n in enumerate(grid.shape) if n > 1]
        if method not in ("linear", "cubic"):
            raise InvalidInputError(f"unknown interpolation {method!r}")
        self._cubic = method == "cubic" and bool(self._live)

    def _tensor_spline(self, b) -> np.ndarray:
        # reduce one axis at a time with not-a-knot cubic splines
        vals = self.values
        for d in reversed(range(self.grid.ndim)):
            if self.grid.shape[d] == 1:
                vals = vals[(slice(None),) * d + (0,)]
            else:
                vals = CubicSpline(self.grid.axes[d], vals, axis=d)(b[d])
        return np.asarray(vals)

    def __call__(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self._cubic:
            return self._tensor_spline(b)
        lo, weights = [], []
        for d, ax in enumerate(self.grid.axes):
            if ax.size == 1:
                lo.append(0)
                weights.append(None)
                continue
            i = int(np.clip(np.searchsorted(ax, b[d]) - 1, 0, ax.size - 2))
            lo.append(i)
            weights.append((b[d] - ax[i]) / (ax[i + 1] - ax[i]))
        out = np.zeros(self.values.shape[self.grid.ndim:])
        for corner in itertools.product((0, 1), repeat=len(self._live)):
            idx = list(lo)
            w = 1.0
            for c, d in zip(corner, self._live):
                idx[d] = lo[d] + c
                w *= weights[d] if c else 1.0 - weights[d]
            out = out + w * self.values[tuple(idx)]
        return out


# sections ---------------------------------------------------------------------


class Section:
    """Section of the level map along an affine slice through a base point.

    ``sigma(J, w) = z_M + D c + T w`` where ``c`` solves ``pi(sigma) = J`` by
    Newton's method; ``D`` defaults to the gradients of the integrals at
    ``z_M`` and ``T`` spans optional transversal coordinates.
    """

    def __init__(self, system: HamiltonianSystem, base_point, directions=None, transversal=None):
        self.system = system
        self.base_point = as_point(base_point, system.dim)
        self.level0 = system.level(self.base_point)
        D = system.jacobian(self.base_point).T if directions is None else np.asarray(directions, dtype=float)
        if D.shape != (system.dim, system.k):
            raise InvalidInputError(f"section directions must have shape {(system.dim, system.k)}")
        self.directions = D
        self.transversal = np.zeros((system.dim, 0)) if transversal is None else np.asarray(transversal, dtype=float)
        self.k = system.k
        self.d = self.transversal.shape[1]
        self._seeds: dict = {}
        self.grid: Optional[BaseGrid] = None

    def base_of(self, J, w=None) -> np.ndarray:
        J = np.atleast_1d(np.asarray(J, dtype=float))
        w = np.zeros(self.d) if w is None else np.atleast_1d(np.asarray(w, dtype=float))
        return np.concatenate([J, w])

    def coefficients(self, b, seed=None, tol: float = 1e-13, max_iter: int = 60) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        J, w = b[:self.k], b[self.k:]
        anchor = self.base_point + self.transversal @ w
        c = np.zeros(self.k) if seed is None else np.array(seed, dtype=float)
        z = anchor + self.directions @ c
        res = self.system.level(z) - J
        for _ in range(max_iter):
            err = np.max(np.abs(res), initial=0.0)
            if err < tol * (1.0 + np.max(np.abs(J), initial=0.0)):
                return c
            jac = self.system.jacobian(z) @ self.directions
            try:
                step = np.linalg.solve(jac, -res)
            except np.linalg.LinAlgError:
                raise SectionError(f"section slice is tangent to the level set at {z}") from None
            lam = 1.0
            for _ in range(30):
                c_new = c + lam * step
                z_new = anchor + self.directions @ c_new
                res_new = self.system.level(z_new) - J
                if np.max(np.abs(res_new), initial=0.0) < err:
                    break
                lam *= 0.5
            c, z, res = c_new, z_new, res_new
        if np.max(np.abs(res), initial=0.0) < 1e-9:
            return c
        raise SectionError(f"section Newton solve failed for level {J} (residual {np.max(np.abs(res)):.3e})")

    def at(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        seed = None
        if self.grid is not None and self._seeds:
            seed = self._seeds.get(self.grid.nearest(b))
        c = self.coefficients(b, seed)
        return self.base_point + self.transversal @ b[self.k:] + self.directions @ c

    def __call__(self, J, w=None) -> np.ndarray:
        return self.at(self.base_of(J, w))


def build_section(system: HamiltonianSystem, z_M, grid: BaseGrid, directions=None, transversal=None) -> Section:
    """Solve the section at every grid node, each seeded from an already solved neighbour."""
    z_M = as_point(z_M, system.dim)
    sec = Section(system, z_M, directions, transversal)
    if grid.ndim != sec.k + sec.d:
        raise InvalidInputError(f"grid has {grid.ndim} axes, expected {sec.k + sec.d}")
    root = grid.nearest(sec.base_of(sec.level0))
    for node, parent in grid.bfs(root):
        seed = sec._seeds.get(parent) if parent is not None else None
        b = grid.point(node)
        c = sec.coefficients(b, seed)
        z = sec.base_point + sec.transversal @ b[sec.k:] + sec.directions @ c
        if np.max(np.abs(system.level(z) - b[:sec.k])) >= 1e-9:
            raise SectionError(f"section misses level {b[:sec.k]}")
        sec._seeds[node] = c
    sec.grid = grid
    return sec


# trivialization chart ---------------------------------------------------------


class TrivializationChart:
    """Coordinates ``(b; y)`` on a neighbourhood of the fibre through the base point."""

    def __init__(self, system: HamiltonianSystem, section: Section, grid: BaseGrid,
                 lattice0: IsotropyLattice, node_generators: dict, cfg: FlowConfig = DEFAULT_CONFIG):
        self.system = system
        self.section = section
        self.grid = grid
        self.lattice0 = lattice0
        self.node_generators = node_generators
        self.cfg = cfg
        self.k = system.k
        self.d = section.d
        self.m = lattice0.m
        self.a_indices = lattice0.a_indices
        self.i_indices = lattice0.i_indices
        self._gen_cache: dict = {}

    def lattice_at_node(self, idx) -> IsotropyLattice:
        return IsotropyLattice(self.node_generators[idx], self.a_indices, self.i_indices)

    def generators_at(self, b) -> np.ndarray:
        """Lattice generators over base point ``b``, Newton-refined from the nearest node."""
        if self.m == 0:
            return np.zeros((0, self.k))
        b = np.asarray(b, dtype=float)
        key = tuple(b.tolist())
        hit = self._gen_cache.get(key)
        if hit is not None:
            return hit
        idx = self.grid.nearest(b)
        seed = self.node_generators[idx]
        if np.array_equal(self.grid.point(idx), b):
            gens = seed
        else:
            z = self.section.at(b)
            try:
                gens = np.array([refine_return(self.system, z, v, self.cfg) for v in seed])
            except (RefinementError, DegenerateFibreError):
                path = [self.grid.point(idx), b]
                lat = continue_lattice(self.system, self.lattice_at_node(idx), self.section.at, path, self.cfg)[-1]
                gens = lat.generators
        if len(self._gen_cache) > 4096:
            self._gen_cache.clear()
        self._gen_cache[key] = gens
        return gens

    def _frame(self, gens) -> np.ndarray:
        cols = [np.eye(self.k)[:, a] for a in self.a_indices] + [v / TWO_PI for v in gens]
        return np.column_stack(cols)

    def group_coords(self, s, gens) -> np.ndarray:
        """Flow parameters -> ``(t^a, phi^i)`` placed at their index positions."""
        coef = np.linalg.solve(self._frame(gens), np.asarray(s, dtype=float))
        y = np.empty(self.k)
        na = len(self.a_indices)
        y[list(self.a_indices)] = coef[:na]
        y[list(self.i_indices)] = coef[na:]
        return y

    def group_params(self, y, gens) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        na = len(self.a_indices)
        coef = np.empty(self.k)
        coef[:na] = y[list(self.a_indices)]
        coef[na:] = y[list(self.i_indices)]
        return self._frame(gens) @ coef

    def wrap(self, y) -> np.ndarray:
        y = np.array(y, dtype=float)
        idx = list(self.i_indices)
        y[idx] = np.mod(y[idx], TWO_PI)
        return y

    def from_chart(self, b, y) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        gens = self.generators_at(b)
        return orbit_point(self.system, self.section.at(b), self.group_params(y, gens), self.cfg)

    def to_chart(self, u, w_guess=None):
        """Phase point -> ``(b, y)``; torus angles land in ``[0, 2pi)``."""
        u = as_point(u, self.system.dim)
        J = self.system.level(u)
        if self.d:
            sec = self.section
            w0 = sec.transversal.T @ (u - sec.base_point) if w_guess is None else np.asarray(w_guess, dtype=float)
        else:
            w0 = np.zeros(0)
        s, w = self._shoot(u, J, w0)
        b = np.concatenate([J, w])
        return b, self.wrap(self.group_coords(s, self.generators_at(b)))

    def _initial_params(self, u, z_start, gens):
        sys_ = self.system
        if self.m:
            grids = [np.arange(8) / 8.0] * self.m
            pts = sample_orbit(sys_, z_start, gens, grids, self.cfg).reshape(-1, sys_.dim)
            dist = np.max(np.abs(sys_.difference(pts, u)), axis=1)
            best = int(np.argmin(dist))
            frac = np.array(np.unravel_index(best, (8,) * self.m)) / 8.0
            s = frac @ gens
            z_best = pts[best]
        else:
            s = np.zeros(self.k)
            z_best = z_start
        V = sys_.vector_fields(z_best)
        s = s + np.linalg.lstsq(V, sys_.difference(u, z_best), rcond=None)[0]
        return s

    def _shoot(self, u, J, w0, tol: float = 1e-11, max_iter: int = 40):
        sys_ = self.system
        scale = 1.0 + np.max(np.abs(u))
        w = np.array(w0, dtype=float)

        def endpoint(s, w):
            return orbit_point(sys_, self.section.at(np.concatenate([J, w])), s, self.cfg)

        b0 = np.concatenate([J, w])
        s = self._initial_params(u, self.section.at(b0), self.generators_at(b0))
        end = endpoint(s, w)
        res = sys_.difference(end, u)
        err = np.max(np.abs(res))
        hw = 1e-6
        for _ in range(max_iter):
            if err < tol * scale:
                return s, w
            cols = [sys_.vector_fields(end)]
            for j in range(self.d):
                e = np.zeros(self.d)
                e[j] = hw
                cols.append(((endpoint(s, w + e) - endpoint(s, w - e)) / (2 * hw))[:, None])
            jac = np.hstack(cols)
            step = np.linalg.lstsq(jac, -res, rcond=None)[0]
            lam = 1.0
            for _ in range(20):
                s_new, w_new = s + lam * step[:self.k], w + lam * step[self.k:]
                try:
                    end_new = endpoint(s_new, w_new)
                except (SectionError, RefinementError):
                    lam *= 0.5
                    continue
                res_new = sys_.difference(end_new, u)
                err_new = np.max(np.abs(res_new))
                if err_new < err:
                    break
                lam *= 0.5
            else:
                break
            s, w, end, res, err = s_new, w_new, end_new, res_new, err_new
        if err < max(tol * scale, 1e-9 * scale):
            return s, w
        raise OffFibreError(f"could not locate point on its fibre (residual {err:.3e})")


def build_chart(system: HamiltonianSystem, z_M, grid: BaseGrid, lattice0: Optional[IsotropyLattice] = None,
                box=10.0, cfg: FlowConfig = DEFAULT_CONFIG, directions=None, transversal=None,
                section: Optional[Section] = None) -> TrivializationChart:
    """Section, lattice field over the grid, and the resulting chart."""
    z_M = as_point(z_M, system.dim)
    sec = section or build_section(system, z_M, grid, directions, transversal)
    if lattice0 is None:
        lattice0 = detect_lattice(system, z_M, box, cfg=cfg)
    node_gens = {}
    if lattice0.m:
        b0 = sec.base_of(sec.level0)
        root = grid.nearest(b0)
        first = continue_lattice(system, lattice0, sec.at, [b0, grid.point(root)], cfg)[-1]
        node_gens[root] = first.generators
        for node, parent in grid.bfs(root)[1:]:
            lat = IsotropyLattice(node_gens[parent], lattice0.a_indices, lattice0.i_indices)
            node_gens[node] = continue_lattice(system, lat, sec.at, [grid.point(parent), grid.point(node)],
                                               cfg)[-1].generators
    else:
        node_gens = {idx: np.zeros((0, system.k)) for idx in grid.indices()}
    return TrivializationChart(system, sec, grid, lattice0, node_gens, cfg)


# actions and shifts -----------------------------------------------------------


@dataclass
class ChartTransform:
    """Action map ``J -> I`` and shift potentials on the base grid.

    ``action_values`` holds ``I_i`` for the torus indices at each node and
    ``shift_values`` the shifts ``E'^lambda`` at each node; both are
    interpolated with ``method``.
    """

    grid: BaseGrid
    k: int
    a_indices: tuple
    i_indices: tuple
    action_values: Optional[np.ndarray] = None
    shift_values: Optional[np.ndarray] = None
    method: str = "linear"
    diagnostics: dict = field(default_factory=dict)
    shift_function: Optional[Callable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self._actions = None if self.action_values is None else GridInterpolator(self.grid, self.action_values, self.method)
        self._shifts = None if self.shift_values is None else GridInterpolator(self.grid, self.shift_values, self.method)

    def with_shifts(self, shift_values, shift_function=None, **diag) -> "ChartTransform":
        return replace(self, shift_values=shift_values, shift_function=shift_function,
                       diagnostics={**self.diagnostics, **diag})

    def actions(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        I = b[:self.k].copy()
        if self._actions is not None and self.i_indices:
            I[list(self.i_indices)] = self._actions(b)
        return I

    def action_jacobian(self, b, h: Optional[float] = None) -> np.ndarray:
        """``dI/dJ`` (rows: actions, columns: integrals)."""
        b = np.asarray(b, dtype=float)
        if self._actions is None or not self.i_indices:
            return np.eye(self.k)
        sp = self.grid.spacing()[:self.k]
        M = np.eye(self.k)
        for lam in range(self.k):
            step = h if h is not None else (1e-7 * max(sp[lam], 1e-3) if sp[lam] > 0 else 1e-7)
            e = np.zeros(b.size)
            e[lam] = step
            M[:, lam] = (self.actions(b + e) - self.actions(b - e)) / (2 * step)
        return M

    def inverse(self, I, w=None, tol: float = 1e-13, max_iter: int = 50) -> np.ndarray:
        """Integral values ``J`` with ``actions(J, w) = I``."""
        I = np.atleast_1d(np.asarray(I, dtype=float))
        w = np.zeros(self.grid.ndim - self.k) if w is None else np.atleast_1d(np.asarray(w, dtype=float))
        if self._actions is None or not self.i_indices:
            return I.copy()
        J = I.copy()
        node = self.grid.nearest(np.concatenate([I, w]))
        J[list(self.i_indices)] = self.grid.point(node)[list(self.i_indices)]
        for _ in range(max_iter):
            b = np.concatenate([J, w])
            res = self.actions(b) - I
            if np.max(np.abs(res)) < tol * (1.0 + np.max(np.abs(I))):
                return J
            J = J - np.linalg.solve(self.action_jacobian(b), res)
        if np.max(np.abs(self.actions(np.concatenate([J, w])) - I)) < 1e-10:
            return J
        raise ChartError(f"action map could not be inverted at I = {I}")

    def shifts(self, b) -> np.ndarray:
        if self.shift_function is not None:
            return self.shift_function(np.asarray(b, dtype=float))
        if self._shifts is None:
            return np.zeros(self.k)
        return self._shifts(np.asarray(b, dtype=float))

    def action_table(self) -> list:
        rows = []
        for idx in self.grid.indices():
            b = self.grid.point(idx)
            rows.append({"base": b.tolist(), "I": self.actions(b).tolist()})
        return rows


def compute_actions(system: HamiltonianSystem, chart: TrivializationChart, grid: Optional[BaseGrid] = None,
                    method: str = "linear", independence_tol: float = 1e-5) -> ChartTransform:
    """Actions ``I_i = (1/2pi) * cycle integral of p.dq`` along each lattice generator.

    ``grid`` defaults to the chart grid.  Identity transform when m = 0.
    Integral axes with a single node are widened to a three-node stencil so
    that the action Jacobian is available.
    """
    grid = grid or chart.grid
    if any(grid.shape[d] == 1 for d in range(chart.k)) and chart.m:
        axes = list(grid.axes)
        for d in range(chart.k):
            if axes[d].size == 1:
                h = 1e-3 * (1.0 + abs(axes[d][0]))
                axes[d] = axes[d][0] + np.array([-h, 0.0, h])
        grid = BaseGrid(axes)
    tr = ChartTransform(grid, chart.k, chart.a_indices, chart.i_indices, method=method)
    if chart.m == 0:
        tr.diagnostics.update(ja_dependence=0.0, w_dependence=0.0)
        return tr
    values = np.empty(grid.shape + (chart.m,))
    closure = 0.0
    for idx in grid.indices():
        b = grid.point(idx)
        z = chart.section.at(b)
        gens = chart.node_generators[idx] if grid is chart.grid else chart.generators_at(b)
        for j, v in enumerate(gens):
            integral, end = liouville_integral(system, z, v, chart.cfg)
            closure = max(closure, float(np.max(np.abs(system.difference(end, z)))))
            values[idx + (j,)] = integral / TWO_PI
    tr = ChartTransform(grid, chart.k, chart.a_indices, chart.i_indices, values, method=method)
    i_idx = list(chart.i_indices)
    a_idx = list(chart.a_indices)
    worst_det, ja, wdep = np.inf, 0.0, 0.0
    for idx in grid.indices():
        b = grid.point(idx)
        M = tr.action_jacobian(b)
        det = abs(np.linalg.det(M[np.ix_(i_idx, i_idx)]))
        worst_det = min(worst_det, det)
        if a_idx:
            ja = max(ja, float(np.max(np.abs(M[np.ix_(i_idx, a_idx)]))))
    if worst_det <= 1e-8:
        raise ChartError("action Jacobian on torus directions is degenerate")
    if chart.d:
        center = grid.nearest(chart.section.base_of(chart.section.level0))
        for idx in grid.indices():
            ref = idx[:chart.k] + center[chart.k:]
            wdep = max(wdep, float(np.max(np.abs(values[idx] - values[ref]))))
    tr.diagnostics.update(
        cycle_closure=closure,
        min_torus_jacobian_det=float(worst_det),
        ja_dependence=ja,
        ja_independent=bool(ja < independence_tol),
        w_dependence=wdep,
        w_independent=bool(wdep < independence_tol),
    )
    return tr


def _section_form(system, section: Section, b, h=1e-6) -> np.ndarray:
    """Pullback of Omega to the section along the integral directions: k x k antisymmetric."""
    k = section.k
    b = np.asarray(b, dtype=float)
    z = section.at(b)
    cols = []
    for lam in range(k):
        step = h * (1.0 + abs(b[lam]))
        e = np.zeros(b.size)
        e[lam] = step
        cols.append((section.at(b + e) - section.at(b - e)) / (2 * step))
    D = np.column_stack(cols) if cols else np.zeros((system.dim, 0))
    return D.T @ system.model.omega_at(z) @ D


def _radial_primitive(system, section, b, b0, nodes: int = 8) -> np.ndarray:
    """One-form ``theta`` (in J components) with ``d theta = section form``, zero at ``b0``."""
    k = section.k
    delta = np.zeros_like(b)
    delta[:k] = (b - b0)[:k]
    if not np.any(delta):
        return np.zeros(k)
    x, wts = np.polynomial.legendre.leggauss(nodes)
    taus, wts = 0.5 * (x + 1.0), 0.5 * wts
    theta = np.zeros(k)
    base = b.copy()
    base[:k] = b0[:k]
    for t, wt in zip(taus, wts):
        beta = _section_form(system, section, base + t * delta)
        theta += wt * t * (delta[:k] @ beta)
    return theta


def compute_shifts(system: HamiltonianSystem, chart: TrivializationChart, transform: ChartTransform,
                   tol: float = 1e-5) -> ChartTransform:
    """Shift potentials making the section Lagrangian in action-angle coordinates.

    The pullback of Omega to the section is integrated radially over the base
    from the distinguished level (where the shifts vanish); the Stokes
    residual ``|d theta - beta|`` at grid nodes stands in for exactness.
    Node values are kept for reporting; the returned transform evaluates the
    radial quadrature directly at each query point, which needs section
    solves only.
    """
    grid = transform.grid
    sec = chart.section
    k = chart.k
    shift_vals = np.zeros(grid.shape + (k,))
    level_center = sec.level0
    max_beta = 0.0
    for idx in grid.indices():
        b = grid.point(idx)
        b0 = b.copy()
        b0[:k] = level_center
        theta = _radial_primitive(system, sec, b, b0)
        Minv = np.linalg.inv(transform.action_jacobian(b))
        shift_vals[idx] = -(theta @ Minv)
        max_beta = max(max_beta, float(np.max(np.abs(_section_form(system, sec, b)), initial=0.0)))
    residual = _stokes_residual(system, sec, grid) if k >= 2 and max_beta > 0 else 0.0
    if residual > tol:
        raise NonExactnessError(f"section form is not exact on the base (Stokes residual {residual:.3e})")
    shift_function = None
    if max_beta > 0:
        def shift_function(b):
            b0 = b.copy()
            b0[:k] = level_center
            return -(_radial_primitive(system, sec, b, b0) @ np.linalg.inv(transform.action_jacobian(b)))
    return transform.with_shifts(shift_vals, shift_function, section_form_max=max_beta, exactness_residual=residual)


def _stokes_residual(system, sec, grid, h=1e-4) -> float:
    k = sec.k
    worst = 0.0
    for idx in grid.indices():
        b = grid.point(idx)
        b0 = b.copy()
        b0[:k] = sec.level0
        beta = _section_form(system, sec, b)
        dtheta = np.zeros((k, k))
        grads = []
        for lam in range(k):
            e = np.zeros(b.size)
            e[lam] = h
            grads.append((_radial_primitive(system, sec, b + e, b0) - _radial_primitive(system, sec, b - e, b0)) / (2 * h))
        grads = np.array(grads)  # grads[lam, mu] = d theta_mu / dJ_lam
        dtheta = grads - grads.T
        worst = max(worst, float(np.max(np.abs(dtheta - beta))))
    return worst


# action-angle map and symplectic verification --------------------------------


class ActionAngleMap:
    """Forward and inverse maps between phase points and ``(y'; I; w)``."""

    def __init__(self, chart: TrivializationChart, transform: ChartTransform):
        self.chart = chart
        self.transform = transform
        self.k = chart.k
        self.d = chart.d

    @property
    def dim(self) -> int:
        return 2 * self.k + self.d

    def split(self, X):
        X = np.asarray(X, dtype=float)
        k = self.k
        return X[:k], X[k:2 * k], X[2 * k:]

    def forward(self, u) -> np.ndarray:
        b, y = self.chart.to_chart(u)
        I = self.transform.actions(b)
        yp = self.chart.wrap(y - self.transform.shifts(b))
        return np.concatenate([yp, I, b[self.k:]])

    def inverse(self, X) -> np.ndarray:
        yp, I, w = self.split(X)
        J = self.transform.inverse(I, w)
        b = np.concatenate([J, w])
        return self.chart.from_chart(b, yp + self.transform.shifts(b))

    def base_of(self, X) -> np.ndarray:
        _, I, w = self.split(X)
        return np.concatenate([self.transform.inverse(I, w), w])


@dataclass
class SymplecticSample:
    """Matrix of Omega in ``(y; I; z)`` chart coordinates at one point."""

    point: np.ndarray
    matrix: np.ndarray
    k: int
    d: int = 0

    def _blk(self, a, b):
        k = self.k
        sl = {"y": slice(0, k), "I": slice(k, 2 * k), "z": slice(2 * k, 2 * k + self.d)}
        return self.matrix[sl[a], sl[b]]

    @property
    def fibre_block(self):
        """Omega(y, y); zero on Lagrangian or isotropic fibres."""
        return self._blk("y", "y")

    @property
    def mixed_block(self):
        """Omega(y, I); identity in canonical coordinates."""
        return self._blk("y", "I")

    @property
    def action_block(self):
        """Omega(I, I); the block the shifts remove."""
        return self._blk("I", "I")

    @property
    def omega_AB(self):
        return self._blk("z", "z")

    @property
    def omega_A_lambda(self):
        return self._blk("z", "I")

    @property
    def omega_A_beta(self):
        return self._blk("z", "y")

    @property
    def canonical_residual(self) -> float:
        k = self.k
        return float(np.max(np.abs(self.matrix[:2 * k, :2 * k] - canonical_matrix(k)), initial=0.0))

    @property
    def antisymmetry_residual(self) -> float:
        return float(np.max(np.abs(self.matrix + self.matrix.T), initial=0.0))


def pullback(system: HamiltonianSystem, inverse_map: Callable, X, k: int, d: int = 0,
             h: float = 1e-5, max_cond: float = 1e10) -> SymplecticSample:
    """Omega expressed in the coordinates of ``inverse_map`` by central differences."""
    X = np.asarray(X, dtype=float)
    u = inverse_map(X)
    cols = []
    for j in range(X.size):
        e = np.zeros(X.size)
        e[j] = h
        cols.append(system.difference(inverse_map(X + e), inverse_map(X - e)) / (2 * h))
    D = np.column_stack(cols)
    if np.linalg.cond(D) > max_cond:
        raise ChartError(f"chart Jacobian is ill-conditioned at {X}")
    mat = D.T @ system.model.omega_at(u) @ D
    return SymplecticSample(X, 0.5 * (mat - mat.T), k, d)


def pullback_symplectic(system: HamiltonianSystem, chart: TrivializationChart, transform: ChartTransform,
                        X, h: float = 1e-5) -> SymplecticSample:
    aa = ActionAngleMap(chart, transform)
    return pullback(system, aa.inverse, X, chart.k, chart.d, h)


class Reparametrized:
    """Action-angle coordinates after ``I_a = f_a(I')``, ``I_i = I'_i``.

    ``f`` maps the full action vector ``I'`` to the cylinder actions and
    ``jac`` returns ``df_a/dI'_lambda`` with shape ``(k - m, k)``.
    """

    def __init__(self, base: ActionAngleMap, f: Callable, jac: Callable, finv: Optional[Callable] = None):
        self.base = base
        self.f = f
        self.jac = jac
        self.finv = finv
        self.k, self.d = base.k, base.d
        self.a = list(base.chart.a_indices)
        self.i = list(base.chart.i_indices)

    @property
    def dim(self) -> int:
        return self.base.dim

    def _old_actions(self, Ip) -> np.ndarray:
        I = np.array(Ip, dtype=float)
        I[self.a] = np.atleast_1d(self.f(Ip))
        return I

    def _new_actions(self, I) -> np.ndarray:
        if self.finv is not None:
            Ip = np.array(I, dtype=float)
            Ip[self.a] = np.atleast_1d(self.finv(I))
            return Ip
        Ip = np.array(I, dtype=float)
        for _ in range(60):
            res = self._old_actions(Ip)[self.a] - I[self.a]
            if np.max(np.abs(res), initial=0.0) < 1e-14 * (1 + np.max(np.abs(I))):
                break
            Ja = np.atleast_2d(self.jac(Ip))[:, self.a]
            Ip[self.a] -= np.linalg.solve(Ja, res)
        return Ip

    def _blocks(self, Ip):
        F = np.atleast_2d(np.asarray(self.jac(Ip), dtype=float))
        Faa = F[:, self.a]  # rows b, columns a: df_b / dI'_a
        if self.a and abs(np.linalg.det(Faa)) <= 1e-12:
            raise ReparametrizationError(f"reparametrization Jacobian is singular at {Ip}")
        return F, Faa

    def forward(self, u) -> np.ndarray:
        X = self.base.forward(u)
        y, I, w = self.base.split(X)
        Ip = self._new_actions(I)
        F, Faa = self._blocks(Ip)
        x = y[self.a]
        yp = y.copy()
        yp[self.a] = Faa.T @ x
        yp[self.i] = y[self.i] + F[:, self.i].T @ x
        return np.concatenate([yp, Ip, w])

    def inverse(self, Xp) -> np.ndarray:
        yp, Ip, w = self.base.split(Xp)
        F, Faa = self._blocks(Ip)
        y = yp.copy()
        x = np.linalg.solve(Faa.T, yp[self.a]) if self.a else np.zeros(0)
        y[self.a] = x
        y[self.i] = yp[self.i] - F[:, self.i].T @ x
        return self.base.inverse(np.concatenate([y, self._old_actions(Ip), w]))


def reparametrize(aa_map: ActionAngleMap, f: Callable, jac: Callable, finv: Optional[Callable] = None) -> Reparametrized:
    """New action-angle coordinates from a change of cylinder actions.

    ``x'^a = (df_b/dI'_a) x^b`` and ``phi'^i = phi^i + (df_a/dI'_i) x^a``.
    """
    return Reparametrized(aa_map, f, jac, finv)


def build_action_angle(system: HamiltonianSystem, z_M, grid: BaseGrid, box=10.0, cfg: FlowConfig = DEFAULT_CONFIG,
                       method: str = "linear", directions=None, lattice0=None, shifts: bool = True) -> ActionAngleMap:
    """Chart, actions and shifts in one call."""
    chart = build_chart(system, z_M, grid, lattice0=lattice0, box=box, cfg=cfg, directions=directions)
    tr = compute_actions(system, chart, method=method)
    if shifts:
        tr = compute_shifts(system, chart, tr)
    return ActionAngleMap(chart, tr)
