"""Charts for partially integrable systems (k < n).

Leaf space coordinates are the integral values ``J`` together with linear
coordinates ``w`` on an affine slice through the base point that is
orthogonal to the leaf tangent space and to the integral gradients.  The
resulting chart has coordinates ``(y'; I; w)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .chart import (
    ActionAngleMap,
    BaseGrid,
    SymplecticSample,
    build_chart,
    build_section,
    compute_actions,
    compute_shifts,
    pullback,
)
from .errors import (
    BlowUpError,
    IncompletenessError,
    InvalidInputError,
    NonDiffeomorphicLeavesError,
    NonRegularPointError,
)
from .flows import DEFAULT_CONFIG, FlowConfig, group_action
from .lattice import detect_lattice
from .phase_space import HamiltonianSystem, as_point, check_regularity

__all__ = [
    "TransversalChart",
    "HolonomyReport",
    "BlockReport",
    "build_transversal",
    "holonomy_check",
    "build_partial_chart",
    "verify_block_form",
    "leaf_field_components",
    "default_loops",
]


@dataclass(frozen=True)
class TransversalChart:
    """Affine slice ``z_M + T w`` with ``|w_j| <= extent``."""

    base_point: np.ndarray
    gradients: np.ndarray  # 2n x k
    leaf_tangent: np.ndarray  # 2n x k
    basis: np.ndarray  # 2n x 2(n-k), orthonormal
    extent: float = 1.0

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def coordinates(self, u) -> np.ndarray:
        return self.basis.T @ (np.asarray(u, dtype=float) - self.base_point)

    def point(self, w) -> np.ndarray:
        return self.base_point + self.basis @ np.asarray(w, dtype=float)

    def contains(self, w) -> bool:
        return bool(np.all(np.abs(np.asarray(w, dtype=float)) <= self.extent * (1 + 1e-12)))


def _complement(span: np.ndarray, dim: int, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the complement of ``span``, built from coordinate axes.

    Axes are picked greedily by largest remaining component, then kept in
    coordinate order, so coordinate planes come out as themselves.
    """
    q, r = np.linalg.qr(span) if span.size else (np.zeros((dim, 0)), None)
    if span.size:
        q = q[:, np.abs(np.diag(r)) > tol]
    chosen = []
    basis = [q[:, j] for j in range(q.shape[1])]
    target = dim - len(basis)
    while len(chosen) < target:
        best, best_norm, best_vec = None, 0.0, None
        for j in range(dim):
            if j in chosen:
                continue
            v = np.eye(dim)[j]
            for b in basis:
                v = v - (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > best_norm + 1e-12:
                best, best_norm, best_vec = j, nv, v
        chosen.append(best)
        basis.append(best_vec / best_norm)
    order = np.argsort(chosen)
    cols = [basis[q.shape[1] + j] for j in order]
    return np.column_stack(cols) if cols else np.zeros((dim, 0))


def build_transversal(system: HamiltonianSystem, z_M, extent: float = 1.0) -> TransversalChart:
    """Slice through ``z_M`` orthogonal to the leaf tangents and integral gradients."""
    z_M = as_point(z_M, system.dim)
    rank, smin = check_regularity(system.integrals, z_M)
    if rank < system.k:
        raise NonRegularPointError(f"integrals are dependent at {z_M.tolist()} (smallest singular value {smin:.3e})")
    G = system.jacobian(z_M).T
    V = system.vector_fields(z_M)
    T = _complement(np.hstack([G, V]), system.dim)
    if T.shape[1] != 2 * (system.n - system.k):
        raise NonRegularPointError("leaf tangents and gradients do not span a 2k-dimensional space")
    # transversality of (F, z) to the leaves
    leaf_perp = _complement(V, system.dim)
    jac = np.vstack([system.jacobian(z_M), T.T]) @ leaf_perp
    if jac.size and np.linalg.svd(jac, compute_uv=False)[-1] <= 1e-8:
        raise NonRegularPointError("transversal coordinates are degenerate at the base point")
    return TransversalChart(z_M, G, V, T, float(extent))


@dataclass
class HolonomyReport:
    displacements: list
    inconclusive: int
    tol: float

    @property
    def max_displacement(self) -> float:
        return max(self.displacements, default=0.0)

    @property
    def verdict(self) -> str:
        if not self.displacements:
            return "inconclusive"
        return "supported" if self.max_displacement <= self.tol else "unsupported"

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "max_displacement": self.max_displacement,
                "loops": len(self.displacements) + self.inconclusive, "inconclusive": self.inconclusive}


def holonomy_check(system: HamiltonianSystem, transversal: TransversalChart, loops: Sequence,
                   tol: float = 1e-7, cfg: FlowConfig = DEFAULT_CONFIG, slice_tol: float = 1e-6) -> HolonomyReport:
    """Follow leaf paths from the slice and measure where they come back.

    Each loop is ``(w, segments)``: a start ``w`` in slice coordinates and a
    list of flow parameters applied in turn.  A path whose end point is off
    the slice, or whose start or end lies outside the extent, is counted as
    inconclusive.
    """
    frame = np.hstack([transversal.gradients, transversal.basis])
    disp, bad = [], 0
    for w, segments in loops:
        w = np.asarray(w, dtype=float)
        if not transversal.contains(w):
            bad += 1
            continue
        z0 = transversal.point(w)
        z = z0
        try:
            for s in segments:
                z = group_action(system, z, s, cfg)
        except (IncompletenessError, BlowUpError):
            bad += 1
            continue
        delta = system.difference(z, transversal.base_point)
        coef = np.linalg.lstsq(frame, delta, rcond=None)[0]
        off = np.max(np.abs(frame @ coef - delta))
        w_end = coef[transversal.gradients.shape[1]:]
        if off > slice_tol or not transversal.contains(w_end):
            bad += 1
            continue
        start = np.concatenate([np.zeros(transversal.gradients.shape[1]), w])
        disp.append(float(np.max(np.abs(coef - start))))
    return HolonomyReport(disp, bad, tol)


def default_loops(chart_map: ActionAngleMap, transversal: TransversalChart, samples: int = 3) -> list:
    """One loop per torus generator at a few slice points, plus back-and-forth cylinder paths."""
    loops = []
    gens = chart_map.chart.lattice0.generators
    offsets = np.linspace(-0.5, 0.5, samples) * transversal.extent
    for off in offsets:
        w = np.full(transversal.dim, off)
        for v in gens:
            loops.append((w, [v]))
        for a in chart_map.chart.a_indices:
            e = np.zeros(chart_map.k)
            e[a] = 1.0
            loops.append((w, [e, -e]))
    return loops


def build_partial_chart(system: HamiltonianSystem, z_M, grid: BaseGrid, transversal: Optional[TransversalChart] = None,
                        box=10.0, cfg: FlowConfig = DEFAULT_CONFIG, method: str = "linear",
                        detect: str = "all", tol: float = 1e-7) -> ActionAngleMap:
    """Action-angle chart over a tensor grid in ``(J, w)``.

    For ``k = n`` this is the complete-case chart.  ``detect`` chooses where
    the torus rank is re-detected: ``"all"`` nodes, grid ``"corners"`` or
    only the ``"center"``.
    """
    z_M = as_point(z_M, system.dim)
    if system.k == system.n:
        chart = build_chart(system, z_M, grid, box=box, cfg=cfg)
        return ActionAngleMap(chart, compute_shifts(system, chart, compute_actions(system, chart, method=method)))
    transversal = transversal or build_transversal(system, z_M)
    if grid.ndim != system.k + transversal.dim:
        raise InvalidInputError(f"partial grid needs {system.k + transversal.dim} axes")
    sec = build_section(system, z_M, grid, transversal=transversal.basis)
    lattice0 = detect_lattice(system, z_M, box, tol, cfg=cfg)
    nodes = list(grid.indices())
    if detect == "corners":
        nodes = [idx for idx in nodes if all(i in (0, n - 1) for i, n in zip(idx, grid.shape))]
    elif detect == "center":
        nodes = []
    elif detect != "all":
        raise InvalidInputError(f"unknown detection mode {detect!r}")
    for idx in nodes:
        m = detect_lattice(system, sec.at(grid.point(idx)), box, tol, cfg=cfg).m
        if m != lattice0.m:
            raise NonDiffeomorphicLeavesError(
                f"torus rank changes from {lattice0.m} to {m} at base point {grid.point(idx).tolist()}")
    chart = build_chart(system, z_M, grid, lattice0=lattice0, box=box, cfg=cfg, section=sec)
    tr = compute_actions(system, chart, method=method)
    tr = compute_shifts(system, chart, tr)
    aa = ActionAngleMap(chart, tr)
    aa.transversal = transversal
    return aa


@dataclass
class BlockReport:
    """Block-form verification at one chart point."""

    sample: SymplecticSample
    independence_residual: float
    tol: float = 1e-5
    details: dict = field(default_factory=dict)

    @property
    def canonical_residual(self) -> float:
        return self.sample.canonical_residual

    @property
    def omega_A_beta_residual(self) -> float:
        return float(np.max(np.abs(self.sample.omega_A_beta), initial=0.0))

    @property
    def passed(self) -> bool:
        return max(self.canonical_residual, self.omega_A_beta_residual, self.independence_residual) < self.tol

    def to_dict(self) -> dict:
        return {
            "canonical_residual": self.canonical_residual,
            "omega_A_beta": self.omega_A_beta_residual,
            "omega_AB": self.sample.omega_AB.tolist(),
            "omega_A_lambda": self.sample.omega_A_lambda.tolist(),
            "independence_residual": self.independence_residual,
            "passed": self.passed,
        }


def verify_block_form(system: HamiltonianSystem, chart_map: ActionAngleMap, X, tol: float = 1e-5,
                      h: float = 1e-5) -> BlockReport:
    """Symplectic matrix in chart coordinates at ``X`` and its block checks.

    The ``z``-blocks are sampled a second time at shifted leaf coordinates
    to check that they depend on ``(I, z)`` only.
    """
    X = np.asarray(X, dtype=float)
    k, d = chart_map.k, chart_map.d
    sample = pullback(system, chart_map.inverse, X, k, d, h)
    X2 = X.copy()
    X2[:k] += 0.37
    other = pullback(system, chart_map.inverse, X2, k, d, h)
    indep = 0.0
    if d:
        indep = float(max(np.max(np.abs(sample.omega_AB - other.omega_AB)),
                          np.max(np.abs(sample.omega_A_lambda - other.omega_A_lambda))))
    return BlockReport(sample, indep, tol)


def leaf_field_components(system: HamiltonianSystem, chart_map: ActionAngleMap, X, h: float = 1e-5) -> np.ndarray:
    """Components of each leaf vector field in chart coordinates (one column per integral)."""
    X = np.asarray(X, dtype=float)
    u = chart_map.inverse(X)
    cols = []
    for j in range(X.size):
        e = np.zeros(X.size)
        e[j] = h
        cols.append(system.difference(chart_map.inverse(X + e), chart_map.inverse(X - e)) / (2 * h))
    D = np.column_stack(cols)
    return np.linalg.solve(D, system.vector_fields(u))
