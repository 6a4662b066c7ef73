"""Period lattice (isotropy group) of the R^k action on a fibre.

The lattice is found in three stages: a coarse scan of the distance
``|g(s) z0 - z0|`` over a box of flow parameters, Newton refinement of the
local minima, and reduction of the refined return vectors to a basis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DegeneracyError,
    DegenerateFibreError,
    InconsistentLatticeError,
    InvalidInputError,
    RefinementError,
    ShrinkNeighbourhoodError,
)
from .flows import DEFAULT_CONFIG, FlowConfig, orbit_point, sample_orbit
from .phase_space import HamiltonianSystem, as_point

__all__ = [
    "IsotropyLattice",
    "FrameMatrix",
    "detect_recurrences",
    "refine_return",
    "lattice_from_returns",
    "choose_split",
    "frame_matrix",
    "continue_lattice",
    "detect_lattice",
    "rank_stability",
]

DET_THRESHOLD = 1e-8


@dataclass(frozen=True)
class IsotropyLattice:
    """Generators ``v_i`` (rows of ``generators``) and the basis split.

    ``B[:, i]`` holds the cylinder (a-index) components of ``v_i`` and
    ``C[:, i]`` its torus (i-index) components.
    """

    generators: np.ndarray
    a_indices: tuple
    i_indices: tuple

    @classmethod
    def empty(cls, k: int) -> "IsotropyLattice":
        return cls(np.zeros((0, k)), tuple(range(k)), ())

    @classmethod
    def from_generators(cls, generators, k: Optional[int] = None, i_indices=None) -> "IsotropyLattice":
        gens = np.asarray(generators, dtype=float)
        if gens.size == 0:
            return cls.empty(k if k is not None else (gens.shape[-1] if gens.ndim == 2 else 0))
        gens = np.atleast_2d(gens)
        k = gens.shape[1]
        if i_indices is None:
            i_indices = choose_split(gens)
        i_indices = tuple(int(i) for i in i_indices)
        a_indices = tuple(j for j in range(k) if j not in i_indices)
        return cls(gens, a_indices, i_indices)

    @property
    def m(self) -> int:
        return self.generators.shape[0]

    @property
    def k(self) -> int:
        return self.generators.shape[1]

    @property
    def B(self) -> np.ndarray:
        return self.generators[:, list(self.a_indices)].T.reshape(len(self.a_indices), self.m)

    @property
    def C(self) -> np.ndarray:
        return self.generators[:, list(self.i_indices)].T.reshape(self.m, self.m)

    @property
    def det_C(self) -> float:
        return float(np.linalg.det(self.C)) if self.m else 1.0

    def frame(self) -> np.ndarray:
        """Columns ``{e_a, v_i}``, in the order a-indices then generators."""
        k = self.k
        cols = [np.eye(k)[:, a] for a in self.a_indices] + list(self.generators)
        return np.column_stack(cols) if cols else np.zeros((k, 0))

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "generators": self.generators.tolist(),
            "a_indices": list(self.a_indices),
            "i_indices": list(self.i_indices),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
        }


@dataclass(frozen=True)
class FrameMatrix:
    """The linear automorphism of R^k taking the frame ``{e_a, v_i(0)}`` to ``{e_a, v_i(r)}``."""

    A: np.ndarray
    a_indices: tuple
    i_indices: tuple

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.A))

    def __matmul__(self, other):
        if isinstance(other, FrameMatrix):
            return FrameMatrix(self.A @ other.A, self.a_indices, self.i_indices)
        return self.A @ other


def _scale(z) -> float:
    return 1.0 + float(np.max(np.abs(z)))


def refine_return(system: HamiltonianSystem, z0, s_guess, cfg: FlowConfig = DEFAULT_CONFIG,
                  tol: float = 1e-10, max_iter: int = 25, start_tol: float = 0.1) -> np.ndarray:
    """Gauss-Newton solve of ``g(s) z0 = z0`` starting from ``s_guess``.

    The Jacobian of the residual with respect to ``s`` is the matrix of
    Hamiltonian vector fields at the end point.  Convergence means
    ``|residual|_inf < tol * (1 + |z0|_inf)``.
    """
    z0 = as_point(z0, system.dim)
    s = np.atleast_1d(np.asarray(s_guess, dtype=float)).copy()
    scale = _scale(z0)
    end = orbit_point(system, z0, s, cfg)
    res = system.difference(end, z0)
    err = np.max(np.abs(res))
    if err >= start_tol * scale:
        raise RefinementError(f"initial return residual {err:.3e} too large for Newton refinement")
    best = (err, s.copy())
    for _ in range(max_iter):
        if err < tol * scale:
            return s
        jac = system.vector_fields(end)
        sv = np.linalg.svd(jac, compute_uv=False)
        if sv.size == 0 or sv[-1] <= 1e-10 * max(sv[0], 1e-300):
            raise DegenerateFibreError(f"flow generators are dependent at {end}")
        step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        s = s + step
        end = orbit_point(system, z0, s, cfg)
        res = system.difference(end, z0)
        err = np.max(np.abs(res))
        if err < best[0]:
            best = (err, s.copy())
        if np.max(np.abs(step)) < 1e-15 * (1.0 + np.max(np.abs(s))) and err >= tol * scale:
            break
    if err < tol * scale:
        return s
    raise RefinementError(f"return refinement did not converge (residual {best[0]:.3e})")


def _box_bounds(box, k):
    if np.isscalar(box):
        return np.array([[-float(box), float(box)]] * k)
    b = np.asarray(box, dtype=float)
    if b.shape == (2,) and k != 2:
        return np.tile(b, (k, 1))
    if b.shape != (k, 2):
        raise InvalidInputError(f"search box must be a half-width or {k} (lo, hi) pairs")
    return b


def _local_minima(dist: np.ndarray):
    """Indices of grid nodes not larger than any neighbour (edge nodes excluded)."""
    d = dist.ndim
    interior = tuple(slice(1, -1) for _ in range(d))
    core = dist[interior]
    mask = np.ones(core.shape, dtype=bool)
    for offset in itertools.product((-1, 0, 1), repeat=d):
        if not any(offset):
            continue
        shifted = dist[tuple(slice(1 + o, dist.shape[j] - 1 + o) for j, o in enumerate(offset))]
        mask &= core <= shifted
    return [tuple(int(i) + 1 for i in idx) for idx in np.argwhere(mask)]


def detect_recurrences(system: HamiltonianSystem, z0, box=10.0, tol: float = 1e-7,
                       grid: Optional[float] = None, cfg: FlowConfig = DEFAULT_CONFIG) -> list:
    """Return vectors ``s != 0`` in the box with ``g(s) z0 = z0``.

    ``grid`` is the scan spacing (default 0.05 for k = 1, 0.1 otherwise).
    Local minima of the scanned distance that are small compared with the
    grid resolution are refined by :func:`refine_return`; the refined vectors
    are kept if they close to ``tol * (1 + |z0|)`` and are deduplicated to
    within the grid spacing.
    """
    z0 = as_point(z0, system.dim)
    k = system.k
    bounds = _box_bounds(box, k)
    if np.any(bounds[:, 0] >= 0) or np.any(bounds[:, 1] <= 0):
        raise InvalidInputError("search box must contain 0 in its interior")
    h = grid if grid is not None else (0.05 if k == 1 else 0.1)
    axes = []
    for lo, hi in bounds:
        nodes = np.concatenate([np.arange(0.0, lo - h, -h)[::-1], np.arange(h, hi + h, h)])
        nodes = nodes[(nodes >= lo - 1e-12) & (nodes <= hi + 1e-12)]
        axes.append(nodes)
    pts = sample_orbit(system, z0, np.eye(k), axes, cfg)
    dist = np.max(np.abs(system.difference(pts, z0)), axis=-1)
    speed = np.linalg.norm(system.vector_fields(z0), ord=2)
    scale = _scale(z0)
    coarse = max(10 * tol * scale, 2.0 * h * speed * np.sqrt(k))
    zero_idx = tuple(int(np.argmin(np.abs(ax))) for ax in axes)
    found = []
    for idx in _local_minima(dist):
        if idx == zero_idx or dist[idx] > coarse:
            continue
        guess = np.array([axes[j][i] for j, i in enumerate(idx)])
        try:
            s = refine_return(system, z0, guess, cfg)
        except (RefinementError, DegenerateFibreError):
            continue
        if np.max(np.abs(s)) < h:
            continue
        if np.any(s < bounds[:, 0] - 1e-12) or np.any(s > bounds[:, 1] + 1e-12):
            continue
        closure = np.max(np.abs(system.difference(orbit_point(system, z0, s, cfg), z0)))
        if closure >= tol * scale:
            continue
        if any(np.max(np.abs(s - t)) < h for t in found):
            continue
        found.append(s)
    found.sort(key=lambda v: (float(np.linalg.norm(v)), tuple(v)))
    return found


def _size_reduce(vectors: list, tol: float) -> list:
    vecs = [np.array(v, dtype=float) for v in vectors]
    for _ in range(1000):
        changed = False
        vecs.sort(key=lambda v: float(v @ v))
        vecs = [v for v in vecs if np.linalg.norm(v) > tol]
        for i in range(len(vecs)):
            for j in range(len(vecs)):
                if i == j or vecs[j] @ vecs[j] > vecs[i] @ vecs[i]:
                    continue
                mu = np.round((vecs[i] @ vecs[j]) / (vecs[j] @ vecs[j]))
                if mu != 0:
                    vecs[i] = vecs[i] - mu * vecs[j]
                    changed = True
        if not changed:
            break
    vecs = [v for v in vecs if np.linalg.norm(v) > tol]
    vecs.sort(key=lambda v: float(v @ v))
    return vecs


def _normalize_sign(v: np.ndarray, tol: float) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > tol)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def _coefficients(basis: np.ndarray, c: np.ndarray):
    coef = np.linalg.lstsq(basis.T, c, rcond=None)[0]
    rounded = np.round(coef)
    return rounded, float(np.max(np.abs(basis.T @ rounded - c)))


def choose_split(generators) -> tuple:
    """Torus indices maximizing ``|det C|``; ties go to the lexicographically smallest subset."""
    gens = np.atleast_2d(np.asarray(generators, dtype=float))
    m, k = gens.shape
    if m == 0:
        return ()
    best, best_det = None, -1.0
    for idx in itertools.combinations(range(k), m):
        det = abs(np.linalg.det(gens[:, idx]))
        if det > best_det * (1 + 1e-12) + 1e-300:
            best, best_det = idx, det
    if best_det <= DET_THRESHOLD:
        raise DegeneracyError("no basis split gives a nondegenerate torus block")
    return tuple(best)


def lattice_from_returns(candidates: Sequence, tol: float = 1e-7, k: Optional[int] = None) -> IsotropyLattice:
    """Reduced lattice basis spanned by refined return vectors."""
    cands = [np.atleast_1d(np.asarray(c, dtype=float)) for c in candidates]
    if not cands:
        if k is None:
            raise InvalidInputError("k is required when there are no candidates")
        return IsotropyLattice.empty(k)
    k = cands[0].size
    cands.sort(key=lambda v: float(v @ v))
    basis: list = []
    for c in cands:
        ctol = tol * (1.0 + np.max(np.abs(c)))
        if basis:
            _, err = _coefficients(np.array(basis), c)
            if err < ctol:
                continue
        basis = _size_reduce(basis + [c], ctol)
    if len(basis) > k:
        raise InconsistentLatticeError(f"{len(basis)} generators found in R^{k}")
    gens = np.array([_normalize_sign(v, tol) for v in basis]).reshape(len(basis), k)
    if gens.shape[0]:
        sv = np.linalg.svd(gens, compute_uv=False)
        if sv[-1] <= 1e-8:
            raise InconsistentLatticeError("return vectors do not reduce to independent generators")
        for c in cands:
            _, err = _coefficients(gens, c)
            if err >= tol * (1.0 + np.max(np.abs(c))):
                raise InconsistentLatticeError(f"return vector {c} is not an integer combination of {gens}")
    order = sorted(range(gens.shape[0]),
                   key=lambda i: (round(float(np.linalg.norm(gens[i])), 9), int(np.flatnonzero(np.abs(gens[i]) > tol)[0])))
    gens = gens[order]
    return IsotropyLattice.from_generators(gens, k)


def frame_matrix(lattice0: IsotropyLattice, latticeR: IsotropyLattice) -> FrameMatrix:
    if lattice0.m != latticeR.m or lattice0.k != latticeR.k:
        raise InvalidInputError("lattices have different ranks")
    if lattice0.i_indices != latticeR.i_indices:
        raise InvalidInputError("lattices use different basis splits")
    k, m = lattice0.k, lattice0.m
    a_idx, i_idx = list(lattice0.a_indices), list(lattice0.i_indices)
    if m and abs(lattice0.det_C) <= DET_THRESHOLD:
        raise DegeneracyError("torus block of the reference lattice is singular")
    perm = a_idx + i_idx
    block = np.eye(k)
    if m:
        c0_inv = np.linalg.inv(lattice0.C)
        block[:k - m, k - m:] = (latticeR.B - lattice0.B) @ c0_inv
        block[k - m:, k - m:] = latticeR.C @ c0_inv
    A = np.empty((k, k))
    A[np.ix_(perm, perm)] = block
    return FrameMatrix(A, lattice0.a_indices, lattice0.i_indices)


def _refine_all(system, z, guesses, cfg):
    return np.array([refine_return(system, z, g, cfg) for g in guesses]).reshape(len(guesses), system.k)


def continue_lattice(system: HamiltonianSystem, lattice0: IsotropyLattice, section: Callable,
                     path: Sequence, cfg: FlowConfig = DEFAULT_CONFIG, max_bisect: int = 8) -> list:
    """Follow the generators of ``lattice0`` along a path of level values.

    The first path entry is the level of ``lattice0``.  Each step predicts by
    linear extrapolation and corrects with :func:`refine_return`; a failed
    correction halves the step.
    """
    path = [np.atleast_1d(np.asarray(r, dtype=float)) for r in path]
    out = [lattice0]
    if lattice0.m == 0:
        return [lattice0] * len(path)
    prev_r, prev_v = path[0], lattice0.generators
    older = None
    for r in path[1:]:
        v = _continue_step(system, section, prev_r, prev_v, older, r, cfg, max_bisect)
        lat = IsotropyLattice(v, lattice0.a_indices, lattice0.i_indices)
        if abs(lat.det_C) <= DET_THRESHOLD:
            raise ShrinkNeighbourhoodError(f"torus block became singular at level {r}")
        out.append(lat)
        older = (prev_r, prev_v)
        prev_r, prev_v = r, v
    return out


def _continue_step(system, section, r0, v0, older, r1, cfg, depth):
    guess = v0
    if older is not None:
        r_old, v_old = older
        d_old = r0 - r_old
        denom = float(d_old @ d_old)
        if denom > 0:
            t = float((r1 - r0) @ d_old) / denom
            guess = v0 + t * (v0 - v_old)
    z = section(r1)
    try:
        return _refine_all(system, z, guess, cfg)
    except (RefinementError, DegenerateFibreError):
        if depth <= 0:
            raise
    mid = 0.5 * (r0 + r1)
    v_mid = _continue_step(system, section, r0, v0, None, mid, cfg, depth - 1)
    return _continue_step(system, section, mid, v_mid, (r0, v0), r1, cfg, depth - 1)


def detect_lattice(system: HamiltonianSystem, z0, box=10.0, tol: float = 1e-7,
                   grid: Optional[float] = None, cfg: FlowConfig = DEFAULT_CONFIG) -> IsotropyLattice:
    cands = detect_recurrences(system, z0, box, tol, grid, cfg)
    return lattice_from_returns(cands, tol, k=system.k)


def rank_stability(system: HamiltonianSystem, z0, box=10.0, tol: float = 1e-7,
                   grid: Optional[float] = None, cfg: FlowConfig = DEFAULT_CONFIG):
    """Torus rank for the box and for the doubled box; returns ``(m, m_doubled, stable)``."""
    bounds = _box_bounds(box, system.k)
    m1 = detect_lattice(system, z0, bounds, tol, grid, cfg).m
    m2 = detect_lattice(system, z0, 2 * bounds, tol, grid, cfg).m
    return m1, m2, m1 == m2
