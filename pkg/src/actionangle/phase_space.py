"""Phase space, integrals of motion and the Poisson algebra.

Coordinates are ordered ``(q^1..q^n, p_1..p_n)``.  The default symplectic
matrix is the constant Darboux matrix ``[[0, I], [-I, 0]]``; a Hamiltonian
vector field ``X_F`` solves ``Omega @ X_F = -grad F`` which gives the usual
``q' = dF/dp, p' = -dF/dq``.  The Poisson tensor is ``P = -Omega^{-1}`` so
that ``{q^1, p_1} = 1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DegeneracyError,
    EvaluationError,
    InvalidInputError,
)

__all__ = [
    "ScalarField",
    "SymplecticModel",
    "IntegralSet",
    "HamiltonianSystem",
    "InvolutionReport",
    "as_point",
    "fd_gradient",
    "poisson_bracket",
    "hamiltonian_vector_field",
    "check_involution",
    "check_regularity",
    "jacobi_residual",
    "closedness_residual",
    "extend_time_dependent",
]


def as_point(z, dim: Optional[int] = None) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise InvalidInputError(f"phase point must be a vector, got shape {z.shape}")
    if dim is not None and z.shape[0] != dim:
        raise InvalidInputError(f"phase point has length {z.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("phase point has non-finite entries")
    return z


def fd_gradient(fun: Callable[[np.ndarray], float], z: np.ndarray) -> np.ndarray:
    """Fourth-order central difference gradient with step 1e-5*(1+|z|)."""
    z = np.asarray(z, dtype=float)
    h = 1e-5 * (1.0 + np.max(np.abs(z)))
    g = np.empty_like(z)
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = h
        g[j] = (-fun(z + 2 * e) + 8 * fun(z + e) - 8 * fun(z - e) + fun(z - 2 * e)) / (12 * h)
    return g


@dataclass(frozen=True)
class ScalarField:
    """A smooth function on phase space with an optional analytic gradient."""

    func: Callable[[np.ndarray], float]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    label: str = "F"
    expression: Optional[str] = None

    def __call__(self, z) -> float:
        return float(self.func(np.asarray(z, dtype=float)))

    def gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.grad is not None:
            g = np.asarray(self.grad(z), dtype=float)
        else:
            g = fd_gradient(self.func, z)
        if g.shape != z.shape:
            raise EvaluationError(f"gradient of {self.label} has shape {g.shape}, expected {z.shape}")
        if not np.all(np.isfinite(g)):
            raise EvaluationError(f"non-finite gradient of {self.label} at {z}")
        return g


def _canonical_matrix(n: int) -> np.ndarray:
    omega = np.zeros((2 * n, 2 * n))
    omega[:n, n:] = np.eye(n)
    omega[n:, :n] = -np.eye(n)
    return omega


@dataclass(frozen=True)
class SymplecticModel:
    """Symplectic structure on R^{2n}.

    ``omega`` is either ``None`` (constant Darboux form) or a callable
    returning the 2n x 2n matrix at a point.
    """

    n: int
    omega: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def canonical(self) -> bool:
        return self.omega is None

    def omega_at(self, z) -> np.ndarray:
        if self.omega is None:
            return _canonical_matrix(self.n)
        return np.asarray(self.omega(np.asarray(z, dtype=float)), dtype=float)

    def poisson_at(self, z) -> np.ndarray:
        if self.omega is None:
            return _canonical_matrix(self.n)
        return -np.linalg.inv(self.omega_at(z))

    def vector_field(self, grad: np.ndarray, z=None) -> np.ndarray:
        """Solve ``Omega X = -grad`` for X."""
        if self.omega is None:
            n = self.n
            return np.concatenate([grad[n:], -grad[:n]])
        om = self.omega_at(z)
        if abs(np.linalg.det(om)) <= 1e-12:
            raise DegeneracyError(f"symplectic matrix is degenerate at {z}")
        return np.linalg.solve(om, -grad)

    def check(self, z, tol: float = 1e-12) -> None:
        om = self.omega_at(z)
        if np.max(np.abs(om + om.T)) > tol:
            raise DegeneracyError("symplectic matrix is not antisymmetric")
        if abs(np.linalg.det(om)) <= 1e-12:
            raise DegeneracyError("symplectic matrix is degenerate")


@dataclass(frozen=True)
class IntegralSet:
    functions: tuple

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))

    @property
    def k(self) -> int:
        return len(self.functions)

    @property
    def labels(self) -> list:
        return [f.label for f in self.functions]

    def __iter__(self):
        return iter(self.functions)

    def __getitem__(self, i) -> ScalarField:
        return self.functions[i]

    def __len__(self):
        return len(self.functions)


@dataclass(frozen=True)
class HamiltonianSystem:
    """A symplectic phase space together with k integrals in involution.

    ``periods`` gives, per coordinate, the period of an angular coordinate
    (for example ``2*pi`` for the pendulum angle) or ``None``.
    """

    n: int
    integrals: IntegralSet
    model: SymplecticModel = None
    name: str = "system"
    periods: tuple = None
    metadata: dict = field(default_factory=dict)
    source: str = ""

    def __post_init__(self):
        if self.model is None:
            object.__setattr__(self, "model", SymplecticModel(self.n))
        if self.periods is None:
            object.__setattr__(self, "periods", (None,) * (2 * self.n))
        else:
            object.__setattr__(self, "periods", tuple(self.periods))
        if len(self.periods) != 2 * self.n:
            raise InvalidInputError("periods must have one entry per coordinate")
        if not isinstance(self.integrals, IntegralSet):
            object.__setattr__(self, "integrals", IntegralSet(tuple(self.integrals)))
        if self.integrals.k > self.n:
            raise InvalidInputError(f"{self.integrals.k} integrals exceed n = {self.n}")

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def k(self) -> int:
        return self.integrals.k

    def level(self, z) -> np.ndarray:
        """The level map: values of all integrals at z."""
        z = as_point(z, self.dim)
        return np.array([f(z) for f in self.integrals])

    def jacobian(self, z) -> np.ndarray:
        z = as_point(z, self.dim)
        return np.array([f.gradient(z) for f in self.integrals]).reshape(self.k, self.dim)

    def vector_field(self, lam: int, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.model.vector_field(self.integrals[lam].gradient(z), z)

    def vector_fields(self, z) -> np.ndarray:
        """Matrix whose columns are the Hamiltonian vector fields of all integrals."""
        z = np.asarray(z, dtype=float)
        if self.k == 0:
            return np.zeros((self.dim, 0))
        return np.column_stack([self.vector_field(lam, z) for lam in range(self.k)])

    def difference(self, a, b) -> np.ndarray:
        """``a - b`` with angular coordinates wrapped into [-period/2, period/2)."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        for j, per in enumerate(self.periods):
            if per is not None:
                d[..., j] = (d[..., j] + 0.5 * per) % per - 0.5 * per
        return d

    @property
    def has_periodic(self) -> bool:
        return any(p is not None for p in self.periods)


def poisson_bracket(f: ScalarField, g: ScalarField, z, model: Optional[SymplecticModel] = None) -> float:
    """``{f, g} = grad f . P . grad g``."""
    z = np.asarray(z, dtype=float)
    if model is None:
        if z.size % 2:
            raise InvalidInputError("phase point must have even length")
        model = SymplecticModel(z.size // 2)
    z = as_point(z, model.dim)
    gf = f.gradient(z)
    gg = g.gradient(z)
    if model.canonical:
        n = model.n
        return float(gf[:n] @ gg[n:] - gf[n:] @ gg[:n])
    return float(gf @ model.poisson_at(z) @ gg)


def hamiltonian_vector_field(F: ScalarField, z, model: Optional[SymplecticModel] = None) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if model is None:
        model = SymplecticModel(z.size // 2)
    z = as_point(z, model.dim)
    return model.vector_field(F.gradient(z), z)


@dataclass
class InvolutionReport:
    max_brackets: dict
    tol: float

    @property
    def failures(self) -> dict:
        return {pair: v for pair, v in self.max_brackets.items() if v > self.tol}

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_residual(self) -> float:
        return max(self.max_brackets.values(), default=0.0)


def check_involution(integrals, samples: Sequence, tol: float = 1e-8,
                     model: Optional[SymplecticModel] = None) -> InvolutionReport:
    integrals = list(integrals)
    samples = [np.asarray(s, dtype=float) for s in samples]
    if not samples:
        raise InvalidInputError("involution check needs at least one sample point")
    out = {}
    for a, b in itertools.combinations(range(len(integrals)), 2):
        out[(a, b)] = max(abs(poisson_bracket(integrals[a], integrals[b], z, model)) for z in samples)
    return InvolutionReport(out, tol)


def check_regularity(integrals, z, tol: float = 1e-8):
    """Numerical rank of the Jacobian of the level map and its smallest singular value.

    Singular values at or below ``tol`` count as zero.
    """
    z = np.asarray(z, dtype=float)
    integrals = list(integrals)
    if not integrals:
        return 0, 0.0
    jac = np.array([f.gradient(z) for f in integrals])
    sv = np.linalg.svd(jac, compute_uv=False)
    rank = int(np.sum(sv > tol))
    return rank, float(sv[-1])


def jacobi_residual(f: ScalarField, g: ScalarField, h: ScalarField, z,
                    model: Optional[SymplecticModel] = None) -> float:
    """Cyclic sum of nested brackets, nested brackets evaluated by finite differences."""

    def bracket_field(a, b):
        return ScalarField(lambda x: poisson_bracket(a, b, x, model))

    total = (poisson_bracket(f, bracket_field(g, h), z, model)
             + poisson_bracket(g, bracket_field(h, f), z, model)
             + poisson_bracket(h, bracket_field(f, g), z, model))
    return abs(total)


def closedness_residual(model: SymplecticModel, z, rng=None, triples: int = 10, h: float = 1e-4) -> float:
    """Max |dOmega| over random coordinate triples, by central differences."""
    z = np.asarray(z, dtype=float)
    if model.canonical or model.dim < 3:
        return 0.0
    rng = np.random.default_rng(0) if rng is None else rng
    dim = model.dim

    def d_omega(j, a, b):
        e = np.zeros(dim)
        e[j] = h
        return (model.omega_at(z + e)[a, b] - model.omega_at(z - e)[a, b]) / (2 * h)

    worst = 0.0
    for _ in range(triples):
        i, j, k = rng.choice(dim, size=3, replace=False)
        val = d_omega(i, j, k) + d_omega(j, k, i) + d_omega(k, i, j)
        worst = max(worst, abs(val))
    return worst


def extend_time_dependent(H: Callable, n: int, grad: Optional[Callable] = None,
                          name: str = "time_extended", label: str = "F1",
                          expression: Optional[str] = None):
    """Autonomous extension of a time-dependent Hamiltonian ``H(t, q, p)``.

    The extended phase space has coordinates ``(t, q^1..q^n, p_t, p_1..p_n)``
    and the single integral ``p_t + H(t, q, p)``.  Returns the system and its
    integral set.  ``grad``, when given,
    returns ``(dH/dt, dH/dq, dH/dp)``.
    """
    m = n + 1

    def split(z):
        return z[0], z[1:m], z[m + 1:]

    def value(z):
        t, q, p = split(z)
        return z[m] + H(t, q, p)

    gradient = None
    if grad is not None:
        def gradient(z):
            t, q, p = split(z)
            ht, hq, hp = grad(t, q, p)
            return np.concatenate([[ht], np.atleast_1d(hq), [1.0], np.atleast_1d(hp)])

    F1 = ScalarField(value, gradient, label=label, expression=expression)
    system = HamiltonianSystem(m, IntegralSet((F1,)), name=name,
                               metadata={"time_coordinate": 0, "expected_m": 0})
    return system, system.integrals
