"""Benchmark systems and the system-definition loader.

Text format, one directive per line (``#`` starts a comment)::

    name: pendulum
    n: 1
    periodic: q1                 # angular coordinates, period 2*pi
    region: q1 = -3.0 .. 3.0     # optional coordinate bounds
    meta: expected_m = 1         # optional numeric metadata
    H = p1^2/2 - cos(q1)         # integrals, one "label = expression" per line

A JSON document with the keys ``name``, ``n``, ``integrals`` (list of
``"label = expression"`` strings or a label -> expression mapping),
``periodic``, ``region`` and ``metadata`` is accepted as well.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidInputError, ParseError, UnknownSystemError
from .expr import parse_expression
from .phase_space import HamiltonianSystem, IntegralSet, ScalarField

__all__ = ["SystemDefinition", "parse_system", "load_system", "builtin", "BUILTINS"]


@dataclass(frozen=True)
class SystemDefinition:
    name: str
    n: int
    integrals: tuple  # of (label, expression text)
    fields: tuple  # compiled ScalarField per integral
    periodic: tuple = ()
    region: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.integrals)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "integrals": [f"{label} = {text}" for label, text in self.integrals],
            "periodic": list(self.periodic),
            "region": {k: list(v) for k, v in self.region.items()},
            "metadata": self.metadata,
        }

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_system(self) -> HamiltonianSystem:
        periods = [None] * (2 * self.n)
        for var in self.periodic:
            periods[_var_index(var, self.n)] = 2 * math.pi
        return HamiltonianSystem(self.n, IntegralSet(self.fields), name=self.name,
                                 periods=tuple(periods), metadata=dict(self.metadata),
                                 source=json.dumps(self.to_dict(), sort_keys=True))


def _var_index(var: str, n: int) -> int:
    m = re.fullmatch(r"([qp])([1-9]\d*)", var.strip())
    if not m or int(m.group(2)) > n:
        raise InvalidInputError(f"unknown coordinate {var!r}")
    return int(m.group(2)) - 1 + (n if m.group(1) == "p" else 0)


def _field_from_text(label: str, text: str, n: int, line: int = 1, col0: int = 0) -> ScalarField:
    ex = parse_expression(text, n, line, col0)
    return ScalarField(ex.value, ex.gradient, label=label, expression=ex.text)


def _definition(name, n, integrals, periodic=(), region=None, metadata=None, line_cols=None):
    if not integrals:
        raise ParseError("no integrals defined")
    if len(integrals) > n:
        raise ParseError(f"{len(integrals)} integrals exceed n = {n}")
    fields = []
    for j, (label, text) in enumerate(integrals):
        line, col0 = line_cols[j] if line_cols else (None, 0)
        fields.append(_field_from_text(label, text, n, line, col0))
    for var in periodic:
        _var_index(var, n)
    return SystemDefinition(name, n, tuple((lab, f.expression) for (lab, _), f in zip(integrals, fields)),
                            tuple(fields), tuple(periodic), dict(region or {}), dict(metadata or {}))


def _parse_json(text: str, n: Optional[int]) -> SystemDefinition:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    integrals = doc.get("integrals", [])
    if isinstance(integrals, dict):
        pairs = list(integrals.items())
    else:
        pairs = []
        for item in integrals:
            if "=" not in item:
                raise ParseError(f"integral {item!r} lacks '='")
            label, expr = item.split("=", 1)
            pairs.append((label.strip(), expr.strip()))
    n = int(doc.get("n", n or 0)) or None
    if n is None:
        n = max(parse_expression(e).n for _, e in pairs)
    region = {k: tuple(float(x) for x in v) for k, v in doc.get("region", {}).items()}
    return _definition(doc.get("name", "system"), n, pairs, tuple(doc.get("periodic", [])),
                       region, doc.get("metadata", {}))


def parse_system(text: str, n: Optional[int] = None, name: Optional[str] = None) -> SystemDefinition:
    """Parse a system definition (text format or JSON)."""
    if text.lstrip().startswith("{"):
        d = _parse_json(text, n)
        return d if name is None else replace(d, name=name)
    header = {"name": name or "system", "n": n}
    periodic, region, meta = [], {}, {}
    integrals, positions = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        directive = re.match(r"\s*(name|n|periodic|region|meta)\s*:(.*)$", line)
        if directive:
            key, value = directive.group(1), directive.group(2).strip()
            if key == "name":
                header["name"] = value
            elif key == "n":
                if not value.isdigit() or int(value) < 1:
                    raise ParseError(f"invalid dimension {value!r}", lineno, directive.start(2) + 1)
                header["n"] = int(value)
            elif key == "periodic":
                periodic.extend(v.strip() for v in value.split(",") if v.strip())
            elif key == "region":
                m = re.fullmatch(r"(\w+)\s*=\s*(\S+)\s*\.\.\s*(\S+)", value)
                if not m:
                    raise ParseError("region must read 'var = lo .. hi'", lineno, directive.start(2) + 1)
                region[m.group(1)] = (float(m.group(2)), float(m.group(3)))
            else:
                m = re.fullmatch(r"(\w+)\s*=\s*(.+)", value)
                if not m:
                    raise ParseError("metadata must read 'key = value'", lineno, directive.start(2) + 1)
                try:
                    meta[m.group(1)] = float(m.group(2))
                except ValueError:
                    meta[m.group(1)] = m.group(2).strip()
            continue
        m = re.match(r"\s*([A-Za-z_]\w*)\s*=(.*)$", line)
        if not m:
            raise ParseError("expected 'label = expression' or a directive", lineno, 1)
        integrals.append((m.group(1), m.group(2)))
        positions.append((lineno, m.start(2)))
    n_val = header["n"]
    if n_val is None:
        n_val = max((parse_expression(e, None, ln, c).n for (_, e), (ln, c) in zip(integrals, positions)), default=1)
    return _definition(header["name"], n_val, integrals, tuple(periodic), region, meta, positions)


def load_system(spec: str) -> SystemDefinition:
    """A builtin name or a path to a system file."""
    if spec in BUILTINS:
        return builtin(spec)
    path = Path(spec)
    if not path.exists():
        raise UnknownSystemError(f"{spec!r} is neither a builtin system nor a file")
    return parse_system(path.read_text(encoding="utf-8"))


# builtin systems -----------------------------------------------------------


def _kepler_point(E: float, L: float) -> list:
    e = math.sqrt(1.0 + 2.0 * E * L * L)
    a = -1.0 / (2.0 * E)
    r = a * (1.0 + e)
    return [r, 0.0, 0.0, L / r]


def _kepler_H(z):
    r = math.hypot(z[0], z[1])
    return 0.5 * (z[2] ** 2 + z[3] ** 2) - 1.0 / r


def _kepler_dH(z):
    r3 = math.hypot(z[0], z[1]) ** 3
    return np.array([z[0] / r3, z[1] / r3, z[2], z[3]])


_SPECS = {
    "oscillator1d": dict(
        n=1,
        integrals=[("H", "(p1^2 + q1^2)/2",
                    lambda z: 0.5 * (z[0] ** 2 + z[1] ** 2), lambda z: np.array([z[0], z[1]]))],
        metadata=dict(expected_m=1, period=2 * math.pi, point=[1.0, 0.0]),
    ),
    "free1d": dict(
        n=1,
        integrals=[("H", "p1^2/2", lambda z: 0.5 * z[1] ** 2, lambda z: np.array([0.0, z[1]]))],
        metadata=dict(expected_m=0, point=[0.0, 1.0]),
    ),
    "osc_free": dict(
        n=2,
        integrals=[("H1", "(p1^2 + q1^2)/2", lambda z: 0.5 * (z[0] ** 2 + z[2] ** 2),
                    lambda z: np.array([z[0], 0.0, z[2], 0.0])),
                   ("H2", "p2^2/2", lambda z: 0.5 * z[3] ** 2, lambda z: np.array([0.0, 0.0, 0.0, z[3]]))],
        metadata=dict(expected_m=1, point=[1.0, 0.0, 0.0, 1.0]),
    ),
    "pendulum": dict(
        n=1,
        integrals=[("H", "p1^2/2 - cos(q1)", lambda z: 0.5 * z[1] ** 2 - math.cos(z[0]),
                    lambda z: np.array([math.sin(z[0]), z[1]]))],
        periodic=("q1",),
        metadata=dict(expected_m=1, point=[math.pi / 3, 0.0]),
    ),
    "kepler_planar": dict(
        n=2,
        integrals=[("H", "(p1^2 + p2^2)/2 - 1/sqrt(q1^2 + q2^2)", _kepler_H, _kepler_dH),
                   ("L", "q1*p2 - q2*p1", lambda z: z[0] * z[3] - z[1] * z[2],
                    lambda z: np.array([z[3], -z[2], -z[1], z[0]]))],
        region={"r_min": (0.1, math.inf)},
        metadata=dict(expected_m=2, point=_kepler_point(-0.5, 0.5)),
    ),
    "partial_momentum": dict(
        n=2,
        integrals=[("F1", "p1", lambda z: z[2], lambda z: np.array([0.0, 0.0, 1.0, 0.0]))],
        metadata=dict(expected_m=0, point=[0.0, 0.0, 0.0, 0.0]),
    ),
    "partial_oscillator": dict(
        n=2,
        integrals=[("F1", "(p1^2 + q1^2)/2", lambda z: 0.5 * (z[0] ** 2 + z[2] ** 2),
                    lambda z: np.array([z[0], 0.0, z[2], 0.0]))],
        metadata=dict(expected_m=1, point=[1.0, 0.0, 0.0, 0.0]),
    ),
    "driven_osc_extended": dict(
        n=2,
        # q1 is time, p1 its conjugate momentum
        integrals=[("F1", "p1 + p2^2/2 + q2^2*cos(q1)",
                    lambda z: z[2] + 0.5 * z[3] ** 2 + z[1] ** 2 * math.cos(z[0]),
                    lambda z: np.array([-z[1] ** 2 * math.sin(z[0]), 2 * z[1] * math.cos(z[0]), 1.0, z[3]]))],
        metadata=dict(expected_m=0, time_coordinate=0, point=[0.0, 1.0, 0.0, 0.0]),
    ),
}

BUILTINS = tuple(_SPECS)


def builtin(name: str) -> SystemDefinition:
    """One of the benchmark systems, with analytic gradients."""
    try:
        spec = _SPECS[name]
    except KeyError:
        raise UnknownSystemError(f"unknown builtin system {name!r}; known: {', '.join(BUILTINS)}") from None
    fields = tuple(ScalarField(f, g, label=lab, expression=text) for lab, text, f, g in spec["integrals"])
    return SystemDefinition(name, spec["n"], tuple((lab, text) for lab, text, _, _ in spec["integrals"]),
                            fields, tuple(spec.get("periodic", ())), dict(spec.get("region", {})),
                            dict(spec["metadata"]))
