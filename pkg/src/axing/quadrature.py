"""Spherical quadrature node sets (symmetric spherical t-designs).

Node-file format: optional ``#`` header lines, of which ``strength=<t>`` and
``symmetric=<0|1>`` are interpreted, followed by one node per line as
``x y z`` or ``x y z w``.  Missing weights default to 4 pi / n.
"""
from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .sphere import from_xyz, iter_sh_moments

DATA_DIR_ENV = "AXING_DATA_DIR"
FOUR_PI = 4.0 * math.pi


class DesignParseError(ValueError):
    pass


class DesignValidationError(ValueError):
    pass


class ConfigurationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class QuadratureDesign:
    strength: int
    nodes: np.ndarray
    weights: np.ndarray
    symmetric: bool = False
    source: str = ""

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @cached_property
    def angles(self):
        return from_xyz(self.nodes)


@dataclass(frozen=True)
class DesignReport:
    max_abs_error: float
    passed: bool
    degree_errors: tuple = field(default=(), repr=False)


_HEADER = re.compile(r"(strength|symmetric)\s*=\s*(\S+)")


def _parse(lines, source: str) -> QuadratureDesign:
    strength = None
    symmetric = False
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for key, val in _HEADER.findall(line):
                try:
                    if key == "strength":
                        strength = int(val)
                    else:
                        symmetric = bool(int(val))
                except ValueError:
                    raise DesignParseError(f"{source}:{lineno}: bad header value {val!r}") from None
            continue
        parts = line.split()
        if len(parts) not in (3, 4):
            raise DesignParseError(f"{source}:{lineno}: expected 'x y z' or 'x y z w', got {line!r}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise DesignParseError(f"{source}:{lineno}: non-numeric field in {line!r}") from None
    if not rows:
        raise DesignParseError(f"{source}: no nodes found")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DesignParseError(f"{source}: mixed 3- and 4-column node lines")
    arr = np.array(rows)
    nodes = arr[:, :3]
    norms = np.linalg.norm(nodes, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
    if bad.size:
        raise DesignValidationError(
            f"{source}: node {bad[0] + 1} has norm {norms[bad[0]]:.6g}, expected 1")
    nodes = nodes / norms[:, None]
    n = nodes.shape[0]
    if arr.shape[1] == 4:
        weights = arr[:, 3].copy()
        if np.any(weights <= 0):
            raise DesignValidationError(f"{source}: weights must be positive")
    else:
        weights = np.full(n, FOUR_PI / n)
    if strength is None:
        strength = 0
    return QuadratureDesign(strength, nodes, weights, symmetric, source)


def load_design(path) -> QuadratureDesign:
    path = Path(path)
    with open(path) as fh:
        return _parse(fh, str(path))


def parse_design(text: str, source: str = "<string>") -> QuadratureDesign:
    return _parse(text.splitlines(), source)


def validate_design(d: QuadratureDesign, strength: int | None = None, tol: float = 1e-8) -> DesignReport:
    """Check sum_k w_k Y_lm(x_k) = 0 for 1 <= l <= strength and sum_k w_k = 4 pi.

    Works degree by degree so large designs never materialize the full
    harmonic matrix.
    """
    t = d.strength if strength is None else strength
    errors = [abs(float(d.weights.sum()) - FOUR_PI)]
    if t >= 1:
        theta, phi = d.angles
        for l, M in iter_sh_moments(t, theta, phi, d.weights):
            if l == 0:
                continue
            errors.append(float(np.max(np.abs(M))))
    if d.symmetric:
        # every node must have its antipode in the set
        key = np.round(d.nodes, 9)
        present = {tuple(r) for r in key}
        missing = sum(tuple(-r + 0.0) not in present for r in key)
        if missing:
            errors.append(float("inf"))
    err = max(errors)
    return DesignReport(err, err < tol, tuple(errors))


def required_strength(j: int, B: float) -> int:
    """Exactness degree 2 floor(B^(j+1)) needed by level-j needlets."""
    return 2 * int(math.floor(B ** (j + 1) + 1e-9))


def _peek_strength(path: Path) -> int | None:
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            for key, val in _HEADER.findall(line):
                if key == "strength":
                    return int(val)
    return None


class DesignRegistry:
    """Set of available designs keyed by strength, loaded lazily."""

    def __init__(self, entries=()):
        self._paths: dict[int, Path] = {}
        self._loaded: dict[int, QuadratureDesign] = {}
        for item in entries:
            self.add(item)

    def add(self, item):
        if isinstance(item, QuadratureDesign):
            self._loaded[item.strength] = item
        else:
            path = Path(item)
            t = _peek_strength(path)
            if t is None:
                t = load_design(path).strength
            self._paths[t] = path

    @classmethod
    def from_directory(cls, directory) -> "DesignRegistry":
        directory = Path(directory)
        return cls(sorted(directory.glob("*.txt")))

    @classmethod
    def default(cls) -> "DesignRegistry":
        override = os.environ.get(DATA_DIR_ENV)
        if override:
            return cls.from_directory(Path(override) / "designs")
        return cls.from_directory(Path(str(resources.files("axing") / "data" / "designs")))

    @property
    def strengths(self) -> list[int]:
        return sorted(set(self._paths) | set(self._loaded))

    def get(self, strength: int) -> QuadratureDesign:
        if strength not in self._loaded:
            self._loaded[strength] = load_design(self._paths[strength])
        return self._loaded[strength]

    def smallest_at_least(self, strength: int) -> QuadratureDesign:
        for t in self.strengths:
            if t >= strength:
                return self.get(t)
        raise ConfigurationError(
            f"no quadrature design of strength >= {strength} is registered "
            f"(available: {self.strengths or 'none'})")

    def __len__(self):
        return len(self.strengths)


_DEFAULT_REGISTRY: dict = {}


def default_registry() -> DesignRegistry:
    """Shipped designs, or those under $AXING_DATA_DIR/designs; cached per location."""
    key = os.environ.get(DATA_DIR_ENV) or ""
    if key not in _DEFAULT_REGISTRY:
        _DEFAULT_REGISTRY[key] = DesignRegistry.default()
    return _DEFAULT_REGISTRY[key]


def design_for_level(j: int, B: float = 2.0, registry: DesignRegistry | None = None) -> QuadratureDesign:
    registry = default_registry() if registry is None else registry
    return registry.smallest_at_least(required_strength(j, B))


def octahedron() -> QuadratureDesign:
    nodes = np.vstack([np.eye(3), -np.eye(3)])
    return QuadratureDesign(3, nodes, np.full(6, FOUR_PI / 6), True, "octahedron")
