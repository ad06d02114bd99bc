"""Littlewood-Paley window and spherical needlets.

The window is the standard C-infinity construction: a normalized integral of
the bump exp(-1/(1 - t^2)) gives a smooth step ``psi``; ``phi`` is flat on
[0, 1/B] and decays to zero at 1; and b^2(xi) = phi(xi / B) - phi(xi).  The
squared dilates telescope, so sum_j b^2(y / B^j) = 1 for y >= 1.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .quadrature import DesignRegistry, QuadratureDesign, design_for_level
from .sphere import (
    DomainError,
    SpherePoint,
    as_xyz,
    gauss_legendre_grid,
    legendre_deriv,
    legendre_series,
    tangent_frame,
    to_xyz,
)

FOUR_PI = 4.0 * math.pi


def _bump(t: float) -> float:
    if t <= -1.0 or t >= 1.0:
        return 0.0
    return math.exp(-1.0 / (1.0 - t * t))


@lru_cache(maxsize=1)
def _bump_mass() -> float:
    return integrate.quad(_bump, -1.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


@lru_cache(maxsize=65536)
def _smooth_step(u: float) -> float:
    """Normalized integral of the bump from -1 to u, rising from 0 to 1."""
    if u <= -1.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    # integrate over the shorter side for accuracy near the ends
    if u <= 0.0:
        val = integrate.quad(_bump, -1.0, u, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        return val / _bump_mass()
    val = integrate.quad(_bump, u, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    return 1.0 - val / _bump_mass()


class Window:
    """The window function b for a bandwidth parameter ``B > 1``."""

    def __init__(self, B: float = 2.0):
        if not B > 1.0:
            raise DomainError("window bandwidth B must exceed 1")
        self.B = float(B)

    def __repr__(self):
        return f"Window(B={self.B})"

    def phi(self, t):
        """Flat-top cutoff: 1 on [0, 1/B], 0 on [1, inf)."""
        B = self.B

        def scalar(v):
            if v < 0:
                raise DomainError("window argument must be nonnegative")
            if v <= 1.0 / B:
                return 1.0
            if v >= 1.0:
                return 0.0
            return _smooth_step(1.0 - 2.0 * B * (v - 1.0 / B) / (B - 1.0))

        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return scalar(float(t))
        return np.array([scalar(float(v)) for v in t.ravel()]).reshape(t.shape)

    def b2(self, xi):
        out = np.maximum(self.phi(np.asarray(xi, dtype=float) / self.B) - self.phi(xi), 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def b(self, xi):
        out = np.sqrt(self.b2(xi))
        return float(out) if np.ndim(out) == 0 else out


def make_window(B: float = 2.0) -> Window:
    return Window(B)


def degree_range(j: int, B: float) -> tuple[int, int]:
    """Frequencies ceil(B^(j-1)) .. floor(B^(j+1)) carried by level j."""
    lo = int(math.ceil(B ** (j - 1) - 1e-9))
    hi = int(math.floor(B ** (j + 1) + 1e-9))
    return lo, hi


@dataclass(frozen=True, eq=False)
class Level:
    j: int
    l_min: int
    l_max: int
    design: QuadratureDesign
    window_values: np.ndarray  # b(l / B^j) for l = l_min..l_max

    @property
    def size(self) -> int:
        return self.design.size

    @property
    def nodes(self) -> np.ndarray:
        return self.design.nodes

    @property
    def sqrt_weights(self) -> np.ndarray:
        return np.sqrt(self.design.weights)

    def series(self, power: int = 1) -> np.ndarray:
        """Legendre coefficients b(l/B^j)^power (2l+1)/(4 pi), zero below l_min."""
        c = np.zeros(self.l_max + 1)
        ls = np.arange(self.l_min, self.l_max + 1)
        c[self.l_min:] = self.window_values ** power * (2 * ls + 1) / FOUR_PI
        return c


class NeedletFrame:
    """Needlets psi_jk for levels J0..J with columns ordered by (j, k)."""

    def __init__(self, B: float = 2.0, J0: int = 2, J: int = 3,
                 registry: DesignRegistry | None = None, designs: dict | None = None):
        if not 0 <= J0 <= J:
            raise ValueError("levels must satisfy 0 <= J0 <= J")
        self.window = Window(B)
        self.B = self.window.B
        self.J0 = J0
        self.J = J
        levels = []
        for j in range(J0, J + 1):
            lo, hi = degree_range(j, self.B)
            if designs is not None and j in designs:
                design = designs[j]
            else:
                design = design_for_level(j, self.B, registry)
            vals = self.window.b(np.arange(lo, hi + 1) / self.B ** j)
            levels.append(Level(j, lo, hi, design, np.atleast_1d(vals)))
        self.levels = levels
        sizes = [lv.size for lv in levels]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    def __repr__(self):
        return f"NeedletFrame(B={self.B}, J0={self.J0}, J={self.J}, p={self.sizes})"

    @property
    def sizes(self) -> list[int]:
        return [lv.size for lv in self.levels]

    @property
    def n_coeffs(self) -> int:
        return int(self.offsets[-1])

    @property
    def top_degree(self) -> int:
        return self.levels[-1].l_max

    def level(self, j: int) -> Level:
        if not self.J0 <= j <= self.J:
            raise IndexError(f"level {j} outside {self.J0}..{self.J}")
        return self.levels[j - self.J0]

    def block(self, j: int) -> slice:
        i = j - self.J0
        self.level(j)
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def level_index(self) -> np.ndarray:
        """Level j of every coefficient, in column order."""
        return np.concatenate([np.full(lv.size, lv.j) for lv in self.levels])

    def level_matrix(self, j: int, xyz: np.ndarray) -> np.ndarray:
        lv = self.level(j)
        u = np.clip(xyz @ lv.nodes.T, -1.0, 1.0)
        return legendre_series(lv.series(), u) * lv.sqrt_weights

    def level_gradient(self, j: int, xyz: np.ndarray, theta, phi):
        """Tangential derivatives (d/dtheta, (1/sin theta) d/dphi) of every
        level-j needlet at the given points, each of shape (n, p_j).

        Uses grad psi = sqrt(lambda) S'(u) (zeta - u s), whose components along
        theta-hat and phi-hat are the analytic partial derivatives; the form is
        finite at the poles."""
        lv = self.level(j)
        u = np.clip(xyz @ lv.nodes.T, -1.0, 1.0)
        dP = legendre_deriv(lv.l_max, u)
        dS = np.tensordot(lv.series(), dP, axes=(0, 0)) * lv.sqrt_weights
        e_t, e_p = tangent_frame(theta, phi)
        return dS * (e_t @ lv.nodes.T), dS * (e_p @ lv.nodes.T)


def needlet_eval(frame: NeedletFrame, j: int, k: int, p: SpherePoint) -> float:
    """Value of psi_jk at one point; ``k`` is 0-based."""
    lv = frame.level(j)
    if not 0 <= k < lv.size:
        raise IndexError(f"needlet index {k} outside 0..{lv.size - 1} at level {j}")
    u = float(np.clip(lv.nodes[k] @ p.xyz, -1.0, 1.0))
    return float(lv.sqrt_weights[k] * legendre_series(lv.series(), u))


_CHUNK = 512


def design_matrix(frame: NeedletFrame, points, workers: int = 1) -> np.ndarray:
    """Matrix with rows psi_jk(s_i), columns in (j, k) lexicographic order.

    Rows are built in fixed chunks, so ``workers > 1`` gives bit-identical output.
    """
    xyz = as_xyz(points)
    n = xyz.shape[0]
    out = np.empty((n, frame.n_coeffs))

    def fill(start):
        stop = min(start + _CHUNK, n)
        for lv in frame.levels:
            out[start:stop, frame.block(lv.j)] = frame.level_matrix(lv.j, xyz[start:stop])

    starts = range(0, n, _CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, starts))
    else:
        for s in starts:
            fill(s)
    return out


def frame_kernel(frame: NeedletFrame, j: int, p, q):
    """Closed form of sum_k psi_jk(p) psi_jk(q) = sum_l b^2 (2l+1)/(4 pi) P_l(<p, q>)."""
    lv = frame.level(j)
    if isinstance(p, SpherePoint) and isinstance(q, SpherePoint):
        return float(legendre_series(lv.series(2), np.clip(p.dot(q), -1.0, 1.0)))
    u = np.clip(np.sum(as_xyz(p) * as_xyz(q), axis=-1), -1.0, 1.0)
    return legendre_series(lv.series(2), u)


def integration_grid(degree: int):
    """Product rule integrating spherical polynomials of degree <= 2*degree exactly."""
    n_theta = degree + 1
    n_phi = 2 * degree + 2
    return gauss_legendre_grid(n_theta, n_phi)


def needlet_coefficients(frame: NeedletFrame, f, n_theta: int | None = None,
                         n_phi: int | None = None) -> np.ndarray:
    """beta_jk = integral of f psi_jk, by Gauss-Legendre x uniform quadrature.

    ``f`` is a callable ``f(theta, phi)`` on arrays.  The default grid
    integrates products of degree up to twice the frame's top frequency
    exactly; coarser grids are rejected.
    """
    top = frame.top_degree
    n_theta = top + 1 if n_theta is None else n_theta
    n_phi = 2 * top + 2 if n_phi is None else n_phi
    if n_theta < top + 1 or n_phi < 2 * top + 1:
        raise ValueError(
            f"integration grid {n_theta}x{n_phi} under-resolves top frequency {top}; "
            f"need at least {top + 1}x{2 * top + 1}")
    theta, phi, w = gauss_legendre_grid(n_theta, n_phi)
    values = np.asarray(f(theta, phi), dtype=float)
    A = design_matrix(frame, to_xyz(theta, phi))
    return (values * w) @ A
