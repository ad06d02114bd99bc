"""Geometry on the unit sphere: points, Legendre polynomials, real spherical
harmonics, distances and point-set generators.

Angles are radians throughout: ``theta`` is colatitude in [0, pi] and ``phi``
is longitude in [0, 2 pi).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
MAX_SH_DEGREE = 256


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


@dataclass(frozen=True)
class SpherePoint:
    theta: float
    phi: float
    xyz: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (-1e-12 <= self.theta <= math.pi + 1e-12):
            raise DomainError(f"colatitude {self.theta} outside [0, pi]")
        object.__setattr__(self, "phi", float(self.phi) % (2.0 * math.pi))
        st = math.sin(self.theta)
        xyz = np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])
        xyz.flags.writeable = False
        object.__setattr__(self, "xyz", xyz)

    @classmethod
    def from_xyz(cls, xyz) -> "SpherePoint":
        x, y, z = np.asarray(xyz, dtype=float) / np.linalg.norm(xyz)
        return cls(math.acos(min(1.0, max(-1.0, z))), math.atan2(y, x))

    def dot(self, other: "SpherePoint") -> float:
        return float(self.xyz @ other.xyz)


def to_xyz(theta, phi) -> np.ndarray:
    """Unit vectors for arrays of (colatitude, longitude); shape (..., 3)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def from_xyz(xyz):
    """Inverse of :func:`to_xyz`, returns ``(theta, phi)`` with phi in [0, 2 pi)."""
    xyz = np.asarray(xyz, dtype=float)
    xyz = xyz / np.linalg.norm(xyz, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(xyz[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(xyz[..., 1], xyz[..., 0]), 2.0 * np.pi)
    return theta, phi


def as_xyz(points) -> np.ndarray:
    """Accept a SpherePoint, a sequence of them, or an (n, 3) array."""
    if isinstance(points, SpherePoint):
        return points.xyz[None, :]
    if isinstance(points, np.ndarray) and points.dtype != object:
        arr = np.atleast_2d(np.asarray(points, dtype=float))
        if arr.shape[-1] != 3:
            raise ValueError("expected an array of unit 3-vectors")
        return arr
    pts = list(points)
    if not pts:
        return np.empty((0, 3))
    return np.stack([p.xyz for p in pts])


def as_angles(points):
    """``(theta, phi)`` arrays for the same inputs :func:`as_xyz` accepts."""
    if isinstance(points, SpherePoint):
        return np.array([points.theta]), np.array([points.phi])
    if isinstance(points, np.ndarray) and points.dtype != object:
        return from_xyz(as_xyz(points))
    pts = list(points)
    return (np.array([p.theta for p in pts], dtype=float),
            np.array([p.phi for p in pts], dtype=float))


def points_from_angles(theta, phi) -> list[SpherePoint]:
    return [SpherePoint(float(t), float(p)) for t, p in zip(np.ravel(theta), np.ravel(phi))]


def _check_unit_interval(u):
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u) > 1.0 + 1e-12):
        raise DomainError("Legendre argument must satisfy |u| <= 1")
    return np.clip(u, -1.0, 1.0)


def legendre_eval(l_max: int, u):
    """Legendre polynomials P_0..P_{l_max} at ``u`` by the three-term recursion.

    Returns an array of shape ``(l_max + 1,) + np.shape(u)``.
    """
    if l_max < 0:
        raise ValueError("l_max must be nonnegative")
    u = _check_unit_interval(u)
    out = np.empty((l_max + 1,) + u.shape)
    out[0] = 1.0
    if l_max >= 1:
        out[1] = u
    for l in range(2, l_max + 1):
        out[l] = ((2 * l - 1) * u * out[l - 1] - (l - 1) * out[l - 2]) / l
    return out


def legendre_deriv(l_max: int, u):
    """Derivatives dP_l/du for l = 0..l_max.

    Interior points use (1 - u^2) P'_l = l (P_{l-1} - u P_l); at u = +-1 the
    analytic limit (+-1)^(l+1) l (l+1) / 2 is used.  Points within 1e-6 of the
    endpoints switch to the derivative recursion P'_l = P'_{l-2} + (2l-1) P_{l-1},
    which has no division.
    """
    u = _check_unit_interval(u)
    P = legendre_eval(l_max, u)
    out = np.zeros_like(P)
    if l_max == 0:
        return out
    one_minus = 1.0 - u * u
    interior = one_minus > 2e-6
    ls = np.arange(l_max + 1).reshape((-1,) + (1,) * u.ndim)
    with np.errstate(divide="ignore", invalid="ignore"):
        closed = ls[1:] * (P[:-1] - u * P[1:]) / np.where(interior, one_minus, 1.0)
    out[1:] = np.where(interior, closed, 0.0)
    if not np.all(interior):
        rec = np.zeros_like(P)
        rec[1] = 1.0
        for l in range(2, l_max + 1):
            rec[l] = rec[l - 2] + (2 * l - 1) * P[l - 1]
        out = np.where(interior, out, rec)
    return out


def legendre_series(coeffs, u):
    """Evaluate sum_l coeffs[l] P_l(u) with Clenshaw's recurrence."""
    coeffs = np.asarray(coeffs, dtype=float)
    u = _check_unit_interval(u)
    b1 = np.zeros_like(u)
    b2 = np.zeros_like(u)
    for l in range(len(coeffs) - 1, 0, -1):
        alpha = (2 * l + 1) / (l + 1) * u
        beta = -(l + 1) / (l + 2)
        b1, b2 = coeffs[l] + alpha * b1 + beta * b2, b1
    # P_0 = 1, P_1 = u, and the l = 0 step has beta_1 = -1/2
    return coeffs[0] + u * b1 - 0.5 * b2


def legendre_series_deriv(coeffs, u):
    """Evaluate sum_l coeffs[l] dP_l/du(u)."""
    coeffs = np.asarray(coeffs, dtype=float)
    dP = legendre_deriv(len(coeffs) - 1, u)
    return np.tensordot(coeffs, dP, axes=(0, 0))


def sh_index(l: int, m: int) -> int:
    """Column of Y_lm in the (l, m = -l..l) ordering used by real_sh_*."""
    return l * l + l + m


def _normalized_alf(L: int, theta: np.ndarray):
    """Orthonormal associated Legendre functions q[l][m] (m >= 0) without the
    Condon-Shortley phase, so that Y_l0 = q_l0 and sum_m Y_lm^2 = (2l+1)/4pi.
    Yields ``(l, q_l)`` where ``q_l`` has shape (l + 1, n)."""
    x = np.cos(theta)
    s = np.sin(theta)
    n = x.shape[0]
    prev2 = None
    prev1 = None
    q_mm = np.full(n, 1.0 / math.sqrt(4.0 * math.pi))
    for l in range(L + 1):
        cur = np.empty((l + 1, n))
        if l > 0:
            q_mm = math.sqrt((2 * l + 1) / (2.0 * l)) * s * q_mm
        cur[l] = q_mm
        if l >= 1:
            cur[l - 1] = math.sqrt(2 * l + 1) * x * prev1[l - 1]
        if l >= 2:
            m = np.arange(l - 1, dtype=float)[:, None]
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            cur[:l - 1] = a * (x * prev1[:l - 1] - b * prev2[:l - 1])
        yield l, cur
        prev2, prev1 = prev1, cur


def iter_real_sh(L: int, theta, phi):
    """Yield ``(l, Y_l)`` with ``Y_l`` of shape (n, 2l + 1) ordered m = -l..l."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    ms = np.arange(1, L + 1)
    cos_m = np.cos(np.outer(phi, ms))
    sin_m = np.sin(np.outer(phi, ms))
    root2 = math.sqrt(2.0)
    for l, q in _normalized_alf(L, theta):
        Y = np.empty((theta.shape[0], 2 * l + 1))
        Y[:, l] = q[0]
        if l:
            Y[:, l + 1:] = root2 * (q[1:] * cos_m[:, :l].T).T
            Y[:, :l] = root2 * (q[1:] * sin_m[:, :l].T).T[:, ::-1]
        yield l, Y


def iter_sh_moments(L: int, theta, phi, w):
    """Yield ``(l, M_l)`` with M_l[m + l] = sum_k w_k Y_lm(theta_k, phi_k).

    Same values as contracting ``iter_real_sh`` with ``w``, without forming
    the (n, 2l + 1) harmonic blocks.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    w = np.asarray(w, dtype=float)
    ms = np.arange(1, L + 1)[:, None]
    wc = math.sqrt(2.0) * w * np.cos(ms * phi)  # (L, n)
    ws = math.sqrt(2.0) * w * np.sin(ms * phi)
    for l, q in _normalized_alf(L, theta):
        M = np.empty(2 * l + 1)
        M[l] = q[0] @ w
        if l:
            M[l + 1:] = np.einsum("mk,mk->m", q[1:], wc[:l])
            M[:l] = np.einsum("mk,mk->m", q[1:], ws[:l])[::-1]
        yield l, M


def real_sh_matrix(L: int, theta, phi) -> np.ndarray:
    """Real orthonormal spherical harmonics up to degree L, shape (n, (L+1)^2).

    Y_{l,m} = sqrt2 q_lm cos(m phi) for m > 0, q_l0 for m = 0 and
    sqrt2 q_l|m| sin(|m| phi) for m < 0.
    """
    if L < 0:
        raise ValueError("L must be nonnegative")
    if L > MAX_SH_DEGREE:
        raise DomainError(f"degree {L} exceeds supported maximum {MAX_SH_DEGREE}")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    out = np.empty((theta.shape[0], (L + 1) ** 2))
    for l, Y in iter_real_sh(L, theta, phi):
        out[:, l * l:(l + 1) ** 2] = Y
    return out


def real_sh_eval(L: int, p: SpherePoint) -> np.ndarray:
    """All (L+1)^2 real spherical harmonics at a single point."""
    return real_sh_matrix(L, [p.theta], [p.phi])[0]


def great_circle_distance(p, q):
    """Angle between points (SpherePoints or unit-vector arrays).

    Computed as atan2(|p x q|, <p, q>), which stays accurate near 0 and pi
    where arccos of a rounded dot product does not.
    """
    scalar = isinstance(p, SpherePoint) and isinstance(q, SpherePoint)
    a = p.xyz if isinstance(p, SpherePoint) else np.asarray(p, dtype=float)
    b = q.xyz if isinstance(q, SpherePoint) else np.asarray(q, dtype=float)
    ang = np.arctan2(np.linalg.norm(np.cross(a, b), axis=-1), np.sum(a * b, axis=-1))
    return float(ang) if scalar else ang


def chordal_distance(p, q):
    if isinstance(p, SpherePoint) and isinstance(q, SpherePoint):
        return float(np.linalg.norm(p.xyz - q.xyz))
    a, b = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    return np.linalg.norm(a - b, axis=-1)


def chordal_distance_matrix(X, Y=None) -> np.ndarray:
    """Pairwise chordal distances between rows of unit-vector arrays."""
    Y = X if Y is None else Y
    return np.sqrt(np.clip(2.0 - 2.0 * (X @ Y.T), 0.0, 4.0))


def tangent_frame(theta, phi):
    """Unit vectors theta-hat (southward) and phi-hat (eastward), each (n, 3)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ct, st, cp, sp = np.cos(theta), np.sin(theta), np.cos(phi), np.sin(phi)
    e_theta = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_phi = np.stack([-sp, cp, np.zeros_like(phi)], axis=-1)
    return e_theta, e_phi


def fibonacci_xyz(n: int) -> np.ndarray:
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    ang = np.mod(i * GOLDEN_ANGLE, 2.0 * np.pi)
    return np.column_stack([r * np.cos(ang), r * np.sin(ang), z])


def generate_grid(kind: str = "equal_area", n: int = 768, jitter: float = 0.1,
                  seed: int = 0) -> list[SpherePoint]:
    """Quasi-uniform point sets on the sphere.

    ``equal_area`` is a Fibonacci spiral; ``perturbed_equal_area`` moves each
    spiral node by a uniform draw from a tangent disc of radius
    ``jitter * sqrt(4 pi / n)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 <= jitter <= 0.5:
        raise ValueError("jitter must lie in [0, 0.5]")
    xyz = fibonacci_xyz(n)
    if kind == "perturbed_equal_area":
        rng = np.random.default_rng(seed)
        spacing = math.sqrt(4.0 * math.pi / n)
        radius = jitter * spacing * np.sqrt(rng.random(n))
        angle = rng.random(n) * 2.0 * np.pi
        theta, phi = from_xyz(xyz)
        e_t, e_p = tangent_frame(theta, phi)
        step = (radius * np.cos(angle))[:, None] * e_t + (radius * np.sin(angle))[:, None] * e_p
        xyz = xyz + step
        xyz /= np.linalg.norm(xyz, axis=1, keepdims=True)
    elif kind != "equal_area":
        raise ValueError(f"unknown grid kind {kind!r}")
    theta, phi = from_xyz(xyz)
    return points_from_angles(theta, phi)


def gauss_legendre_grid(n_theta: int, n_phi: int, theta_max: float = math.pi):
    """Product rule on the cap theta <= theta_max: Gauss-Legendre in theta,
    uniform in phi.  Returns ``(theta, phi, weights)`` flattened, with weights
    for the unit-sphere area element sin(theta) dtheta dphi.

    For the full sphere the rule integrates Y_lm exactly for l <= 2 n_theta - 1
    and |m| < n_phi.
    """
    x, w = np.polynomial.legendre.leggauss(n_theta)
    if theta_max >= math.pi:
        t = np.arccos(-x)  # nodes in cos(theta)
        wt = w
    else:
        t = 0.5 * theta_max * (x + 1.0)
        wt = 0.5 * theta_max * w * np.sin(t)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(t, phi, indexing="ij")
    W = np.outer(wt, np.full(n_phi, 2.0 * np.pi / n_phi))
    return T.ravel(), P.ravel(), W.ravel()
