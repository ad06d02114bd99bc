"""AXING-need model: parameters, variance profile, covariance and simulation.

The field is X(s) = g(theta) sum_jk c_jk psi_jk(s) with independent Student-t
coefficients c_jk = sqrt(V_jk) G_jk, V_jk ~ IG(nu/2, nu sigma_j^2 / 2), and
log g(theta) = b(theta)^T eta.  Observations add white noise of variance tau2.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .needlets import NeedletFrame, design_matrix
from .sphere import DomainError, SpherePoint, as_angles, as_xyz, legendre_series
from .splines import SplineBasis


def inv_gamma(rng: np.random.Generator, shape, scale):
    """Draws from IG(shape, scale), i.e. scale / Gamma(shape, 1)."""
    return np.asarray(scale) / rng.gamma(shape, 1.0, size=np.broadcast(shape, scale).shape)


@dataclass(frozen=True)
class AxingParams:
    sigma2: np.ndarray  # per level J0..J
    tau2: float
    eta: np.ndarray  # full vector (eta_0, eta_{-0}), eta_0 = 0 for AXING-need
    nu: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "sigma2", np.atleast_1d(np.asarray(self.sigma2, dtype=float)))
        object.__setattr__(self, "eta", np.atleast_1d(np.asarray(self.eta, dtype=float)))

    def validate(self, require_eta0_zero: bool = True):
        if np.any(self.sigma2 <= 0):
            raise DomainError("every sigma2_j must be positive")
        if not self.tau2 > 0:
            raise DomainError("tau2 must be positive")
        if not self.nu > 2:
            raise DomainError("nu must exceed 2")
        if require_eta0_zero and self.eta.size and self.eta[0] != 0.0:
            raise DomainError("eta_0 is fixed at 0 for identifiability")
        return self

    @property
    def eta_free(self) -> np.ndarray:
        return self.eta[1:]

    def with_(self, **kw) -> "AxingParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {"sigma2": self.sigma2.tolist(), "tau2": float(self.tau2),
                "eta": self.eta.tolist(), "nu": float(self.nu)}

    @classmethod
    def from_dict(cls, d: dict) -> "AxingParams":
        return cls(d["sigma2"], float(d["tau2"]), d["eta"], float(d.get("nu", 4.0)))


@dataclass
class CoefficientState:
    c: np.ndarray
    V: np.ndarray = field(default=None)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        if self.V is None:
            self.V = np.ones_like(self.c)
        self.V = np.asarray(self.V, dtype=float)
        if self.V.shape != self.c.shape:
            raise ValueError("c and V must have the same length")
        if np.any(self.V <= 0):
            raise DomainError("mixing variances V must be strictly positive")


def variance_profile(basis: SplineBasis, eta, theta_prime) -> np.ndarray:
    """g(theta') = exp(b(theta')^T eta)."""
    eta = np.asarray(eta, dtype=float)
    if eta.size != basis.size:
        raise ValueError(f"eta has length {eta.size}, basis expects {basis.size}")
    scalar = np.ndim(theta_prime) == 0
    out = np.exp(basis.evaluate(theta_prime) @ eta)
    return float(out[0]) if scalar else out


def per_coefficient(frame: NeedletFrame, per_level) -> np.ndarray:
    """Repeat a per-level vector to the design-matrix column layout."""
    per_level = np.asarray(per_level, dtype=float)
    if per_level.size != len(frame.levels):
        raise ValueError(f"expected {len(frame.levels)} per-level values, got {per_level.size}")
    return np.repeat(per_level, frame.sizes)


def sample_coefficients(frame: NeedletFrame, sigma2, nu: float, rng: np.random.Generator,
                        gaussian: bool = False) -> CoefficientState:
    """Independent c_jk = sqrt(V_jk) G_jk.

    With ``gaussian=True`` the coefficients are normal with variance sigma2_j
    (the Gaussian-needlet baseline) and V is set to sigma2_j.
    """
    s2 = per_coefficient(frame, sigma2)
    G = rng.standard_normal(s2.size)
    if gaussian:
        V = s2.copy()
    else:
        if not nu > 2:
            raise DomainError("nu must exceed 2")
        V = inv_gamma(rng, nu / 2.0, nu * s2 / 2.0)
    zero = s2 == 0
    V = np.where(zero, 1.0, V)  # keep V positive; coefficient is forced to 0
    c = np.where(zero, 0.0, np.sqrt(V) * G)
    return CoefficientState(c, V)


def level_weights(sigma2, nu: float | None) -> np.ndarray:
    """nu sigma2_j / (nu - 2), or sigma2_j itself for the Gaussian case (nu=None)."""
    s2 = np.asarray(sigma2, dtype=float)
    if nu is None or np.isinf(nu):
        return s2
    if not nu > 2:
        raise DomainError("nu must exceed 2")
    return nu * s2 / (nu - 2.0)


def covariance_series(frame: NeedletFrame, sigma2, nu: float | None) -> np.ndarray:
    """Legendre coefficients a_l of C(u) = sum_l a_l P_l(u)."""
    w = level_weights(sigma2, nu)
    if w.size != len(frame.levels):
        raise ValueError(f"expected {len(frame.levels)} per-level values, got {w.size}")
    a = np.zeros(frame.top_degree + 1)
    for wj, lv in zip(w, frame.levels):
        s = lv.series(2)
        a[:s.size] += wj * s
    return a


def covariance(frame: NeedletFrame, sigma2, nu, p, q):
    """Base-process covariance C(p, q) (before the g profile).

    ``p`` and ``q`` may be SpherePoints or broadcastable arrays of points;
    ``nu=None`` gives the Gaussian-needlet weights sigma2_j.
    """
    a = covariance_series(frame, sigma2, nu)
    u = np.clip(np.sum(as_xyz(p) * as_xyz(q), axis=-1), -1.0, 1.0)
    out = legendre_series(a, u)
    if isinstance(p, SpherePoint) and isinstance(q, SpherePoint):
        return float(np.ravel(out)[0])
    return out


def covariance_matrix(frame: NeedletFrame, sigma2, nu, points, other=None) -> np.ndarray:
    a = covariance_series(frame, sigma2, nu)
    X = as_xyz(points)
    Y = X if other is None else as_xyz(other)
    return legendre_series(a, np.clip(X @ Y.T, -1.0, 1.0))


def decay_profile(frame: NeedletFrame, sigma2, nu, angles) -> np.ndarray:
    """|C| as a function of great-circle separation."""
    angles = np.asarray(angles, dtype=float)
    if np.any(angles < 0) or np.any(angles > np.pi + 1e-12):
        raise DomainError("angles must lie in [0, pi]")
    a = covariance_series(frame, sigma2, nu)
    return np.abs(legendre_series(a, np.cos(angles)))


def sigma_decay(sigma: float, alpha: float, B: float, j: int) -> float:
    """sigma_j = B^(-alpha j / 2) sigma."""
    if not alpha > 2:
        raise DomainError("decay exponent alpha must exceed 2 for summable variances")
    return float(B ** (-alpha * j / 2.0) * sigma)


def simulate_field(frame: NeedletFrame, basis: SplineBasis, params, points,
                   rng: np.random.Generator, *, design=None, theta_prime=None,
                   gaussian: bool = False, return_coefficients: bool = False):
    """Unconditional simulation X = G A c at ``points``.

    ``params`` is an AxingParams or a posterior sample set exposing
    ``n_draws`` and ``params_at(i)``, in which case one retained draw is
    chosen uniformly at random.  ``theta_prime`` overrides the colatitudes
    fed to the variance profile (stretched coordinates).
    """
    if not isinstance(params, AxingParams):
        params = params.params_at(int(rng.integers(params.n_draws)))
    xyz = as_xyz(points)
    A = design_matrix(frame, xyz) if design is None else design
    if theta_prime is None:
        theta_prime = as_angles(xyz)[0]
    g = variance_profile(basis, params.eta, theta_prime)
    coeffs = sample_coefficients(frame, params.sigma2, params.nu, rng, gaussian=gaussian)
    X = g * (A @ coeffs.c)
    return (X, coeffs) if return_coefficients else X


def observe(X, tau2: float, rng: np.random.Generator) -> np.ndarray:
    """Z = X + e with e_i iid N(0, tau2)."""
    if tau2 < 0:
        raise DomainError("tau2 must be nonnegative")
    X = np.asarray(X, dtype=float)
    if tau2 == 0:
        return X.copy()
    return X + np.sqrt(tau2) * rng.standard_normal(X.shape)
