"""Electric field of a needlet-represented potential and integrated Joule heating.

The potential lives on the stretched sphere: Phi(theta, phi) = g(theta')
sum c_jk psi_jk(theta', phi) with theta' = alpha theta.  The tangential field
is E = -(1/R) dPhi/dtheta theta-hat - (1/(R sin theta)) dPhi/dphi phi-hat and
the Joule heating rate is Sigma_P |E|^2, integrated over a polar cap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .baselines import GauMaternModel, GauNeedModel, cov_matrix, _cholesky
from .model import AxingParams, sample_coefficients, variance_profile
from .eof import stretch_colatitude
from .needlets import NeedletFrame, design_matrix
from .sphere import DomainError, SpherePoint, gauss_legendre_grid, to_xyz
from .splines import SplineBasis

R_IONOSPHERE = 6.5e6  # metres
POLE_EPS = 1e-6
PERCENTILES = (50, 90, 95, 99)


@dataclass
class ElectricField:
    theta: np.ndarray  # unstretched colatitude
    phi: np.ndarray
    E_theta: np.ndarray
    E_phi: np.ndarray
    R: float = R_IONOSPHERE

    @property
    def magnitude2(self) -> np.ndarray:
        return self.E_theta ** 2 + self.E_phi ** 2


@dataclass(frozen=True)
class JouleConfig:
    """Conductivity and integration settings.

    ``sigma_P`` is a user-supplied physical input (siemens), scalar or one
    value per grid point; no default value is implied by the model.
    """
    sigma_P: float | np.ndarray = 1.0
    cap_colatitude: float = math.pi / 4
    n_theta: int = 50
    n_phi: int = 100
    R: float = R_IONOSPHERE
    alpha_stretch: float = 4.0

    def validate(self):
        if np.any(np.asarray(self.sigma_P) <= 0):
            raise DomainError("Pedersen conductivity must be positive")
        if not 0.0 < self.cap_colatitude <= math.pi:
            raise DomainError("cap colatitude must lie in (0, pi]")
        if self.n_theta < 1 or self.n_phi < 1:
            raise ValueError("integration grid needs at least one node per axis")
        if not self.R > 0:
            raise DomainError("radius must be positive")
        return self


def cap_grid(config: JouleConfig):
    """Gauss-Legendre (theta) x uniform (phi) nodes on the cap with unit-sphere weights."""
    return gauss_legendre_grid(config.n_theta, config.n_phi, config.cap_colatitude)


def needlet_gradient(frame: NeedletFrame, j: int, k: int, p: SpherePoint):
    """(d psi_jk / d theta', (1/sin theta') d psi_jk / d phi) at stretched point ``p``.

    Uses the projection of the ambient gradient on theta-hat and phi-hat,
    which is finite at the poles.
    """
    lv = frame.level(j)
    if not 0 <= k < lv.size:
        raise IndexError(f"needlet index {k} outside 0..{lv.size - 1} at level {j}")
    gt, gp = frame.level_gradient(j, p.xyz[None, :], np.array([p.theta]), np.array([p.phi]))
    return float(gt[0, k]), float(gp[0, k])


class FieldOperator:
    """Precomputed linear maps c -> (S, dS/dtheta', (1/sin theta') dS/dphi) at fixed points."""

    def __init__(self, frame: NeedletFrame, theta, phi, alpha_stretch: float = 4.0):
        self.theta = np.asarray(theta, dtype=float).ravel()
        self.phi = np.asarray(phi, dtype=float).ravel()
        self.alpha = float(alpha_stretch)
        self.theta_prime = stretch_colatitude(self.theta, self.alpha)
        xyz = to_xyz(self.theta_prime, self.phi)
        self.A = design_matrix(frame, xyz)
        parts = [frame.level_gradient(lv.j, xyz, self.theta_prime, self.phi) for lv in frame.levels]
        self.Gt = np.hstack([p[0] for p in parts])
        self.Gp = np.hstack([p[1] for p in parts])
        st = np.sin(self.theta)
        small = st < POLE_EPS
        # sin(alpha theta) / sin(theta) tends to alpha at the pole
        self.ratio = np.where(small, self.alpha, np.sin(self.theta_prime) / np.where(small, 1.0, st))

    def potential(self, basis: SplineBasis, eta, c) -> np.ndarray:
        """Phi at the points for coefficient vector(s) of shape (p,) or (p, m)."""
        g = variance_profile(basis, eta, self.theta_prime)
        S = self.A @ np.asarray(c, dtype=float)
        return g * S if S.ndim == 1 else g[:, None] * S

    def field(self, basis: SplineBasis, eta, c, R: float = R_IONOSPHERE):
        """E_theta, E_phi for coefficient vector(s) ``c`` of shape (p,) or (p, m)."""
        eta = np.asarray(eta, dtype=float)
        c = np.asarray(c, dtype=float)
        single = c.ndim == 1
        C = c[:, None] if single else c
        g = variance_profile(basis, eta, self.theta_prime)
        dg = g * (basis.derivative(self.theta_prime) @ eta)
        S = self.A @ C
        St = self.Gt @ C
        Sp = self.Gp @ C
        d_theta = self.alpha * (dg[:, None] * S + g[:, None] * St)
        d_phi = self.ratio[:, None] * g[:, None] * Sp
        Et, Ep = -d_theta / R, -d_phi / R
        return (Et[:, 0], Ep[:, 0]) if single else (Et, Ep)


def electric_field(frame: NeedletFrame, basis: SplineBasis, params, c, theta, phi,
                   alpha_stretch: float = 4.0, R: float = R_IONOSPHERE) -> ElectricField:
    """Electric field of the potential g(theta') sum c psi(theta', phi) at unstretched points.

    ``params`` is an AxingParams (its ``eta`` is used) or an eta vector.
    """
    eta = params.eta if hasattr(params, "eta") else params
    op = FieldOperator(frame, theta, phi, alpha_stretch)
    Et, Ep = op.field(basis, eta, c, R)
    return ElectricField(op.theta, op.phi, Et, Ep, R)


def joule_heating(E: ElectricField, config: JouleConfig, weights=None):
    """Pointwise rate Sigma_P |E|^2 and its integral R^2 sum w P_JH over the cap.

    ``weights`` are unit-sphere quadrature weights for the points of ``E``;
    by default ``E`` must sit on ``cap_grid(config)``.
    """
    config.validate()
    if weights is None:
        t, _, weights = cap_grid(config)
        if t.size != E.theta.size or not np.allclose(t, E.theta):
            raise ValueError("field is not on the configured cap grid; pass weights explicitly")
    p_jh = np.asarray(config.sigma_P, dtype=float) * E.magnitude2
    return p_jh, float(E.R ** 2 * np.dot(weights, p_jh))


def _grid_gradient(Phi: np.ndarray, theta_axis: np.ndarray, n_phi: int):
    """Finite-difference (dPhi/dtheta, dPhi/dphi) on a product grid, Phi shaped (n_t*n_p, m)."""
    m = Phi.shape[1]
    F = Phi.reshape(theta_axis.size, n_phi, m)
    dt = np.gradient(F, theta_axis, axis=0, edge_order=2)
    h = 2.0 * math.pi / n_phi
    dp = (np.roll(F, -1, axis=1) - np.roll(F, 1, axis=1)) / (2.0 * h)
    return dt.reshape(-1, m), dp.reshape(-1, m)


@dataclass
class HeatingEnsemble:
    p_ijh: np.ndarray

    def percentiles(self, qs=PERCENTILES) -> dict:
        return {str(q): float(np.percentile(self.p_ijh, q)) for q in qs}

    def summary(self) -> dict:
        x = self.p_ijh
        return {"n_sim": int(x.size), "mean": float(np.mean(x)),
                "sd": float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
                "percentiles": self.percentiles()}

    def histogram(self, bins: int = 30) -> dict:
        counts, edges = np.histogram(self.p_ijh, bins=bins)
        return {"counts": counts.tolist(), "edges": edges.tolist()}


def heating_ensemble(model, n_sim: int, config: JouleConfig, rng: np.random.Generator, *,
                     frame: NeedletFrame | None = None, basis: SplineBasis,
                     batch: int = 100) -> HeatingEnsemble:
    """Integrated Joule heating of ``n_sim`` simulated potentials.

    ``model`` is an AxingParams, a posterior sample set (one retained draw is
    picked per member), a GauNeedModel or a GauMaternModel.  Needlet models
    use analytic gradients; Matern fields are simulated on the cap grid and
    differentiated by finite differences, since their sample paths need not be
    differentiable.
    """
    config.validate()
    if n_sim < 1:
        raise ValueError("n_sim must be at least 1")
    theta, phi, w = cap_grid(config)
    out = np.empty(n_sim)
    sigma_P = np.asarray(config.sigma_P, dtype=float)
    sp_col = sigma_P if sigma_P.ndim == 0 else sigma_P[:, None]

    if isinstance(model, GauMaternModel):
        theta_prime = stretch_colatitude(theta, config.alpha_stretch)
        xyz = to_xyz(theta_prime, phi)
        C = cov_matrix(model, xyz, nugget=False)
        C[np.diag_indices_from(C)] += 1e-10 * np.mean(np.diag(C))
        L = _cholesky(C)
        axis = theta.reshape(config.n_theta, config.n_phi)[:, 0]
        st = np.sin(theta)
        g = variance_profile(basis, model.eta, theta_prime)[:, None]
        for s in range(0, n_sim, batch):
            m = min(batch, n_sim - s)
            Phi = g * (L @ rng.standard_normal((theta.size, m)))
            dt, dp = _grid_gradient(Phi, axis, config.n_phi)
            # R^2 from the area element cancels the 1/R^2 of |E|^2
            out[s:s + m] = w @ (sp_col * (dt ** 2 + (dp / st[:, None]) ** 2))
        return HeatingEnsemble(out)

    if frame is None:
        raise ValueError("needlet models need the frame")
    op = FieldOperator(frame, theta, phi, config.alpha_stretch)
    # members sharing eta are evaluated together as one coefficient matrix
    pending: list = []

    def flush(eta):
        Et, Ep = op.field(basis, eta, np.column_stack([c for _, c in pending]), config.R)
        vals = config.R ** 2 * (w @ (sp_col * (Et ** 2 + Ep ** 2)))
        for (i, _), v in zip(pending, vals):
            out[i] = v
        pending.clear()

    for i in range(n_sim):
        if isinstance(model, GauNeedModel):
            eta, coeffs = model.eta, sample_coefficients(frame, model.sigma2, 0.0, rng, gaussian=True)
        else:
            params = model if isinstance(model, AxingParams) else model.params_at(int(rng.integers(model.n_draws)))
            eta, coeffs = params.eta, sample_coefficients(frame, params.sigma2, params.nu, rng)
        if pending and not np.array_equal(eta, pending_eta):
            flush(pending_eta)
        pending.append((i, coeffs.c))
        pending_eta = np.asarray(eta)
        if len(pending) >= batch:
            flush(pending_eta)
    if pending:
        flush(pending_eta)
    return HeatingEnsemble(out)
