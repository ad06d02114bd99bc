"""Extraction of the small-scale component from gridded space-time data.

Rows of the data matrix are time points and columns are locations.  The
pipeline centres the columns, removes the leading EOF modes, standardizes
by a per-location moment estimate of g, regresses out low-degree spherical
harmonics on the stretched colatitudes and multiplies back by g.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .sphere import DomainError, real_sh_matrix

log = logging.getLogger(__name__)

G_FLOOR = 1e-12


def center_columns(M):
    """Subtract column means; returns ``(centered, means)``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < 2:
        raise ValueError("need a T x N matrix with T >= 2")
    means = M.mean(axis=0)
    return M - means, means


@dataclass
class EofResult:
    d: np.ndarray  # singular values, decreasing
    U: np.ndarray  # (T, k) temporal factors
    V: np.ndarray  # (N, k) spatial EOFs

    def variance_explained(self, K=None):
        """Cumulative share sum_{k<=K} d_k^2 / sum d_k^2 (all K when None)."""
        s = np.cumsum(self.d ** 2)
        total = s[-1] if s.size and s[-1] > 0 else 1.0
        frac = s / total
        return frac if K is None else (0.0 if K == 0 else float(frac[K - 1]))

    def reconstruct(self, K=None) -> np.ndarray:
        K = self.d.size if K is None else K
        return (self.U[:, :K] * self.d[:K]) @ self.V[:, :K].T


def eof_decompose(M) -> EofResult:
    """Thin SVD M = U diag(d) V^T."""
    M = np.asarray(M, dtype=float)
    U, d, Vt = np.linalg.svd(M, full_matrices=False)
    return EofResult(d, U, Vt.T)


def remove_large_scale(M, K: int, eof: EofResult | None = None) -> np.ndarray:
    """Residual after removing the first K modes of M."""
    M = np.asarray(M, dtype=float)
    if not 0 <= K <= min(M.shape):
        raise ValueError(f"K must lie in 0..{min(M.shape)}")
    if K == 0:
        return M.copy()
    eof = eof_decompose(M) if eof is None else eof
    return M - eof.reconstruct(K)


def stretch_colatitude(theta, alpha_stretch: float) -> np.ndarray:
    """theta' = alpha theta, clamped to [0, pi]."""
    theta = np.asarray(theta, dtype=float)
    if not alpha_stretch > 0:
        raise DomainError("stretching factor must be positive")
    t = alpha_stretch * theta
    bad = np.flatnonzero(t > math.pi + 1e-9)
    if bad.size:
        shown = ", ".join(f"{i} (theta={theta.flat[i]:.6g})" for i in bad[:10])
        more = "" if bad.size <= 10 else f" and {bad.size - 10} more"
        raise DomainError(f"stretching by {alpha_stretch} pushes points past pi: {shown}{more}")
    return np.clip(t, 0.0, math.pi)


def moment_variance_profile(r) -> np.ndarray:
    """Per-location sample standard deviation over time, floored at 1e-12."""
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] < 8:
        raise ValueError("need at least 8 time points for the moment estimate")
    g = r.std(axis=0, ddof=1)
    low = g < G_FLOOR
    if np.any(low):
        log.warning("%d locations have (near) zero variance; g floored at %g", int(low.sum()), G_FLOOR)
        g = np.where(low, G_FLOOR, g)
    return g


def sh_filter(S, theta_prime, phi, L: int) -> np.ndarray:
    """Residuals of the per-time-slice least-squares fit on real SH up to degree L."""
    S = np.asarray(S, dtype=float)
    X = real_sh_matrix(L, theta_prime, phi)
    n, p = X.shape
    if S.shape[-1] != n:
        raise ValueError(f"{S.shape[-1]} columns but {n} locations")
    if n <= p:
        raise ValueError(f"need more than {p} locations for SH degree {L}, got {n}")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * diag.max():
        raise np.linalg.LinAlgError(f"SH basis up to degree {L} is rank deficient at these points")
    return S - (S @ Q) @ Q.T


@dataclass
class PreprocessResult:
    small_scale: np.ndarray  # (T, N)
    g_hat: np.ndarray  # (N,)
    theta_prime: np.ndarray  # (N,)
    variance_explained: np.ndarray  # cumulative, one entry per mode
    column_means: np.ndarray


def preprocess(M, theta, phi, K: int = 4, L: int | None = 3,
               alpha_stretch: float = 4.0) -> PreprocessResult:
    """Run the full pipeline.  ``L=None`` skips the SH regression."""
    theta_prime = stretch_colatitude(theta, alpha_stretch)
    Mc, means = center_columns(M)
    eof = eof_decompose(Mc)
    r = remove_large_scale(Mc, K, eof)
    g = moment_variance_profile(r)
    S = r / g
    if L is not None:
        S = sh_filter(S, theta_prime, phi, L)
    return PreprocessResult(S * g, g, theta_prime, eof.variance_explained(), means)
