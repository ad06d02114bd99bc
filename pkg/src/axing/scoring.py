"""Posterior predictive draws, proper scoring rules and cross-validation splits.

Scores follow the negatively oriented convention: smaller is better.  The
quantile score at level alpha is (1{y < q} - alpha)(q - y), and the sample
CRPS is mean|X - y| - mean|X - X'| / 2 over all ordered pairs of draws.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .needlets import NeedletFrame, design_matrix
from .sphere import as_angles, as_xyz
from .splines import SplineBasis

EXACT_CRPS_MAX = 4096
_PAIR_CHUNK = 512


@dataclass
class PredictiveSamples:
    """Predictive draws ``draws[l, i]`` of Z* at new location i."""

    draws: np.ndarray  # (L, m)

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    @property
    def sd(self) -> np.ndarray:
        if self.n_draws < 2:
            return np.zeros(self.draws.shape[1])
        return self.draws.std(axis=0, ddof=1)

    def quantile(self, q) -> np.ndarray:
        """Empirical quantiles with linear interpolation between order statistics."""
        return np.quantile(self.draws, q, axis=0)

    def interval(self, level: float):
        """Equal-tailed interval from the empirical percentiles."""
        if not 0.0 < level < 1.0:
            raise ValueError("interval level must lie in (0, 1)")
        a = 1.0 - level
        return self.quantile(a / 2.0), self.quantile(1.0 - a / 2.0)


def posterior_predict(samples, frame: NeedletFrame, basis: SplineBasis, new_points,
                      rng: np.random.Generator, *, theta_prime=None,
                      design=None) -> PredictiveSamples:
    """One draw of Z* ~ N(G* A* c, tau2 I) per retained posterior sample.

    ``samples`` must carry the retained coefficients (``samples.c``).
    ``theta_prime`` overrides the colatitudes fed to the variance profile.
    """
    if samples.n_draws < 1:
        raise ValueError("posterior sample set is empty")
    if samples.c is None:
        raise ValueError("posterior samples carry no coefficients; rerun with keep_coefficients")
    xyz = as_xyz(new_points)
    A = design_matrix(frame, xyz) if design is None else np.asarray(design)
    if theta_prime is None:
        theta_prime = as_angles(xyz)[0]
    B = basis.evaluate(theta_prime)
    G = np.exp(samples.eta @ B.T)  # (L, m)
    mean = G * (samples.c @ A.T)
    noise = rng.standard_normal(mean.shape) * np.sqrt(samples.tau2)[:, None]
    return PredictiveSamples(mean + noise)


def score_point(m, y) -> dict:
    """Absolute and squared error of a point prediction."""
    e = np.asarray(m, dtype=float) - np.asarray(y, dtype=float)
    return {"abs_error": np.abs(e), "squared_error": e * e}


def _pair_sum(x: np.ndarray) -> float:
    """sum_{i,j} |x_i - x_j| by direct enumeration, in row chunks."""
    total = 0.0
    for s in range(0, x.size, _PAIR_CHUNK):
        total += float(np.abs(x[s:s + _PAIR_CHUNK, None] - x[None, :]).sum())
    return total


def _pair_sum_sorted(x: np.ndarray) -> float:
    """sum_{i,j} |x_i - x_j| = 2 sum_i (2i - L - 1) x_(i), i = 1..L."""
    xs = np.sort(x)
    L = xs.size
    return float(2.0 * np.dot(2.0 * np.arange(1, L + 1) - L - 1.0, xs))


def crps_samples(draws, y: float) -> float:
    """Sample CRPS: mean|X - y| - sum_{i,j}|X_i - X_j| / (2 L^2)."""
    x = np.asarray(draws, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("CRPS from samples needs at least 2 draws")
    L = x.size
    first = float(np.mean(np.abs(x - y)))
    pairs = _pair_sum(x) if L <= EXACT_CRPS_MAX else _pair_sum_sorted(x)
    return max(first - pairs / (2.0 * L * L), 0.0)


def crps_gaussian(mu, sigma, y):
    """Closed-form CRPS of N(mu, sigma^2) at y."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    z = (np.asarray(y, dtype=float) - mu) / sigma
    out = sigma * (z * (2.0 * stats.norm.cdf(z) - 1.0) + 2.0 * stats.norm.pdf(z)
                   - 1.0 / math.sqrt(math.pi))
    return float(out) if np.ndim(out) == 0 else out


def quantile_score(q, y, alpha: float):
    """Pinball loss (1{y < q} - alpha)(q - y)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    q = np.asarray(q, dtype=float)
    y = np.asarray(y, dtype=float)
    out = ((y < q).astype(float) - alpha) * (q - y)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class ScoreReport:
    mae: float
    mspe: float
    crps: float
    qs05: float
    qs95: float
    cp50: float
    mlen50: float
    cp90: float
    mlen90: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def _report(mean, q05, q25, q75, q95, crps, y) -> ScoreReport:
    pt = score_point(mean, y)
    return ScoreReport(
        mae=float(np.mean(pt["abs_error"])),
        mspe=float(np.mean(pt["squared_error"])),
        crps=float(np.mean(crps)),
        qs05=float(np.mean(quantile_score(q05, y, 0.05))),
        qs95=float(np.mean(quantile_score(q95, y, 0.95))),
        cp50=float(np.mean((q25 <= y) & (y <= q75))),
        mlen50=float(np.mean(q75 - q25)),
        cp90=float(np.mean((q05 <= y) & (y <= q95))),
        mlen90=float(np.mean(q95 - q05)),
        n=int(np.size(y)),
    )


def score_samples(pred: PredictiveSamples, y) -> ScoreReport:
    """Scores of a sample-based predictive distribution against the truth."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size != pred.draws.shape[1]:
        raise ValueError(f"{pred.draws.shape[1]} predicted locations but {y.size} truths")
    if y.size == 0:
        raise ValueError("nothing to score")
    q05, q25, q75, q95 = pred.quantile([0.05, 0.25, 0.75, 0.95])
    crps = np.array([crps_samples(pred.draws[:, i], y[i]) for i in range(y.size)])
    return _report(pred.mean, q05, q25, q75, q95, crps, y)


def score_gaussian(mean, sd, y) -> ScoreReport:
    """Scores of independent Gaussian predictive marginals (kriging output)."""
    mean = np.asarray(mean, dtype=float).ravel()
    sd = np.asarray(sd, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("nothing to score")
    z = stats.norm.ppf([0.05, 0.25, 0.75, 0.95])
    q05, q25, q75, q95 = (mean + zi * sd for zi in z)
    return _report(mean, q05, q25, q75, q95, crps_gaussian(mean, sd, y), y)


@dataclass
class CvSplit:
    train: np.ndarray
    short_test: np.ndarray
    long_test: np.ndarray


def in_longitude_band(phi, width: float, start: float = 0.0) -> np.ndarray:
    """Membership in the band of longitudes [start, start + width) modulo 2 pi."""
    return np.mod(np.asarray(phi, dtype=float) - start, 2.0 * np.pi) < width


def cv_split(points, mode: str = "longitudinal_band", *, width: float = math.radians(30.0),
             n_train: int = 500, seed: int = 0, band_start: float = 0.0) -> CvSplit:
    """Train/test partition of point indices.

    ``longitudinal_band``: points in the band form the long-range test set,
    ``n_train`` training points are drawn from the rest and the remaining
    outside points form the short-range test set.  ``random``: ``n_train``
    random training points, every other point is a short-range test point.
    """
    phi = as_angles(points)[1]
    n = phi.size
    rng = np.random.default_rng(seed)
    if mode == "longitudinal_band":
        if not 0.0 < width < 2.0 * np.pi:
            raise ValueError("band width must lie in (0, 2 pi)")
        inside = in_longitude_band(phi, width, band_start)
        outside = np.flatnonzero(~inside)
        if outside.size < n_train:
            raise ValueError(f"only {outside.size} points lie outside the band; "
                             f"cannot draw {n_train} training points")
        train = np.sort(rng.choice(outside, n_train, replace=False))
        short = np.setdiff1d(outside, train)
        return CvSplit(train, short, np.flatnonzero(inside))
    if mode == "random":
        if not 0 < n_train <= n:
            raise ValueError(f"n_train must lie in 1..{n}")
        train = np.sort(rng.choice(n, n_train, replace=False))
        return CvSplit(train, np.setdiff1d(np.arange(n), train), np.array([], dtype=int))
    raise ValueError(f"unknown split mode {mode!r}")
