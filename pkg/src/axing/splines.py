"""Cubic spline bases in colatitude for the log variance profile.

Two flavours are supported:

* ``"bspline"``: clamped cubic B-splines on [lo, hi] with the given interior
  knots; the first B-spline is replaced by the intercept.
* ``"natural"``: natural cubic splines (second derivative zero at both
  boundary knots), built the same way as R's ``splines::ns`` without an
  intercept, with the constant prepended.

In both cases ``evaluate`` returns the map theta' -> (1, b_1, ..., b_r).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline


@dataclass(frozen=True, eq=False)
class SplineBasis:
    knots: tuple  # interior knots
    kind: str = "bspline"
    lo: float = 0.0
    hi: float = math.pi
    degree: int = 3
    _transform: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("bspline", "natural"):
            raise ValueError(f"unknown spline kind {self.kind!r}")
        k = tuple(float(v) for v in self.knots)
        if any(b <= a for a, b in zip(k, k[1:])):
            raise ValueError("interior knots must be strictly increasing")
        if k and not (self.lo < k[0] and k[-1] < self.hi):
            raise ValueError("interior knots must lie strictly inside the boundary knots")
        object.__setattr__(self, "knots", k)
        nb = len(k) + self.degree + 1
        if self.kind == "bspline":
            T = np.eye(nb)[:, 1:]
        else:
            # project onto splines with zero second derivative at both ends,
            # dropping the first B-spline as ns(intercept = FALSE) does
            const = self._raw(np.array([self.lo, self.hi]), nu=2)[:, 1:]
            Q, _ = np.linalg.qr(const.T, mode="complete")
            T = np.vstack([np.zeros((1, nb - 3)), Q[:, 2:]])
        object.__setattr__(self, "_transform", T)

    @property
    def full_knots(self) -> np.ndarray:
        d = self.degree
        return np.concatenate([[self.lo] * (d + 1), self.knots, [self.hi] * (d + 1)])

    @property
    def r(self) -> int:
        """Number of non-intercept basis functions (length of eta_{-0})."""
        return self._transform.shape[1]

    @property
    def size(self) -> int:
        return self.r + 1

    def _raw(self, x, nu: int = 0) -> np.ndarray:
        t = self.full_knots
        nb = len(t) - self.degree - 1
        spl = BSpline(t, np.eye(nb), self.degree, extrapolate=True)
        if nu:
            spl = spl.derivative(nu)
        return np.atleast_2d(spl(np.asarray(x, dtype=float)))

    def bsplines(self, x) -> np.ndarray:
        """Underlying B-spline values before intercept substitution."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self._raw(x).reshape(x.size, -1)

    def evaluate(self, x) -> np.ndarray:
        """Basis matrix with rows (1, b_1(x), ..., b_r(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < self.lo - 1e-9) or np.any(x > self.hi + 1e-9):
            raise ValueError(f"colatitude outside [{self.lo}, {self.hi}]")
        B = self._raw(np.clip(x, self.lo, self.hi)).reshape(x.size, -1) @ self._transform
        return np.column_stack([np.ones(x.size), B])

    def derivative(self, x) -> np.ndarray:
        """d/dx of every basis column (the intercept column is zero)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        dB = self._raw(np.clip(x, self.lo, self.hi), nu=1).reshape(x.size, -1) @ self._transform
        return np.column_stack([np.zeros(x.size), dB])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "knots": list(self.knots), "boundary": [self.lo, self.hi]}

    @classmethod
    def from_dict(cls, d: dict) -> "SplineBasis":
        lo, hi = d.get("boundary", [0.0, math.pi])
        return cls(tuple(d["knots"]), d.get("kind", "bspline"), float(lo), float(hi))


def simulation_basis() -> SplineBasis:
    """Cubic B-splines with one interior knot at pi/2 (r = 4)."""
    return SplineBasis((math.pi / 2,), "bspline")


def natural_basis_from_data(theta_prime, n_interior: int = 2, lo: float = 0.0,
                            hi: float = math.pi) -> SplineBasis:
    """Natural cubic basis with interior knots at equally spaced quantiles of the data."""
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.quantile(np.asarray(theta_prime, dtype=float), probs)
    return SplineBasis(tuple(float(k) for k in knots), "natural", lo, hi)
