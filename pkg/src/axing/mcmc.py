"""Adaptive Metropolis-within-Gibbs sampler for the AXING-need model.

One iteration performs, in order:

1. c_j | rest ~ N(mu_j, Sigma_j) for each level j (block or per-coefficient),
   with precision A_j^T G^2 A_j / tau2 + diag(1 / V_j);
2. V_jk | rest ~ IG((nu + 1) / 2, (c_jk^2 + nu sigma2_j) / 2);
3. sigma2_j | rest ~ Gamma(nu p_j / 2, rate = nu / 2 sum_k 1 / V_jk);
4. tau2 | rest ~ IG(n / 2, RSS / 2);
5. eta_{-0} by an adaptive random-walk Metropolis step with a N(0, tau_eta2 I)
   prior, proposal N(eta, gamma (Sigma + eps I)) and Robbins-Monro updates
   of log gamma, the running mean and Sigma.

The priors on sigma2_j and tau2 default to the Jeffreys choices 1/sigma2 and
1/tau2.  Proper Gamma / inverse-gamma priors can be switched on through the
config; they exist for joint-distribution (Geweke) testing.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg

from .baselines import NeedletGaussianLikelihood, simplex_maximize
from .model import AxingParams, CoefficientState
from .needlets import NeedletFrame, design_matrix
from .sphere import as_angles, as_xyz
from .splines import SplineBasis

log = logging.getLogger(__name__)

RSS_FLOOR = 1e-12
PROPOSAL_EPS = 1e-10
JITTERS = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


class McmcError(RuntimeError):
    pass


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class McmcConfig:
    n_iter: int = 400_000
    burn_in: int = 200_000
    thin: int = 200
    tau_eta2: float = 100.0
    target_accept: float = 0.234
    adapt_decay: float = 0.6
    scalar_update_levels: tuple = ()
    seed: int = 0
    adapt: bool = True
    am_init_var: float = 0.01
    sigma2_prior: tuple = (0.0, 0.0)  # extra (shape, rate) of a Gamma prior on sigma2_j
    tau2_prior: tuple = (0.0, 0.0)  # extra (shape, scale) of an IG prior on tau2
    keep_coefficients: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scalar_update_levels", tuple(self.scalar_update_levels))
        object.__setattr__(self, "sigma2_prior", tuple(self.sigma2_prior))
        object.__setattr__(self, "tau2_prior", tuple(self.tau2_prior))

    def validate(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if not self.tau_eta2 > 0:
            raise ValueError("tau_eta2 must be positive")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        return self

    def scaled(self, budget: float) -> "McmcConfig":
        """Multiply iteration counts (and the thinning stride) by ``budget``."""
        n = max(int(round(self.n_iter * budget)), 2)
        b = min(int(round(self.burn_in * budget)), n - 1)
        t = max(int(round(self.thin * budget)), 1)
        return replace(self, n_iter=n, burn_in=b, thin=t)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("scalar_update_levels", "sigma2_prior", "tau2_prior"):
            d[k] = list(d[k])
        return d


@dataclass
class AmState:
    gamma: float
    mean: np.ndarray
    cov: np.ndarray
    accept_count: int = 0
    iter: int = 0


@dataclass
class McmcState:
    coeffs: CoefficientState
    params: AxingParams
    am_state: AmState
    parts: np.ndarray = field(default=None, repr=False)  # A_j c_j per level, n x levels


class ChainContext:
    """Fixed data and caches shared by the step functions.

    The level Gram matrices A_j^T G^2 A_j depend on eta only, so they are
    recomputed lazily when eta changes (an accepted Metropolis move).
    """

    def __init__(self, Z, design: np.ndarray, frame: NeedletFrame, basis: SplineBasis,
                 theta, nu: float, config: McmcConfig):
        self.Z = np.asarray(Z, dtype=float)
        self.A = np.asarray(design, dtype=float)
        if self.A.shape != (self.Z.size, frame.n_coeffs):
            raise ValueError(f"design matrix shape {self.A.shape} does not match "
                             f"{self.Z.size} observations and {frame.n_coeffs} coefficients")
        self.frame = frame
        self.basis = basis
        self.nu = float(nu)
        self.config = config
        self.blocks = [frame.block(lv.j) for lv in frame.levels]
        self.levels = [lv.j for lv in frame.levels]
        self.A_blocks = [np.ascontiguousarray(self.A[:, s]) for s in self.blocks]
        self.Bmat = basis.evaluate(np.asarray(theta, dtype=float))
        self.n = self.Z.size
        self._gram_eta = None
        self._grams = None

    @classmethod
    def from_points(cls, Z, points, frame, basis, nu, config, design=None):
        xyz = as_xyz(points)
        A = design_matrix(frame, xyz) if design is None else design
        return cls(Z, A, frame, basis, as_angles(xyz)[0], nu, config)

    def g(self, eta) -> np.ndarray:
        return np.exp(self.Bmat @ eta)

    def grams(self, eta) -> list:
        if self._gram_eta is None or not np.array_equal(eta, self._gram_eta):
            g = self.g(eta)
            grams = []
            for Aj in self.A_blocks:
                Ag = Aj * g[:, None]
                grams.append(Ag.T @ Ag)
            self._grams = grams
            self._gram_eta = np.array(eta, copy=True)
        return self._grams

    def parts(self, c) -> np.ndarray:
        return np.column_stack([Aj @ c[s] for Aj, s in zip(self.A_blocks, self.blocks)])

    def residual(self, state: McmcState, eta=None) -> np.ndarray:
        eta = state.params.eta if eta is None else eta
        return self.Z - self.g(eta) * state.parts.sum(axis=1)


def initial_state(ctx: ChainContext, params: AxingParams) -> McmcState:
    """c = 0 and V = 1, with the adaptive Metropolis state at its defaults."""
    p = ctx.frame.n_coeffs
    d = ctx.basis.r
    coeffs = CoefficientState(np.zeros(p), np.ones(p))
    am = AmState(gamma=2.38 ** 2 / max(d, 1), mean=params.eta[1:].copy(),
                 cov=ctx.config.am_init_var * np.eye(d))
    state = McmcState(coeffs, params, am)
    state.parts = ctx.parts(coeffs.c)
    return state


def _factor(Q: np.ndarray, level: int) -> np.ndarray:
    scale = float(np.mean(np.diag(Q)))
    for jit in JITTERS:
        try:
            M = Q if jit == 0.0 else Q + jit * scale * np.eye(Q.shape[0])
            return linalg.cholesky(M, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
    cond = np.linalg.cond(Q)
    raise FactorizationError(
        f"coefficient precision for level {level} is not positive definite "
        f"after jitter {JITTERS[-1]:g} (condition estimate {cond:.3e})")


def conditional_c_moments(state: McmcState, ctx: ChainContext, index: int):
    """Mean and covariance of c_j | rest for the level at position ``index``.

    Used by tests; the sampler works with the Cholesky factor directly.
    """
    Q, b = _precision_system(state, ctx, index)
    Sigma = np.linalg.inv(Q)
    return Sigma @ b, Sigma


def _precision_system(state: McmcState, ctx: ChainContext, i: int):
    tau2 = state.params.tau2
    g = ctx.g(state.params.eta)
    s = ctx.blocks[i]
    others = state.parts.sum(axis=1) - state.parts[:, i]
    y = ctx.Z - g * others
    Q = ctx.grams(state.params.eta)[i] / tau2  # a fresh array; the cache is untouched
    Q[np.diag_indices_from(Q)] += 1.0 / state.coeffs.V[s]
    b = ctx.A_blocks[i].T @ (g * y) / tau2
    return Q, b


def gibbs_step_c(state: McmcState, ctx: ChainContext, rng: np.random.Generator) -> McmcState:
    """Step 1: sequential draws of c_j | Z, V, theta, c_{-j} for j = J0..J."""
    c = state.coeffs.c
    for i, s in enumerate(ctx.blocks):
        j = ctx.levels[i]
        if j in ctx.config.scalar_update_levels:
            _scalar_update(state, ctx, i, rng)
            continue
        Q, b = _precision_system(state, ctx, i)
        L = _factor(Q, j)
        w = linalg.solve_triangular(L, b, lower=True, check_finite=False)
        w += rng.standard_normal(w.size)
        c[s] = linalg.solve_triangular(L, w, lower=True, trans="T", check_finite=False)
        state.parts[:, i] = ctx.A_blocks[i] @ c[s]
    return state


def _scalar_update(state: McmcState, ctx: ChainContext, i: int, rng):
    tau2 = state.params.tau2
    g = ctx.g(state.params.eta)
    s = ctx.blocks[i]
    Ag = ctx.A_blocks[i] * g[:, None]
    c = state.coeffs.c[s]
    V = state.coeffs.V[s]
    r = ctx.Z - g * state.parts.sum(axis=1)
    norms = np.einsum("ij,ij->j", Ag, Ag)
    z = rng.standard_normal(c.size)
    for k in range(c.size):
        a = Ag[:, k]
        r += a * c[k]
        q = norms[k] / tau2 + 1.0 / V[k]
        c[k] = (a @ r) / (tau2 * q) + z[k] / math.sqrt(q)
        r -= a * c[k]
    state.coeffs.c[s] = c
    state.parts[:, i] = ctx.A_blocks[i] @ c


def gibbs_step_V(state: McmcState, ctx: ChainContext, rng: np.random.Generator) -> McmcState:
    """Step 2: V_jk ~ IG((nu + 1) / 2, (c_jk^2 + nu sigma2_j) / 2)."""
    nu = ctx.nu
    s2 = np.repeat(state.params.sigma2, ctx.frame.sizes)
    scale = 0.5 * (state.coeffs.c ** 2 + nu * s2)
    V = scale / rng.gamma(0.5 * (nu + 1.0), 1.0, size=scale.size)
    state.coeffs.V = np.maximum(V, np.finfo(float).tiny)
    return state


def gibbs_step_sigma2(state: McmcState, ctx: ChainContext, rng: np.random.Generator) -> McmcState:
    """Step 3: sigma2_j ~ Gamma(nu p_j / 2, rate (nu / 2) sum_k 1 / V_jk)."""
    nu = ctx.nu
    a0, b0 = ctx.config.sigma2_prior
    new = np.empty(len(ctx.blocks))
    for i, s in enumerate(ctx.blocks):
        shape = 0.5 * nu * (s.stop - s.start) + a0
        rate = 0.5 * nu * np.sum(1.0 / state.coeffs.V[s]) + b0
        new[i] = rng.gamma(shape, 1.0 / rate)
    state.params = state.params.with_(sigma2=np.maximum(new, np.finfo(float).tiny))
    return state


def gibbs_step_tau2(state: McmcState, ctx: ChainContext, rng: np.random.Generator) -> McmcState:
    """Step 4: tau2 ~ IG(n / 2, RSS / 2), with RSS floored at 1e-12."""
    a0, b0 = ctx.config.tau2_prior
    r = ctx.residual(state)
    rss = max(float(r @ r), RSS_FLOOR)
    tau2 = (0.5 * rss + b0) / rng.gamma(0.5 * ctx.n + a0, 1.0)
    state.params = state.params.with_(tau2=tau2)
    return state


def eta_log_target(state: McmcState, ctx: ChainContext, eta_free) -> float:
    eta = np.concatenate([[0.0], eta_free])
    r = ctx.residual(state, eta)
    return -0.5 * (r @ r) / state.params.tau2 - 0.5 * (eta_free @ eta_free) / ctx.config.tau_eta2


def am_step_eta(state: McmcState, ctx: ChainContext, rng: np.random.Generator) -> McmcState:
    """Step 5: adaptive random-walk Metropolis on eta_{-0}.

    The step-size adaptation uses the acceptance probability min(1, ratio)
    rather than the 0/1 outcome; both have the same expectation.
    """
    am = state.am_state
    cfg = ctx.config
    cur = state.params.eta[1:]
    d = cur.size
    if d == 0:
        return state
    S = am.gamma * (am.cov + PROPOSAL_EPS * np.eye(d))
    L = np.linalg.cholesky(0.5 * (S + S.T))
    prop = cur + L @ rng.standard_normal(d)
    with np.errstate(over="ignore", invalid="ignore"):
        lp_new = eta_log_target(state, ctx, prop)
        lp_old = eta_log_target(state, ctx, cur)
        log_ratio = lp_new - lp_old
    if not np.isfinite(log_ratio):
        alpha = 0.0
    else:
        alpha = math.exp(min(0.0, log_ratio))
    if rng.random() < alpha:
        state.params = state.params.with_(eta=np.concatenate([[0.0], prop]))
        am.accept_count += 1
    am.iter += 1
    if cfg.adapt:
        s_t = am.iter ** (-cfg.adapt_decay)
        am.gamma = math.exp(math.log(am.gamma) + s_t * (alpha - cfg.target_accept))
        x = state.params.eta[1:]
        diff = x - am.mean
        am.mean = am.mean + s_t * diff
        am.cov = am.cov + s_t * (np.outer(diff, diff) - am.cov)
        am.cov = 0.5 * (am.cov + am.cov.T)
    return state


def transition(state: McmcState, ctx: ChainContext, rng: np.random.Generator) -> McmcState:
    """One full iteration of the five steps in order."""
    gibbs_step_c(state, ctx, rng)
    gibbs_step_V(state, ctx, rng)
    gibbs_step_sigma2(state, ctx, rng)
    gibbs_step_tau2(state, ctx, rng)
    am_step_eta(state, ctx, rng)
    return state


@dataclass
class PosteriorSamples:
    sigma2: np.ndarray  # (L, levels)
    tau2: np.ndarray  # (L,)
    eta: np.ndarray  # (L, r + 1)
    c: np.ndarray | None  # (L, p)
    levels: list
    nu: float
    accept: np.ndarray = field(repr=False, default=None)  # per-iteration acceptance indicator
    log_gamma: np.ndarray = field(repr=False, default=None)
    burn_in: int = 0

    @property
    def n_draws(self) -> int:
        return self.tau2.size

    def params_at(self, i: int) -> AxingParams:
        return AxingParams(self.sigma2[i], float(self.tau2[i]), self.eta[i], self.nu)

    def acceptance_rate(self, after: int | None = None) -> float:
        start = self.burn_in if after is None else after
        tail = self.accept[start:]
        return float(np.mean(tail)) if tail.size else float("nan")

    def columns(self) -> dict:
        """Named draws in trace-file column order."""
        cols = {}
        for i, j in enumerate(self.levels):
            cols[f"sigma2_{j}"] = self.sigma2[:, i]
        cols["tau2"] = self.tau2
        for i in range(1, self.eta.shape[1]):
            cols[f"eta_{i}"] = self.eta[:, i]
        return cols

    def natural_columns(self) -> dict:
        cols = {"eta_0": self.eta[:, 0]}
        for i in range(1, self.eta.shape[1]):
            cols[f"eta_{i}"] = self.eta[:, i]
        for i, j in enumerate(self.levels):
            cols[f"sigma_{j}"] = np.sqrt(self.sigma2[:, i])
        cols["tau"] = np.sqrt(self.tau2)
        return cols

    def summary(self, quantiles=(0.025, 0.5, 0.975)) -> dict:
        out = {}
        for name, x in {**self.columns(), **self.natural_columns()}.items():
            out[name] = {
                "posterior_mean": float(np.mean(x)),
                "posterior_sd": float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
                "quantiles": {f"{q:g}": float(np.quantile(x, q)) for q in quantiles},
            }
        return out

    def posterior_mean(self) -> AxingParams:
        return AxingParams(self.sigma2.mean(0), float(self.tau2.mean()), self.eta.mean(0), self.nu)


def init_gaussian_mle(Z, points, frame: NeedletFrame, basis: SplineBasis, nu: float,
                      restarts: int = 3, maxiter: int | None = None) -> AxingParams:
    """Gaussian MLE with c_jk ~ N(0, nu sigma2_j / (nu - 2)) as a starting point."""
    Z = np.asarray(Z, dtype=float)
    n_par = len(frame.levels) + 1 + basis.r
    if Z.size <= n_par:
        raise ValueError(f"need more than {n_par} observations to initialize, got {Z.size}")
    lik = NeedletGaussianLikelihood(Z, points, frame, basis, nu / (nu - 2.0))
    x, f, ok = simplex_maximize(lik.loglik_x, lik.default_start(), restarts=restarts, maxiter=maxiter)
    if not ok:
        log.warning("Gaussian initialization did not converge; using best point found")
    sigma2, tau2, eta = lik.unpack(x)
    return AxingParams(sigma2, tau2, eta, nu)


def run_chain(Z, points, frame: NeedletFrame, basis: SplineBasis, nu: float,
              config: McmcConfig, init: AxingParams | None = None, design=None,
              progress=None) -> PosteriorSamples:
    """Run the sampler and return the retained draws.

    Draws are kept at iterations t > burn_in with (t - burn_in) divisible by
    ``thin``.  ``progress``, if given, is called as progress(t, state) every
    1000 iterations.
    """
    config.validate()
    Z = np.asarray(Z, dtype=float)
    xyz = as_xyz(points)
    if xyz.shape[0] != Z.size:
        raise ValueError(f"{xyz.shape[0]} points but {Z.size} observations")
    rng = np.random.default_rng(config.seed)
    if init is None:
        init = init_gaussian_mle(Z, xyz, frame, basis, nu)
    init = AxingParams(init.sigma2, init.tau2, init.eta, nu).validate()
    ctx = ChainContext.from_points(Z, xyz, frame, basis, nu, config, design=design)
    state = initial_state(ctx, init)

    L = (config.n_iter - config.burn_in) // config.thin
    nl = len(frame.levels)
    out_s2 = np.empty((L, nl))
    out_t2 = np.empty(L)
    out_eta = np.empty((L, basis.size))
    out_c = np.empty((L, frame.n_coeffs)) if config.keep_coefficients else None
    accept = np.zeros(config.n_iter, dtype=bool)
    log_gamma = np.empty(config.n_iter)
    kept = 0
    for t in range(1, config.n_iter + 1):
        before = state.am_state.accept_count
        try:
            transition(state, ctx, rng)
        except Exception as exc:
            raise McmcError(f"iteration {t}: {exc}") from exc
        accept[t - 1] = state.am_state.accept_count > before
        log_gamma[t - 1] = math.log(state.am_state.gamma)
        if t > config.burn_in and (t - config.burn_in) % config.thin == 0 and kept < L:
            out_s2[kept] = state.params.sigma2
            out_t2[kept] = state.params.tau2
            out_eta[kept] = state.params.eta
            if out_c is not None:
                out_c[kept] = state.coeffs.c
            kept += 1
        if progress is not None and t % 1000 == 0:
            progress(t, state)
    return PosteriorSamples(out_s2, out_t2, out_eta, out_c, [lv.j for lv in frame.levels], nu,
                            accept, log_gamma, config.burn_in)


def block_correlation(samples: PosteriorSamples, frame: NeedletFrame) -> np.ndarray:
    """Mean absolute posterior correlation between coefficients of each pair of levels.

    A diagnostic for the weak between-block dependence that justifies
    blockwise Gibbs updates; no threshold is implied.
    """
    if samples.c is None or samples.n_draws < 3:
        raise ValueError("needs retained coefficients and at least 3 draws")
    X = samples.c - samples.c.mean(0)
    sd = X.std(0)
    sd[sd == 0] = np.inf
    X = X / sd
    R = X.T @ X / (X.shape[0] - 1)
    nl = len(frame.levels)
    out = np.zeros((nl, nl))
    for a, la in enumerate(frame.levels):
        for b, lb in enumerate(frame.levels):
            block = R[frame.block(la.j), frame.block(lb.j)]
            if a == b:
                off = block[~np.eye(block.shape[0], dtype=bool)]
                out[a, b] = float(np.mean(np.abs(off))) if off.size else 0.0
            else:
                out[a, b] = float(np.mean(np.abs(block)))
    return out
