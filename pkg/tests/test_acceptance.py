"""Acceptance criteria 1-14.

Each test prints one line ``criterion N: PASS|FAIL ...`` (visible with or
without ``-s``) and then asserts the same condition.  Criteria 8 and 9 are
long Monte Carlo studies and carry the ``slow`` marker; they still run in
the default suite.
"""
import math
import time

import numpy as np
import pytest

from axing import cli, io
from axing.baselines import GauMaternModel, GauNeedModel, krige, matern, mle_fit
from axing.ionosphere import (
    ElectricField,
    FieldOperator,
    JouleConfig,
    cap_grid,
    electric_field,
    heating_ensemble,
    joule_heating,
)
from axing.mcmc import (
    ChainContext,
    McmcConfig,
    am_step_eta,
    conditional_c_moments,
    gibbs_step_c,
    gibbs_step_sigma2,
    gibbs_step_tau2,
    gibbs_step_V,
    init_gaussian_mle,
    initial_state,
    run_chain,
)
from axing.model import AxingParams, CoefficientState, covariance_matrix, observe, simulate_field, variance_profile
from axing.needlets import NeedletFrame, Window, design_matrix, frame_kernel, needlet_coefficients
from axing.quadrature import QuadratureDesign, default_registry, octahedron, validate_design
from axing.scoring import crps_gaussian, crps_samples, cv_split, posterior_predict, quantile_score
from axing.sphere import as_angles, as_xyz, gauss_legendre_grid, generate_grid, real_sh_matrix
from axing.splines import SplineBasis, simulation_basis

from conftest import pair_with_dot, random_unit

SIGMA = np.array([1.25, 0.4419])
TAU = 0.1
ETA_TRUE = np.array([0.0, 0.5, -0.5, 0.3, -0.3])


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
        return ok

    return emit


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


# ---------------------------------------------------------------- 1-4: frame

def test_criterion_01_partition_of_unity(report):
    with Timer() as t:
        w = Window(2.0)
        err = max(abs(sum(w.b2(l / 2.0 ** j) for j in range(0, 9)) - 1.0) for l in range(1, 129))
    ok = err < 1e-10 and t.seconds < 1.0
    assert report(1, ok, f"max |sum_j b^2(l/2^j) - 1| = {err:.2e} over l=1..128, {t.seconds:.2f}s")


def test_criterion_02_quadrature(report):
    with Timer() as t:
        reg = default_registry()
        errs = {s: validate_design(reg.get(s), tol=1e-8) for s in reg.strengths}
        octa3 = validate_design(octahedron())
        octa4 = validate_design(octahedron(), strength=4)
        octa_ok = octa3.passed and octa3.max_abs_error < 1e-12 and not octa4.passed
    worst = max(r.max_abs_error for r in errs.values())
    ok = all(r.passed for r in errs.values()) and octa_ok and t.seconds < 5.0
    assert report(2, ok, f"{len(errs)} shipped designs (t={list(errs)}), worst moment {worst:.1e}; "
                         f"octahedron degree<=3 error {octa3.max_abs_error:.1e}, fails at degree 4; "
                         f"{t.seconds:.2f}s")


def test_criterion_03_frame_identity(report):
    rng = np.random.default_rng(3)
    with Timer() as t:
        frame = NeedletFrame(2.0, 0, 4)
        X, Y = random_unit(rng, 50), random_unit(rng, 50)
        worst = 0.0
        for lv in frame.levels:
            explicit = np.sum(frame.level_matrix(lv.j, X) * frame.level_matrix(lv.j, Y), axis=1)
            closed = frame_kernel(frame, lv.j, X, Y)
            scale = np.maximum(np.abs(closed), np.max(np.abs(closed)))
            worst = max(worst, float(np.max(np.abs(explicit - closed) / scale)))
    ok = worst < 1e-8 and t.seconds < 30
    assert report(3, ok, f"levels 0..4, 50 pairs: max error / level kernel scale = {worst:.1e}, "
                         f"{t.seconds:.1f}s")


def test_criterion_04_parseval(report):
    rng = np.random.default_rng(4)
    with Timer() as t:
        frame = NeedletFrame(2.0, 2, 3)
        c = rng.standard_normal(81)
        c[:16] = 0.0  # band 4..8 = [B^J0, B^J]

        def f(th, ph):
            return real_sh_matrix(8, th, ph) @ c

        th, ph, w = gauss_legendre_grid(40, 80)
        energy = float(w @ f(th, ph) ** 2)
        beta = needlet_coefficients(frame, f)
        rel = abs(float(np.sum(beta ** 2)) - energy) / energy
    ok = rel < 1e-6 and t.seconds < 60
    assert report(4, ok, f"|sum beta^2 - ||f||^2| / ||f||^2 = {rel:.1e} (degrees 4..8), {t.seconds:.1f}s")


# ---------------------------------------------------------------- 5-7: model and sampler

def test_criterion_05_covariance_oracle(report, frame23, basis):
    rng = np.random.default_rng(5)
    dots = [1.0, 0.999, 0.99, 0.97, 0.95, 0.9, 0.8, 0.6, 0.0, -0.7]
    pairs = [pair_with_dot(rng, u) for u in dots]
    P = np.array([p for p, _ in pairs] + [q for _, q in pairs])
    params = AxingParams(SIGMA ** 2, TAU ** 2, ETA_TRUE, 4.0)
    N = 50_000
    with Timer() as t:
        A = design_matrix(frame23, P)
        X = np.array([simulate_field(frame23, basis, params, P, rng, design=A) for _ in range(N)])
    g = variance_profile(basis, ETA_TRUE, as_angles(P)[0])
    C = covariance_matrix(frame23, SIGMA ** 2, 4.0, P) * np.outer(g, g)
    zs = []
    for i in range(10):
        prod = X[:, i] * X[:, 10 + i]
        se = prod.std(ddof=1) / math.sqrt(N)
        zs.append(abs(prod.mean() - C[i, 10 + i]) / se)
    ok = max(zs) < 4 and t.seconds < 180
    assert report(5, ok, f"5e4 simulations, 10 pairs: max |MC - C| / s.e. = {max(zs):.2f}, {t.seconds:.0f}s")


def _tiny_ctx(A, Z, theta, nu, n_nodes=6):
    if n_nodes == 6:
        d = octahedron()
    else:
        nodes = np.array([[0, 0, 1.0], [0, 0, -1.0]])[:n_nodes]
        d = QuadratureDesign(0, nodes, np.full(n_nodes, 4 * math.pi / n_nodes))
    frame = NeedletFrame(2.0, 2, 2, designs={2: d})
    return ChainContext(Z, A, frame, simulation_basis(), theta, nu, McmcConfig(n_iter=10, burn_in=0))


def _state(ctx, c, V, sigma2, tau2, eta=None):
    eta = np.zeros(ctx.basis.size) if eta is None else np.asarray(eta, float)
    st = initial_state(ctx, AxingParams(sigma2, tau2, eta, ctx.nu))
    st.coeffs = CoefficientState(np.array(c, float), np.array(V, float))
    st.parts = ctx.parts(st.coeffs.c)
    return st


def _moment_errors(draws, mean, var):
    m_err = np.max(np.abs(draws.mean(0) - mean) / np.abs(mean))
    v_err = np.max(np.abs(draws.var(0, ddof=1) - var) / var)
    return float(m_err), float(v_err)


def test_criterion_06_full_conditionals(report):
    rng = np.random.default_rng(6)
    N = 100_000
    res = {}
    with Timer() as t:
        # step 1: 6-coefficient block; data strong enough that every mean is
        # several standard deviations away from zero
        X = random_unit(rng, 20)
        A = design_matrix(NeedletFrame(2.0, 2, 2, designs={2: octahedron()}), X)
        c_true = np.array([3.0, -2.0, 2.5, -3.5, 2.0, 3.0])
        ctx = _tiny_ctx(A, A @ c_true + 0.05 * rng.standard_normal(20), as_angles(X)[0], 4.0)
        st = _state(ctx, np.zeros(6), np.full(6, 4.0), [1.0], 0.05, [0, 0.2, -0.1, 0.1, 0])
        mu, S = conditional_c_moments(st, ctx, 0)
        d = np.empty((N, 6))
        for i in range(N):
            d[i] = gibbs_step_c(st, ctx, rng).coeffs.c
        res["c"] = _moment_errors(d, mu, np.diag(S))

        # step 2: V_k | c_k ~ IG((nu+1)/2, (c_k^2 + nu sigma2)/2)
        nu = 30.0
        c = np.array([0.0, 0.5, 1.0, 2.0, 3.0, 5.0])
        ctx = _tiny_ctx(np.eye(6), np.zeros(6), np.ones(6), nu)
        st = _state(ctx, c, np.ones(6), [0.7], 1.0)
        d = np.array([gibbs_step_V(st, ctx, rng).coeffs.V.copy() for _ in range(N)])
        a, b = (nu + 1) / 2, (c ** 2 + nu * 0.7) / 2
        res["V"] = _moment_errors(d, b / (a - 1), b ** 2 / ((a - 1) ** 2 * (a - 2)))

        # step 3: sigma2_j | V ~ Gamma(nu p / 2, nu/2 sum 1/V); p=2, nu=4, V=1 gives Gamma(4, 4)
        ctx = _tiny_ctx(np.eye(2), np.zeros(2), np.ones(2), 4.0, n_nodes=2)
        st = _state(ctx, np.zeros(2), [1.0, 1.0], [3.0], 1.0)
        d = np.array([gibbs_step_sigma2(st, ctx, rng).params.sigma2.copy() for _ in range(N)])
        res["sigma2"] = _moment_errors(d, np.array([1.0]), np.array([0.25]))

        # step 4: tau2 | rest ~ IG(n/2, RSS/2), n = 30
        Z = rng.standard_normal(30)
        ctx = _tiny_ctx(np.zeros((30, 1)), Z, np.ones(30), 4.0, n_nodes=1)
        st = _state(ctx, [0.0], [1.0], [1.0], 1.0)
        d = np.array([[gibbs_step_tau2(st, ctx, rng).params.tau2] for _ in range(N)])
        a, b = 15.0, Z @ Z / 2
        res["tau2"] = _moment_errors(d, np.array([b / (a - 1)]), np.array([b ** 2 / ((a - 1) ** 2 * (a - 2))]))
    ok = all(m < 0.01 and v < 0.03 for m, v in res.values()) and t.seconds < 120
    detail = ", ".join(f"{k}: mean {m:.2%} var {v:.2%}" for k, (m, v) in res.items())
    assert report(6, ok, f"1e5 draws each; {detail}; {t.seconds:.0f}s")


def test_criterion_07_adaptive_metropolis(report):
    rng = np.random.default_rng(7)
    with Timer() as t:
        n = 60
        X = random_unit(rng, n)
        theta = as_angles(X)[0]
        basis = SplineBasis((1.0, 2.0), "natural")  # r = 3 free eta components
        d = octahedron()
        frame = NeedletFrame(2.0, 2, 2, designs={2: d})
        A = design_matrix(frame, X)
        c = rng.standard_normal(6)
        Z = np.exp(basis.evaluate(theta) @ np.array([0.0, 0.4, -0.3, 0.5])) * (A @ c) + 0.3 * rng.standard_normal(n)
        ctx = ChainContext(Z, A, frame, basis, theta, 4.0, McmcConfig(n_iter=10, burn_in=0))
        st = initial_state(ctx, AxingParams([1.0], 0.09, np.zeros(4), 4.0))
        st.coeffs = CoefficientState(c, np.ones(6))
        st.parts = ctx.parts(c)
        for _ in range(10_000):
            am_step_eta(st, ctx, rng)
        before = st.am_state.accept_count
        for _ in range(10_000):
            am_step_eta(st, ctx, rng)
        rate = (st.am_state.accept_count - before) / 10_000
    ok = 0.15 <= rate <= 0.35 and t.seconds < 60
    assert report(7, ok, f"acceptance after 1e4 adaptive steps = {rate:.3f} (3-d eta), {t.seconds:.1f}s")


# ---------------------------------------------------------------- 8-9: simulation studies

def recovery_run(seed: int, frame, basis, budget: float = 0.25):
    """One replicate of the scaled recovery study; returns a result dict."""
    rng = np.random.default_rng(seed)
    pts = generate_grid("perturbed_equal_area", 768, 0.1, seed)
    params = AxingParams(SIGMA ** 2, TAU ** 2, ETA_TRUE, 4.0)
    A = design_matrix(frame, pts)
    Z = observe(simulate_field(frame, basis, params, pts, rng, design=A), TAU ** 2, rng)
    init = init_gaussian_mle(Z, pts, frame, basis, 4.0)
    cfg = McmcConfig(seed=seed, keep_coefficients=False).scaled(budget)
    out = run_chain(Z, pts, frame, basis, 4.0, cfg, init=init, design=A)
    sig = np.sqrt(out.sigma2).mean(axis=0)
    tau = float(np.sqrt(out.tau2).mean())
    grid = np.linspace(0.0, math.pi, 181)
    B = basis.evaluate(grid)
    g_hat = np.exp(out.eta @ B.T).mean(axis=0)
    g_true = np.exp(B @ ETA_TRUE)
    g_err = float(np.max(np.abs(g_hat / g_true - 1.0)))
    rel = np.abs(np.concatenate([sig / SIGMA, [tau / TAU]]) - 1.0)
    return {"seed": seed, "sigma": sig, "tau": tau, "g_err": g_err,
            "ok": bool(np.all(rel <= 0.20) and g_err <= 0.25), "n_iter": cfg.n_iter}


@pytest.mark.slow
def test_criterion_08_parameter_recovery(report, frame23, basis, capsys):
    results = []
    with Timer() as t:
        for seed in range(10):
            with Timer() as ts:
                r = recovery_run(seed, frame23, basis)
            results.append(r)
            with capsys.disabled():
                print(f"\n  seed {seed}: sigma2={r['sigma'][0]:.4f} sigma3={r['sigma'][1]:.4f} "
                      f"tau={r['tau']:.4f} max|g_hat/g-1|={r['g_err']:.3f} "
                      f"{'ok' if r['ok'] else 'miss'} ({ts.seconds / 60:.1f} min)", flush=True)
    hits = sum(r["ok"] for r in results)
    ok = hits >= 8
    assert report(8, ok, f"{hits}/10 seeds within 20% (sigma, tau) and 25% (g) at "
                         f"{results[0]['n_iter']} iterations, {t.seconds / 60:.0f} min total")


def long_range_mse(seed: int, frame, basis, axing_budget: float = 0.05):
    rng = np.random.default_rng(seed)
    pts = generate_grid("perturbed_equal_area", 768, 0.1, seed)
    xyz = as_xyz(pts)
    params = AxingParams(SIGMA ** 2, TAU ** 2, ETA_TRUE, 2.5)
    Z = observe(simulate_field(frame, basis, params, xyz, rng), TAU ** 2, rng)
    sp = cv_split(xyz, "longitudinal_band", width=math.radians(30), n_train=500, seed=seed)
    tr, te = sp.train, sp.long_test
    out = {}
    for fam in ("gau_need", "gau_matern"):
        fit = mle_fit(fam, Z[tr], xyz[tr], frame=frame if fam == "gau_need" else None, basis=basis)
        k = krige(fit.model, Z[tr], xyz[tr], xyz[te])
        out[fam] = float(np.mean((k.mean - Z[te]) ** 2))
    init = init_gaussian_mle(Z[tr], xyz[tr], frame, basis, 2.5)
    chain = run_chain(Z[tr], xyz[tr], frame, basis, 2.5, McmcConfig(seed=seed).scaled(axing_budget), init=init)
    pred = posterior_predict(chain, frame, basis, xyz[te], rng)
    out["axing"] = float(np.mean((pred.mean - Z[te]) ** 2))
    out["n_long"] = int(te.size)
    return out


@pytest.mark.slow
def test_criterion_09_predictive_ordering(report, frame23, basis, capsys):
    rows = []
    with Timer() as t:
        for rep in range(5):
            r = long_range_mse(100 + rep, frame23, basis)
            rows.append(r)
            with capsys.disabled():
                print(f"\n  replicate {rep}: long-range MSPE axing={r['axing']:.4f} "
                      f"gau_need={r['gau_need']:.4f} gau_matern={r['gau_matern']:.4f} (n={r['n_long']})", flush=True)
    wins = sum(r["gau_need"] < r["gau_matern"] for r in rows)
    axing_wins = sum(r["axing"] <= r["gau_need"] for r in rows)
    ok = wins >= 4
    assert report(9, ok, f"Gau-need < Gau-Matern long-range MSPE in {wins}/5 replications; "
                         f"AXING <= Gau-need in {axing_wins}/5 (directional only); "
                         f"{t.seconds / 60:.0f} min")


# ---------------------------------------------------------------- 10-14

def test_criterion_10_scoring_units(report):
    rng = np.random.default_rng(10)
    exact = [
        abs(quantile_score(2.0, 2.0, 0.3)),
        abs(quantile_score(1.0, 2.0, 0.05) - 0.05),
        abs(quantile_score(3.0, 2.0, 0.95) - 0.05),
        abs(crps_samples([1.0, 1.0], 1.0)),
        abs(crps_samples([0.0, 2.0], 1.0) - 0.5),
        abs(crps_gaussian(0.0, 1.0, 0.0) - (math.sqrt(2 / math.pi) - 1 / math.sqrt(math.pi))),
    ]
    x = rng.standard_normal(100_000)
    rel = max(abs(crps_samples(x, y) / crps_gaussian(0.0, 1.0, y) - 1) for y in (-1.5, 0.0, 0.7, 2.0))
    ok = max(exact) < 1e-12 and rel < 0.01
    assert report(10, ok, f"example errors <= {max(exact):.1e}; sample vs closed-form CRPS {rel:.2%}")


def test_criterion_11_matern_identities(report, basis):
    r = np.linspace(0.0, 5.0, 201)
    e1 = np.max(np.abs(matern(r, 0.5, 1.3) - np.exp(-1.3 * r)))
    e2 = np.max(np.abs(matern(r, 1.5, 1.3) - (1 + 1.3 * r) * np.exp(-1.3 * r)))
    rng = np.random.default_rng(11)
    pts = random_unit(rng, 40)
    m = GauMaternModel(basis, 1.5, 0.5, 0.0, ETA_TRUE)
    Z = rng.standard_normal(40)
    k = krige(m, Z, pts, pts[:10])
    e3 = max(np.max(np.abs(k.mean - Z[:10])), np.max(k.variance))
    ok = e1 < 1e-10 and e2 < 1e-10 and e3 < 1e-8
    assert report(11, ok, f"kappa=1/2 err {e1:.1e}, kappa=3/2 err {e2:.1e}; kriging at data {e3:.1e}")


def test_criterion_12_electric_field(report, frame23, basis):
    rng = np.random.default_rng(12)
    c = rng.standard_normal(frame23.n_coeffs)
    h = 1e-5
    with Timer() as t:
        th = np.repeat(np.linspace(0.02, math.pi / 4 - 0.02, 50), 100)
        ph = np.tile(np.linspace(0, 2 * math.pi, 100, endpoint=False), 50)
        E = electric_field(frame23, basis, ETA_TRUE, c, th, ph, 4.0, 1.0)

        def pot(t_, p_):
            return FieldOperator(frame23, t_, p_, 4.0).potential(basis, ETA_TRUE, c)

        dt = (pot(th + h, ph) - pot(th - h, ph)) / (2 * h)
        dp = (pot(th, ph + h) - pot(th, ph - h)) / (2 * h) / np.sin(th)
        scale = np.max(np.hypot(E.E_theta, E.E_phi))
        err = max(np.max(np.abs(-dt - E.E_theta)), np.max(np.abs(-dp - E.E_phi))) / scale
    ok = err < 1e-4 and t.seconds < 60
    assert report(12, ok, f"50x100 grid: max |analytic - FD| / max|E| = {err:.1e}, {t.seconds:.1f}s")


def test_criterion_13_joule_heating(report, frame23, basis):
    cfg = JouleConfig(sigma_P=1.7)
    th, ph, _ = cap_grid(cfg)
    e0 = 2.0e-3
    E = ElectricField(th, ph, np.full(th.size, math.sqrt(e0)), np.zeros(th.size), cfg.R)
    P = joule_heating(E, cfg)[1]
    expect = 2 * math.pi * cfg.R ** 2 * (1 - math.cos(math.pi / 4)) * 1.7 * e0
    rel = abs(P / expect - 1)
    nu = 4.0
    heavy = AxingParams(SIGMA ** 2, TAU ** 2, ETA_TRUE, nu)
    gauss = GauNeedModel(frame23, basis, nu * SIGMA ** 2 / (nu - 2), TAU ** 2, ETA_TRUE)
    wins = 0
    for rep in range(10):
        rng = np.random.default_rng(1300 + rep)
        a = heating_ensemble(heavy, 500, JouleConfig(), rng, frame=frame23, basis=basis)
        g = heating_ensemble(gauss, 500, JouleConfig(), rng, frame=frame23, basis=basis)
        wins += a.percentiles()["95"] > g.percentiles()["95"]
    ok = rel < 1e-8 and wins >= 7
    assert report(13, ok, f"cap integral rel err {rel:.1e}; heavy-tail 95th percentile ordering "
                          f"{wins}/10 (n_sim=500)")


def test_criterion_14_determinism(report, tmp_path):
    small = ["--set", "frame.J0=1", "--set", "frame.J=2"]
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        assert cli.main(["simulate", "--seed", "14", "--n-points", "80", "--out", str(d / "z.csv")]) == 0
        assert cli.main(["fit", "--seed", "14", "--budget", "0.002", "--data", str(d / "z.csv"),
                         "--out-dir", str(d / "fit"), *small]) == 0
        io.write_table(d / "new.csv", {"theta": np.array([0.4, 1.4]), "phi": np.array([0.2, 3.0]),
                                       "value": np.array([0.1, -0.3])})
        assert cli.main(["predict", "--fit-dir", str(d / "fit"), "--points", str(d / "new.csv"),
                         "--out", str(d / "pred.csv")]) == 0
        names = ["z.csv", "fit/summary.json", "fit/trace.csv", "fit/coefficients.npy",
                 "pred.csv", "pred.scores.json"]
        outputs.append([(d / n).read_bytes() for n in names])
    same = [x == y for x, y in zip(*outputs)]
    ok = all(same)
    assert report(14, ok, f"simulate/fit/predict reruns byte-identical: {sum(same)}/{len(same)} files")
