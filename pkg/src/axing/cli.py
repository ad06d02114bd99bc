"""Command-line entry point: ``axing simulate | fit | predict | preprocess | joule |
validate-quadrature``.

Exit status is 0 on success, 2 on invalid input or configuration and 1 on
any other failure.  Every command is deterministic given its config and seed.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .baselines import GauMaternModel, krige, mle_fit, model_from_dict, simulate_gaussian
from .eof import preprocess as run_preprocess
from .eof import stretch_colatitude
from .ionosphere import JouleConfig, heating_ensemble
from .mcmc import McmcConfig, McmcError, PosteriorSamples, init_gaussian_mle, run_chain
from .model import AxingParams, observe, simulate_field
from .needlets import NeedletFrame
from .quadrature import (
    ConfigurationError,
    DesignParseError,
    DesignRegistry,
    DesignValidationError,
    default_registry,
    load_design,
    validate_design,
)
from .scoring import cv_split, posterior_predict, score_gaussian, score_samples
from .sphere import DomainError, as_angles, generate_grid, to_xyz
from .splines import SplineBasis

log = logging.getLogger("axing")

SUMMARY = "summary.json"
TRACE = "trace.csv"
COEFFS = "coefficients.npy"
TRAIN = "train.csv"

VALIDATION_ERRORS = (io.ConfigError, io.IngestError, DomainError, DesignParseError,
                     DesignValidationError, ConfigurationError)


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- helpers

def _registry(cfg: dict) -> DesignRegistry:
    d = cfg.get("designs_dir")
    return DesignRegistry.from_directory(d) if d else default_registry()


def build_frame(cfg: dict) -> NeedletFrame:
    fr = cfg["frame"]
    return NeedletFrame(fr["B"], fr["J0"], fr["J"], registry=_registry(cfg))


def build_basis(cfg: dict, theta_prime=None) -> SplineBasis:
    sp = cfg["spline"]
    lo, hi = sp["boundary"]
    knots = sp["knots"]
    if knots == "quantile":
        if theta_prime is None or np.size(theta_prime) == 0:
            raise io.ConfigError("/spline/knots: quantile placement needs data colatitudes")
        probs = np.arange(1, sp["n_interior"] + 1) / (sp["n_interior"] + 1)
        knots = [float(k) for k in np.quantile(theta_prime, probs)]
    try:
        return SplineBasis(tuple(knots), sp["kind"], lo, hi)
    except ValueError as exc:
        raise io.ConfigError(f"/spline: {exc}") from exc


def _set_path(cfg: dict, dotted: str, raw: str) -> None:
    keys = dotted.split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def resolve_config(args) -> dict:
    """Config file, then ``--set`` assignments, then dedicated flags."""
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise io.ConfigError(f"{args.config}: not valid JSON ({exc})") from exc
        except OSError as exc:
            raise io.ConfigError(f"{args.config}: {exc.strerror}") from exc
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise io.ConfigError(f"--set expects key.path=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_path(raw, k, v)
    for flag, path in (("seed", "seed"), ("model", "model"), ("nu", "nu"),
                       ("n_points", "simulation.n_points"), ("alpha_stretch", "alpha_stretch")):
        v = getattr(args, flag, None)
        if v is not None:
            _set_path(raw, path, json.dumps(v))
    return io.validate_config(raw)


def mcmc_config(cfg: dict, budget: float) -> McmcConfig:
    m = cfg["mcmc"]
    c = McmcConfig(n_iter=m["n_iter"], burn_in=m["burn_in"], thin=m["thin"],
                   tau_eta2=m["tau_eta2"], target_accept=m["target_accept"],
                   adapt_decay=m["adapt_decay"], scalar_update_levels=tuple(m["scalar_update_levels"]),
                   am_init_var=m["am_init_var"], keep_coefficients=m["keep_coefficients"],
                   seed=cfg["seed"])
    return c.scaled(budget) if budget != 1.0 else c


def _eta(cfg: dict, basis: SplineBasis) -> np.ndarray:
    eta = np.asarray(cfg["simulation"]["eta"], dtype=float)
    if eta.size != basis.size:
        raise io.ConfigError(f"/simulation/eta: expected {basis.size} values for this spline basis, "
                             f"got {eta.size}")
    return eta


def _stretched(cfg: dict, theta, phi):
    tp = stretch_colatitude(theta, cfg["alpha_stretch"])
    return tp, to_xyz(tp, phi)


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    sim = cfg["simulation"]
    rng = np.random.default_rng(cfg["seed"])
    n = sim["n_points"]
    if n == 0:
        io.write_table(args.out, {k: np.empty(0) for k in ("theta", "phi", "field", "value")})
        return 0
    pts = generate_grid(sim["grid"], n, sim["jitter"], seed=cfg["seed"])
    theta, phi = as_angles(pts)
    tp, xyz = _stretched(cfg, theta, phi)
    basis = build_basis(cfg, tp)
    eta = _eta(cfg, basis)
    tau2 = sim["tau"] ** 2
    if cfg["model"] == "gau_matern":
        if "kappa" not in sim or "inv_a" not in sim:
            raise io.ConfigError("/simulation: gau_matern needs kappa and inv_a")
        model = GauMaternModel(basis, sim["kappa"], sim["inv_a"], tau2, eta)
        X = simulate_gaussian(model, xyz, rng)
    else:
        frame = build_frame(cfg)
        sigma2 = np.asarray(sim["sigma"], dtype=float) ** 2
        if sigma2.size != len(frame.levels):
            raise io.ConfigError(f"/simulation/sigma: expected {len(frame.levels)} levels, got {sigma2.size}")
        params = AxingParams(sigma2, tau2, eta, cfg["nu"])
        X = simulate_field(frame, basis, params, xyz, rng, theta_prime=tp,
                           gaussian=cfg["model"] == "gau_need")
    Z = observe(X, tau2, rng)
    io.write_table(args.out, {"theta": theta, "phi": phi, "field": X, "value": Z})
    return 0


def _trace_columns(samples: PosteriorSamples) -> dict:
    cols = {"draw": np.arange(samples.n_draws)}
    cols.update(samples.columns())
    return cols


def cmd_fit(args) -> int:
    cfg = resolve_config(args)
    if args.budget <= 0:
        raise UsageError("--budget must be positive")
    data = io.read_points(args.data, degrees=args.degrees)
    if "value" not in data:
        raise io.IngestError(f"{args.data}: missing column 'value'")
    theta, phi, Z = data["theta"], data["phi"], data["value"]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    split = cfg["split"]
    if split["mode"] != "none":
        s = cv_split(to_xyz(theta, phi), split["mode"], width=math.radians(split["width_deg"]),
                     n_train=split["n_train"], seed=cfg["seed"],
                     band_start=math.radians(split["band_start_deg"]))
        for name, idx in (("test_short.csv", s.short_test), ("test_long.csv", s.long_test)):
            io.write_table(out / name, {"theta": theta[idx], "phi": phi[idx], "value": Z[idx]})
        theta, phi, Z = theta[s.train], phi[s.train], Z[s.train]
    io.write_table(out / TRAIN, {"theta": theta, "phi": phi, "value": Z})

    tp, xyz = _stretched(cfg, theta, phi)
    basis = build_basis(cfg, tp)
    model = cfg["model"]
    summary = {"model": model, "config": cfg, "basis": basis.to_dict(), "n_obs": int(Z.size),
               "budget": args.budget}
    if model == "axing":
        frame = build_frame(cfg)
        mc = mcmc_config(cfg, args.budget)
        init = init_gaussian_mle(Z, xyz, frame, basis, cfg["nu"], restarts=cfg["mle"]["restarts"],
                                 maxiter=cfg["mle"].get("maxiter"))
        samples = run_chain(Z, xyz, frame, basis, cfg["nu"], mc, init=init)
        io.write_table(out / TRACE, _trace_columns(samples))
        if samples.c is not None:
            io.save_array(out / COEFFS, samples.c)
        summary.update({"mcmc": mc.to_dict(), "init": init.to_dict(), "levels": samples.levels,
                        "n_draws": samples.n_draws, "acceptance_rate": samples.acceptance_rate(),
                        "parameters": samples.summary()})
    else:
        frame = build_frame(cfg) if model == "gau_need" else None
        rng = np.random.default_rng(cfg["seed"])
        fit = mle_fit(model, Z, xyz, frame=frame, basis=basis, n_boot=cfg["mle"]["n_boot"], rng=rng,
                      restarts=cfg["mle"]["restarts"], maxiter=cfg["mle"].get("maxiter"))
        summary.update({"fit": fit.model.to_dict(), "parameters": fit.summary()})
    io.write_json(out / SUMMARY, summary)
    return 0


def load_fit(fit_dir):
    """Return ``(summary, cfg, basis, frame, model_or_samples)`` from a fit directory."""
    fit_dir = Path(fit_dir)
    if not (fit_dir / SUMMARY).exists():
        raise io.IngestError(f"{fit_dir}: no {SUMMARY}; run `axing fit` first")
    summary = io.read_json(fit_dir / SUMMARY)
    cfg = io.validate_config(summary["config"])
    basis = SplineBasis.from_dict(summary["basis"])
    model = summary["model"]
    frame = build_frame(cfg) if model in ("axing", "gau_need") else None
    if model == "axing":
        tr = io.read_table(fit_dir / TRACE)
        levels = summary["levels"]
        sigma2 = np.column_stack([tr[f"sigma2_{j}"] for j in levels])
        eta = np.column_stack([np.zeros(tr["tau2"].size)] +
                              [tr[f"eta_{i}"] for i in range(1, basis.size)])
        c = io.load_array(fit_dir / COEFFS) if (fit_dir / COEFFS).exists() else None
        if c is not None and c.shape[1] != frame.n_coeffs:
            raise io.IngestError(f"{fit_dir}: stored coefficients do not match the configured frame")
        obj = PosteriorSamples(sigma2, tr["tau2"], eta, c, levels, cfg["nu"])
    else:
        obj = model_from_dict(summary["fit"], frame, basis)
    return summary, cfg, basis, frame, obj


def cmd_predict(args) -> int:
    summary, cfg, basis, frame, obj = load_fit(args.fit_dir)
    pts = io.read_points(args.points, degrees=args.degrees)
    theta, phi = pts["theta"], pts["phi"]
    tp, xyz = _stretched(cfg, theta, phi)
    truth = pts.get("value")
    cols = {"theta": theta, "phi": phi}
    if truth is not None:
        cols["truth"] = truth
    if isinstance(obj, PosteriorSamples):
        seed = cfg["seed"] if args.seed is None else args.seed
        pred = posterior_predict(obj, frame, basis, xyz, np.random.default_rng(seed), theta_prime=tp)
        q = pred.quantile([0.05, 0.25, 0.5, 0.75, 0.95])
        cols.update({"mean": pred.mean, "sd": pred.sd})
        report = score_samples(pred, truth) if truth is not None and truth.size else None
    else:
        train = io.read_table(Path(args.fit_dir) / TRAIN)
        _, train_xyz = _stretched(cfg, train["theta"], train["phi"])
        kr = krige(obj, train["value"], train_xyz, xyz)
        q = np.vstack([kr.quantile(p) for p in (0.05, 0.25, 0.5, 0.75, 0.95)])
        cols.update({"mean": kr.mean, "sd": kr.sd})
        report = score_gaussian(kr.mean, kr.sd, truth) if truth is not None and truth.size else None
    for name, row in zip(("q05", "q25", "q50", "q75", "q95"), q):
        cols[name] = row
    io.write_table(args.out, cols)
    if report is not None:
        target = args.scores or str(Path(args.out).with_suffix(".scores.json"))
        io.write_json(target, {"model": summary["model"], **report.to_dict()})
    return 0


def cmd_preprocess(args) -> int:
    M, theta, phi, times = io.read_spacetime(args.data, degrees=args.degrees)
    L = None if args.L is None or args.L < 0 else args.L
    res = run_preprocess(M, theta, phi, K=args.K, L=L, alpha_stretch=args.alpha_stretch)
    if args.all_times:
        T, N = res.small_scale.shape
        io.write_table(args.out, {"time": np.repeat(times, N), "theta": np.tile(theta, T),
                                  "phi": np.tile(phi, T), "value": res.small_scale.ravel()})
    else:
        if not 0 <= args.time_index < M.shape[0]:
            raise UsageError(f"--time-index must lie in 0..{M.shape[0] - 1}")
        io.write_table(args.out, {"theta": theta, "phi": phi,
                                  "value": res.small_scale[args.time_index]})
    diag = {"K": args.K, "L": L, "alpha_stretch": args.alpha_stretch,
            "n_times": int(M.shape[0]), "n_locations": int(M.shape[1]),
            "variance_explained": [float(v) for v in res.variance_explained],
            "g_hat_min": float(res.g_hat.min()), "g_hat_max": float(res.g_hat.max())}
    io.write_json(args.diagnostics or str(Path(args.out).with_suffix(".diagnostics.json")), diag)
    return 0


def cmd_joule(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = []
    for fit_dir in args.fit_dir:
        summary, cfg, basis, frame, obj = load_fit(fit_dir)
        j = cfg["joule"]
        jc = JouleConfig(sigma_P=args.sigma_p if args.sigma_p is not None else j["sigma_P"],
                         cap_colatitude=args.cap if args.cap is not None else j["cap_colatitude"],
                         n_theta=args.n_theta or j["n_theta"], n_phi=args.n_phi or j["n_phi"],
                         R=j["R"], alpha_stretch=cfg["alpha_stretch"]).validate()
        n_sim = args.n_sim or j["n_sim"]
        seed = cfg["seed"] if args.seed is None else args.seed
        ens = heating_ensemble(obj, n_sim, jc, np.random.default_rng(seed), frame=frame, basis=basis)
        label = Path(fit_dir).name or summary["model"]
        if label in labels:
            label = f"{label}_{len(labels)}"
        labels.append(label)
        io.write_table(out / f"heating_{label}.csv",
                       {"member": np.arange(n_sim), "p_ijh": ens.p_ijh})
        io.write_json(out / f"summary_{label}.json", {"model": summary["model"], "seed": seed,
                                                      **ens.summary()})
        io.write_json(out / f"hist_{label}.json", ens.histogram(j["bins"]))
    return 0


def cmd_validate_quadrature(args) -> int:
    if args.files:
        designs = [(str(p), load_design(p)) for p in args.files]
    else:
        reg = DesignRegistry.from_directory(args.data_dir) if args.data_dir else default_registry()
        designs = [(reg.get(t).source or f"strength {t}", reg.get(t)) for t in reg.strengths]
    failed = 0
    for name, d in designs:
        rep = validate_design(d, strength=args.strength, tol=args.tol)
        status = "ok" if rep.passed else "FAIL"
        failed += not rep.passed
        print(f"{status:4s} {name}: {d.size} nodes, strength {args.strength or d.strength}, "
              f"max error {rep.max_abs_error:.2e}")
    if failed:
        print(f"{failed} design(s) failed", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------- parser

def _common(p, config=True):
    if config:
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config field (value parsed as JSON when possible)")
        p.add_argument("--seed", type=int)
    p.add_argument("--degrees", action="store_true", help="input angles are in degrees")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="axing", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a field and noisy observations")
    _common(p)
    p.add_argument("--model", choices=["axing", "gau_need", "gau_matern"])
    p.add_argument("--nu", type=float)
    p.add_argument("--n-points", dest="n_points", type=int)
    p.add_argument("--alpha-stretch", dest="alpha_stretch", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model to point data")
    _common(p)
    p.add_argument("--model", choices=["axing", "gau_need", "gau_matern"])
    p.add_argument("--nu", type=float)
    p.add_argument("--alpha-stretch", dest="alpha_stretch", type=float)
    p.add_argument("--budget", type=float, default=1.0, help="multiplier on MCMC iteration counts")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict at new points from a fit directory")
    _common(p, config=False)
    p.add_argument("--seed", type=int)
    p.add_argument("--fit-dir", required=True)
    p.add_argument("--points", required=True, help="CSV with theta, phi and optional value (truth)")
    p.add_argument("--out", required=True)
    p.add_argument("--scores", help="score report path (default: <out>.scores.json)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("preprocess", help="extract the small-scale component of space-time data")
    _common(p, config=False)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics")
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--L", type=int, default=3, help="SH degree; negative disables the SH filter")
    p.add_argument("--alpha-stretch", dest="alpha_stretch", type=float, default=4.0)
    p.add_argument("--time-index", dest="time_index", type=int, default=0)
    p.add_argument("--all-times", dest="all_times", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("joule", help="integrated Joule heating of simulated potentials")
    p.add_argument("--fit-dir", action="append", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-sim", dest="n_sim", type=int)
    p.add_argument("--sigma-p", dest="sigma_p", type=float)
    p.add_argument("--cap", type=float, help="cap colatitude in radians")
    p.add_argument("--n-theta", dest="n_theta", type=int)
    p.add_argument("--n-phi", dest="n_phi", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_joule)

    p = sub.add_parser("validate-quadrature", help="check quadrature design files")
    p.add_argument("files", nargs="*")
    p.add_argument("--strength", type=int)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--data-dir", help="design directory (default: shipped designs)")
    p.set_defaults(func=cmd_validate_quadrature)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except McmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (UsageError, *VALIDATION_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level guard for the exit-code contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
