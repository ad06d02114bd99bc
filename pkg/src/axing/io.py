"""Run configuration, CSV/JSON persistence and data ingest.

Floats are written with ``repr`` so that a write, read, write cycle
reproduces the file byte for byte.  Angles are stored in radians.
"""
from __future__ import annotations

import copy
import csv
import json
import math
from pathlib import Path

import jsonschema
import numpy as np


class ConfigError(ValueError):
    """Invalid configuration; the message lists JSON-pointer paths."""


class IngestError(ValueError):
    """Malformed input data file."""


# ---------------------------------------------------------------- config

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT0 = {"type": "integer", "minimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_NUMS = {"type": "array", "items": _NUM}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "model": {"enum": ["axing", "gau_need", "gau_matern"]},
    "seed": _INT0,
    "nu": {"type": "number", "exclusiveMinimum": 2},
    "alpha_stretch": _POS,
    "designs_dir": {"type": "string"},
    "frame": _obj({"B": {"type": "number", "exclusiveMinimum": 1}, "J0": _INT0, "J": _INT0}),
    "spline": _obj({
        "kind": {"enum": ["bspline", "natural"]},
        "knots": {"oneOf": [_NUMS, {"const": "quantile"}]},
        "n_interior": _INT1,
        "boundary": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
    }),
    "mcmc": _obj({
        "n_iter": _INT1, "burn_in": _INT0, "thin": _INT1, "tau_eta2": _POS,
        "target_accept": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "adapt_decay": {"type": "number", "exclusiveMinimum": 0.5, "maximum": 1},
        "scalar_update_levels": {"type": "array", "items": _INT0},
        "am_init_var": _POS, "keep_coefficients": {"type": "boolean"},
    }),
    "mle": _obj({"restarts": _INT0, "n_boot": _INT0, "maxiter": _INT1}),
    "simulation": _obj({
        "n_points": _INT0,
        "grid": {"enum": ["equal_area", "perturbed_equal_area"]},
        "jitter": {"type": "number", "minimum": 0, "maximum": 0.5},
        "sigma": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "tau": {"type": "number", "minimum": 0},
        "eta": _NUMS,
        "gaussian": {"type": "boolean"},
        "kappa": _POS,
        "inv_a": _POS,
    }),
    "split": _obj({
        "mode": {"enum": ["none", "longitudinal_band", "random"]},
        "width_deg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 360},
        "band_start_deg": _NUM,
        "n_train": _INT1,
    }),
    "preprocess": _obj({"K": _INT0, "L": {"type": ["integer", "null"], "minimum": 0},
                        "alpha_stretch": _POS, "time_index": _INT0}),
    "joule": _obj({
        "sigma_P": _POS, "cap_colatitude": {"type": "number", "exclusiveMinimum": 0,
                                            "maximum": math.pi},
        "n_theta": _INT1, "n_phi": _INT1, "R": _POS, "n_sim": _INT1, "bins": _INT1,
    }),
})

DEFAULT_CONFIG = {
    "model": "axing",
    "seed": 0,
    "nu": 4.0,
    "alpha_stretch": 1.0,
    "frame": {"B": 2.0, "J0": 2, "J": 3},
    "spline": {"kind": "bspline", "knots": [math.pi / 2], "n_interior": 2,
               "boundary": [0.0, math.pi]},
    "mcmc": {"n_iter": 400_000, "burn_in": 200_000, "thin": 200, "tau_eta2": 100.0,
             "target_accept": 0.234, "adapt_decay": 0.6, "scalar_update_levels": [],
             "am_init_var": 0.01, "keep_coefficients": True},
    "mle": {"restarts": 3, "n_boot": 0},
    "simulation": {"n_points": 768, "grid": "perturbed_equal_area", "jitter": 0.1,
                   "sigma": [1.25, 0.4419], "tau": 0.1, "eta": [0.0, 0.5, -0.5, 0.3, -0.3],
                   "gaussian": False},
    "split": {"mode": "none", "width_deg": 30.0, "band_start_deg": 0.0, "n_train": 500},
    "preprocess": {"K": 4, "L": 3, "alpha_stretch": 4.0, "time_index": 0},
    "joule": {"sigma_P": 1.0, "cap_colatitude": math.pi / 4, "n_theta": 50, "n_phi": 100,
              "R": 6.5e6, "n_sim": 1000, "bins": 30},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def validate_config(cfg: dict) -> dict:
    """Schema-check a (partial) config, then fill defaults.  Raises ConfigError."""
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_pointer(e.absolute_path)}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    full = _merge(DEFAULT_CONFIG, cfg)
    fr = full["frame"]
    if fr["J0"] > fr["J"]:
        raise ConfigError("/frame/J0: must not exceed /frame/J")
    m = full["mcmc"]
    if m["burn_in"] >= m["n_iter"]:
        raise ConfigError("/mcmc/burn_in: must be smaller than /mcmc/n_iter")
    return full


def load_config(path=None) -> dict:
    if path is None:
        return validate_config({})
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("/: configuration must be a JSON object")
    return validate_config(raw)


# ---------------------------------------------------------------- files

def fmt(x) -> str:
    return repr(float(x))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_table(path, columns: dict) -> None:
    """CSV with a header row; every column is a 1-d numeric array of equal length."""
    names = list(columns)
    cols = [np.asarray(columns[k]).ravel() for k in names]
    n = {c.size for c in cols}
    if len(n) > 1:
        raise ValueError("columns differ in length")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*cols):
            fh.write(",".join(str(int(v)) if np.issubdtype(type(v), np.integer) else fmt(v)
                              for v in row) + "\n")


def read_table(path) -> dict:
    """Read a header-first numeric CSV into a dict of float arrays."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestError(f"{path}: {exc.strerror}") from exc
    rows = [r for r in rows if r and not r[0].startswith("#")]
    if not rows:
        raise IngestError(f"{path}: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    data = np.empty((len(rows) - 1, len(header)))
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise IngestError(f"{path}:{i}: expected {len(header)} fields, found {len(r)}")
        try:
            data[i - 2] = [float(v) for v in r]
        except ValueError as exc:
            raise IngestError(f"{path}:{i}: {exc}") from exc
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.isfinite(data))[0, 0]) + 2
        raise IngestError(f"{path}:{bad}: missing or non-finite value")
    return {h: data[:, k] for k, h in enumerate(header)}


def _check_angles(path, theta, phi, degrees: bool):
    if degrees:
        theta, phi = np.radians(theta), np.radians(phi)
    if np.any(theta < -1e-12) or np.any(theta > math.pi + 1e-12):
        raise IngestError(f"{path}: colatitude outside [0, pi]; use --degrees for degree input")
    return np.clip(theta, 0.0, math.pi), np.mod(phi, 2.0 * math.pi)


def read_points(path, degrees: bool = False) -> dict:
    """Point file with columns theta, phi and optional value/truth columns."""
    t = read_table(path)
    for k in ("theta", "phi"):
        if k not in t:
            raise IngestError(f"{path}: missing column {k!r}")
    t["theta"], t["phi"] = _check_angles(path, t["theta"], t["phi"], degrees)
    return t


def read_spacetime(path, degrees: bool = False):
    """Space-time data in long (time,theta,phi,value) or wide (theta,phi,v_1..v_T) layout.

    Returns ``(M, theta, phi, times)`` with M of shape (T, N).
    """
    t = read_table(path)
    names = list(t)
    if names[:4] == ["time", "theta", "phi", "value"] and len(names) == 4:
        times = np.unique(t["time"])
        locs, inv = np.unique(np.column_stack([t["theta"], t["phi"]]), axis=0, return_inverse=True)
        inv = inv.ravel()
        ti = np.searchsorted(times, t["time"])
        M = np.full((times.size, locs.shape[0]), np.nan)
        if np.any(np.bincount(ti * locs.shape[0] + inv, minlength=M.size) > 1):
            raise IngestError(f"{path}: duplicate (time, location) rows")
        M[ti, inv] = t["value"]
        if np.isnan(M).any():
            raise IngestError(f"{path}: some (time, location) pairs are missing")
        theta, phi = _check_angles(path, locs[:, 0], locs[:, 1], degrees)
        return M, theta, phi, times
    if names[:2] == ["theta", "phi"] and len(names) > 2:
        M = np.vstack([t[k] for k in names[2:]])
        theta, phi = _check_angles(path, t["theta"], t["phi"], degrees)
        return M, theta, phi, np.arange(1, M.shape[0] + 1, dtype=float)
    raise IngestError(f"{path}: expected header time,theta,phi,value or theta,phi,v_1..v_T")


def save_array(path, a) -> None:
    np.save(path, np.asarray(a, dtype=float), allow_pickle=False)


def load_array(path) -> np.ndarray:
    return np.load(path, allow_pickle=False)
