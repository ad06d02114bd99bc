"""Compute antipodally symmetric spherical t-designs and write node files.

A point set X = {x_i} U {-x_i} is a t-design (t odd) iff
sum_i Y_lm(x_i) = 0 for every even 2 <= l <= t - 1 and every m.  Starting
from a hemispherical Fibonacci spiral, the underdetermined system is solved
by Levenberg-Marquardt steps in the tangent planes of the free points.

    python tools/generate_designs.py 5 9 17 33 65 129
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from axing.sphere import GOLDEN_ANGLE, from_xyz, tangent_frame  # noqa: E402

OUT_DIR = Path(__file__).resolve().parents[1] / "src" / "axing" / "data" / "designs"


def n_equations(t: int) -> int:
    return sum(2 * l + 1 for l in range(2, t, 2))


def moments_and_jacobian(t: int, xyz: np.ndarray, with_jac: bool = True):
    """Residuals sum_i Y_lm(x_i) for even l and their tangent-plane Jacobian."""
    theta, phi = from_xyz(xyz)
    n = xyz.shape[0]
    x, s = np.cos(theta), np.sin(theta)
    ms = np.arange(0, t + 1)
    cos_m = np.cos(np.outer(ms, phi))
    sin_m = np.sin(np.outer(ms, phi))
    root2 = math.sqrt(2.0)
    E = n_equations(t)
    res = np.empty(E)
    jac = np.empty((E, 2 * n)) if with_jac else None
    row = 0
    prev2 = prev1 = None
    q_mm = np.full(n, 1.0 / math.sqrt(4.0 * math.pi))
    for l in range(t):
        cur = np.empty((l + 1, n))
        if l > 0:
            q_mm = math.sqrt((2 * l + 1) / (2.0 * l)) * s * q_mm
        cur[l] = q_mm
        if l >= 1:
            cur[l - 1] = math.sqrt(2 * l + 1) * x * prev1[l - 1]
        for m in range(0, l - 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            cur[m] = a * (x * prev1[m] - b * prev2[m])
        if l >= 2 and l % 2 == 0:
            m_arr = np.arange(l + 1)
            dq = l * x * cur
            coef = math.sqrt((2 * l + 1) / (2 * l - 1)) * np.sqrt(l * l - m_arr[:l] ** 2.0)
            dq[:l] -= coef[:, None] * prev1[:l]
            dq /= s
            block = 2 * l + 1
            # m = 0
            Y0 = cur[0]
            res[row] = Y0.sum()
            if with_jac:
                jac[row, :n] = dq[0]
                jac[row, n:] = 0.0
            # m > 0: cos rows then sin rows
            qc = root2 * cur[1:] * cos_m[1:l + 1]
            qs = root2 * cur[1:] * sin_m[1:l + 1]
            res[row + 1:row + 1 + l] = qc.sum(axis=1)
            res[row + 1 + l:row + block] = qs.sum(axis=1)
            if with_jac:
                mm = m_arr[1:, None]
                jac[row + 1:row + 1 + l, :n] = root2 * dq[1:] * cos_m[1:l + 1]
                jac[row + 1:row + 1 + l, n:] = -root2 * mm * cur[1:] * sin_m[1:l + 1] / s
                jac[row + 1 + l:row + block, :n] = root2 * dq[1:] * sin_m[1:l + 1]
                jac[row + 1 + l:row + block, n:] = root2 * mm * cur[1:] * cos_m[1:l + 1] / s
            row += block
        prev2, prev1 = prev1, cur
    return res, jac


def hemisphere_spiral(n: int, seed: int) -> np.ndarray:
    i = np.arange(n)
    z = 1.0 - (i + 0.5) / n
    r = np.sqrt(1.0 - z * z)
    ang = i * GOLDEN_ANGLE
    xyz = np.column_stack([r * np.cos(ang), r * np.sin(ang), z])
    # a generic rotation keeps every node away from the coordinate poles
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    return xyz @ Q.T


def solve(t: int, n_half: int, seed: int = 1, max_iter: int = 200, tol: float = 1e-11, verbose=True):
    """Levenberg-Marquardt in dual form, h = -J^T (J J^T + mu I)^-1 r, with
    Nielsen's gain-ratio update of the damping."""
    xyz = hemisphere_spiral(n_half, seed)
    res, jac = moments_and_jacobian(t, xyz)
    cost = 0.5 * res @ res
    mu, nu = None, 2.0
    for it in range(max_iter):
        if verbose:
            print(f"  t={t} it={it} max|r|={np.max(np.abs(res)):.3e} mu={mu or 0:.1e}", flush=True)
        if np.max(np.abs(res)) < tol or not np.isfinite(mu or 0.0) or nu > 1e8:
            # converged, or rounding floor reached and no step is accepted
            break
        JJ = jac @ jac.T
        if mu is None:
            mu = 1e-3 * float(np.max(np.diag(JJ)))
        JJ[np.diag_indices_from(JJ)] += mu
        c = np.linalg.cholesky(JJ)
        w = np.linalg.solve(c.T, np.linalg.solve(c, res))
        del JJ, c
        delta = -(jac.T @ w)
        # predicted reduction of the linear model: L(0) - L(h) = -h.J^T r - |J h|^2 / 2
        Jh = jac @ delta
        predicted = -(delta @ (jac.T @ res)) - 0.5 * Jh @ Jh
        theta, phi = from_xyz(xyz)
        e_t, e_p = tangent_frame(theta, phi)
        trial = xyz + delta[:n_half, None] * e_t + delta[n_half:, None] * e_p
        trial /= np.linalg.norm(trial, axis=1, keepdims=True)
        r_new, _ = moments_and_jacobian(t, trial, with_jac=False)
        new_cost = 0.5 * r_new @ r_new
        rho = (cost - new_cost) / predicted if predicted > 0 else -1.0
        if rho > 0:
            xyz, res, cost = trial, r_new, new_cost
            del jac
            _, jac = moments_and_jacobian(t, xyz)
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
        else:
            mu *= nu
            nu *= 2.0
    return xyz, float(np.max(np.abs(res)))


def write_design(path: Path, t: int, xyz_half: np.ndarray):
    full = np.vstack([xyz_half, -xyz_half])
    with open(path, "w") as fh:
        fh.write(f"# strength={t}\n# symmetric=1\n")
        fh.write(f"# antipodally symmetric spherical {t}-design, {len(full)} nodes, equal weights\n")
        for x, y, z in full:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("strengths", type=int, nargs="+")
    ap.add_argument("--slack", type=float, default=1.03,
                    help="unknowns / equations ratio for the free half of the nodes")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", type=Path, default=OUT_DIR)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    for t in args.strengths:
        if t % 2 == 0:
            raise SystemExit("symmetric designs have odd strength")
        E = n_equations(t)
        n_half = max(int(math.ceil((E + 3) * args.slack / 2.0)), 2)
        t0 = time.time()
        xyz, err = solve(t, n_half, seed=args.seed)
        print(f"t={t}: {2 * n_half} nodes, max moment {err:.2e}, {time.time() - t0:.1f}s")
        if err > 1e-10:
            raise SystemExit(f"t={t} did not converge")
        write_design(args.out / f"sym_t{t:03d}.txt", t, xyz)


if __name__ == "__main__":
    main()
