import math

import numpy as np
import pytest

from axing.needlets import (
    NeedletFrame,
    degree_range,
    design_matrix,
    frame_kernel,
    make_window,
    needlet_coefficients,
    needlet_eval,
)
from axing.sphere import (
    DomainError,
    SpherePoint,
    gauss_legendre_grid,
    legendre_eval,
    real_sh_matrix,
    to_xyz,
)

from conftest import pair_with_dot, random_unit

# frozen with mpmath at 30 digits from the same bump construction
B2_FIVE_QUARTERS = 0.877032716722670921914265974436
KERNEL_DIAG_J2 = 2.42646584832276660133392674864
NEEDLET_J3_RATIO_AT_RIGHT_ANGLE = -0.00813007516309894402689556270489


@pytest.fixture(scope="module")
def window():
    return make_window(2.0)


def test_window_support(window):
    assert window.b(0.5) == 0.0
    assert window.b(2.0) == 0.0
    assert window.b(0.3) == 0.0 and window.b(5.0) == 0.0
    assert window.b(0.51) > 0 and window.b(1.99) > 0


def test_window_rejects_small_bandwidth():
    with pytest.raises(DomainError):
        make_window(1.0)


def test_window_partition_example(window):
    total = sum(window.b2(7.0 / 2 ** j) for j in range(7))
    assert abs(total - 1.0) < 1e-10


def test_window_partition_of_unity(window):
    for l in range(1, 129):
        total = sum(window.b2(l / 2.0 ** j) for j in range(0, 9))
        assert abs(total - 1.0) < 1e-10, l


def test_window_construction_identity(window):
    for xi in np.linspace(1.0, 2.0, 23):
        assert window.b2(xi) + window.phi(xi) == pytest.approx(window.phi(xi / 2.0), abs=1e-14)


def test_window_matches_high_precision_oracle(window):
    assert window.b2(1.25) == pytest.approx(B2_FIVE_QUARTERS, abs=1e-12)
    assert window.b2(1.5) == pytest.approx(0.5, abs=1e-12)
    # symmetry of the smooth step about its midpoint
    assert window.b2(7 / 8) == pytest.approx(B2_FIVE_QUARTERS, abs=1e-12)


@pytest.mark.parametrize("B", [1.5, 2.0, 3.0])
def test_window_partition_other_bandwidths(B):
    w = make_window(B)
    for y in np.linspace(1.0, 40.0, 37):
        assert abs(sum(w.b2(y / B ** j) for j in range(12)) - 1.0) < 1e-10


def test_degree_range():
    assert degree_range(0, 2.0) == (1, 2)
    assert degree_range(2, 2.0) == (2, 8)
    assert degree_range(3, 2.0) == (4, 16)


def test_frame_levels(frame23):
    for lv in frame23.levels:
        assert lv.size == lv.design.size
        assert np.all((lv.window_values >= 0) & (lv.window_values <= 1))
        c = lv.series()
        assert np.all(c[:lv.l_min] == 0)


def test_needlet_at_its_node(frame23):
    lv = frame23.level(2)
    p = SpherePoint.from_xyz(lv.nodes[5])
    ls = np.arange(lv.l_min, lv.l_max + 1)
    expect = math.sqrt(lv.design.weights[5]) * np.sum(lv.window_values * (2 * ls + 1) / (4 * math.pi))
    assert needlet_eval(frame23, 2, 5, p) == pytest.approx(expect, rel=1e-12)
    assert expect > 0


def test_needlet_matches_direct_sum(frame23, rng):
    window = frame23.window
    for j in (2, 3):
        lv = frame23.level(j)
        x = random_unit(rng, 1)[0]
        p = SpherePoint.from_xyz(x)
        k = int(rng.integers(lv.size))
        u = float(lv.nodes[k] @ p.xyz)
        P = legendre_eval(lv.l_max, u)
        direct = math.sqrt(lv.design.weights[k]) * sum(
            window.b(l / 2.0 ** j) * (2 * l + 1) / (4 * math.pi) * P[l]
            for l in range(lv.l_min, lv.l_max + 1))
        assert needlet_eval(frame23, j, k, p) == pytest.approx(direct, rel=1e-12, abs=1e-14)


def test_needlet_index_errors(frame23):
    p = SpherePoint(0.3, 0.3)
    with pytest.raises(IndexError):
        needlet_eval(frame23, 2, frame23.level(2).size, p)
    with pytest.raises(IndexError):
        needlet_eval(frame23, 4, 0, p)


def test_needlet_integrates_to_zero(frame23):
    theta, phi, w = gauss_legendre_grid(40, 80)
    A = design_matrix(frame23, to_xyz(theta, phi))
    assert np.max(np.abs(w @ A)) < 1e-12


def test_needlet_rotation_invariance(frame23, rng):
    lv = frame23.level(3)
    z = lv.nodes[3]
    _, a = pair_with_dot(rng, 0.37)
    # rotate a about z by an arbitrary angle
    ang = 1.1
    K = np.array([[0, -z[2], z[1]], [z[2], 0, -z[0]], [-z[1], z[0], 0]])
    R = np.eye(3) + math.sin(ang) * K + (1 - math.cos(ang)) * K @ K
    b = R @ a
    v1 = needlet_eval(frame23, 3, 3, SpherePoint.from_xyz(a))
    v2 = needlet_eval(frame23, 3, 3, SpherePoint.from_xyz(b))
    assert v1 == pytest.approx(v2, rel=1e-10, abs=1e-14)


def test_needlet_j3_decay_value():
    frame = NeedletFrame(2.0, 3, 3)
    lv = frame.level(3)
    z = lv.nodes[0]
    peak = needlet_eval(frame, 3, 0, SpherePoint.from_xyz(z))
    e = np.cross(z, [1.0, 0, 0]) if abs(z[0]) < 0.9 else np.cross(z, [0, 1.0, 0])
    val = needlet_eval(frame, 3, 0, SpherePoint.from_xyz(e))
    assert val / peak == pytest.approx(NEEDLET_J3_RATIO_AT_RIGHT_ANGLE, rel=1e-8)


@pytest.mark.xfail(strict=True, reason="standard C-infinity window gives |ratio| = 8.1e-3 at pi/2")
def test_needlet_j3_decay_below_one_thousandth():
    frame = NeedletFrame(2.0, 3, 3)
    z = frame.level(3).nodes[0]
    e = np.cross(z, [1.0, 0, 0]) if abs(z[0]) < 0.9 else np.cross(z, [0, 1.0, 0])
    peak = needlet_eval(frame, 3, 0, SpherePoint.from_xyz(z))
    assert abs(needlet_eval(frame, 3, 0, SpherePoint.from_xyz(e))) < 1e-3 * peak


def test_design_matrix_row_and_blocks(frame23, rng):
    p = SpherePoint.from_xyz(random_unit(rng, 1)[0])
    A = design_matrix(frame23, [p])
    assert A.shape == (1, sum(frame23.sizes))
    for lv in frame23.levels:
        row = [needlet_eval(frame23, lv.j, k, p) for k in range(lv.size)]
        np.testing.assert_allclose(A[0, frame23.block(lv.j)], row, rtol=1e-12, atol=1e-15)
        assert frame23.block(lv.j).stop - frame23.block(lv.j).start == lv.size


def test_design_matrix_parallel_bit_identical(frame23, rng):
    X = random_unit(rng, 1300)
    assert np.array_equal(design_matrix(frame23, X), design_matrix(frame23, X, workers=4))


def test_frame_kernel_diagonal_j2(frame23):
    p = SpherePoint(1.0, 2.0)
    assert frame_kernel(frame23, 2, p, p) == pytest.approx(KERNEL_DIAG_J2, rel=1e-12)


@pytest.mark.parametrize("j", [2, 3])
def test_frame_kernel_matches_explicit_sum(frame23, rng, j):
    X, Y = random_unit(rng, 50), random_unit(rng, 50)
    Ax = frame23.level_matrix(j, X)
    Ay = frame23.level_matrix(j, Y)
    explicit = np.sum(Ax * Ay, axis=1)
    closed = frame_kernel(frame23, j, X, Y)
    np.testing.assert_allclose(explicit, closed, rtol=1e-8, atol=1e-8 * np.max(np.abs(closed)))


def test_frame_kernel_vanishes_outside_band(frame23):
    # the level-2 kernel is orthogonal to P_l for l outside 2..8
    x, w = np.polynomial.legendre.leggauss(40)
    lv = frame23.level(2)
    K = np.polynomial.legendre.legval(x, lv.series(2))
    for l in (0, 1, 9, 12):
        c = np.zeros(l + 1)
        c[l] = 1
        assert abs(w @ (K * np.polynomial.legendre.legval(x, c))) < 1e-13


def test_coefficients_of_constant_vanish(frame23):
    beta = needlet_coefficients(frame23, lambda t, p: np.full_like(t, 3.0))
    assert np.max(np.abs(beta)) < 1e-12


def test_coefficients_reject_coarse_grid(frame23):
    with pytest.raises(ValueError, match="under-resolves"):
        needlet_coefficients(frame23, lambda t, p: t, n_theta=8, n_phi=16)


def test_parseval_on_tight_band(frame23, rng):
    # degrees B^J0 .. B^J are where the levels J0..J sum to one
    c = rng.standard_normal((9) ** 2)
    c[:16] = 0.0

    def f(t, p):
        return real_sh_matrix(8, t, p) @ c

    theta, phi, w = gauss_legendre_grid(40, 80)
    energy = w @ f(theta, phi) ** 2
    beta = needlet_coefficients(frame23, f)
    assert np.sum(beta ** 2) == pytest.approx(energy, rel=1e-6)


def test_energy_identity_for_a_needlet():
    frame = NeedletFrame(2.0, 2, 4)
    lv = frame.level(3)
    z = lv.nodes[7]

    def f(t, p):
        return frame.level_matrix(3, to_xyz(t, p))[:, 7]

    theta, phi, w = gauss_legendre_grid(40, 80)
    energy = w @ f(theta, phi) ** 2
    expect = lv.design.weights[7] * frame_kernel(frame, 3, z[None, :], z[None, :])[0]
    assert energy == pytest.approx(expect, rel=1e-10)
    beta = needlet_coefficients(frame, f)
    assert np.sum(beta ** 2) == pytest.approx(energy, rel=1e-6)
