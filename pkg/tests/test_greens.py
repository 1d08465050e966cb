import math

import numpy as np
import pytest
from scipy import integrate

from conftest import random_field
from oracles import apply_green_oracle, energy_oracle
from vortexpair.field import GridSpec, ScalarField, impulse, norms
from vortexpair.greens import (
    LEMMA9_CONSTANTS,
    CoincidentPointsError,
    apply_green,
    energy,
    kernel,
    kernel_log_ratio,
    objective,
    self_interaction,
    sup_bound,
    support_height_z,
    velocity,
)


def test_kernel_hand_values():
    assert kernel((0.0, 1.0), (0.0, 2.0)) == pytest.approx(math.log(9) / (4 * math.pi), rel=1e-15)
    assert kernel((0.0, 1.0), (0.0, 2.0)) == pytest.approx(0.1748496, abs=5e-8)
    assert kernel((5.0, 0.0), (1.0, 1.0)) == 0.0


def test_kernel_coincident_points():
    with pytest.raises(CoincidentPointsError):
        kernel((1.0, 1.0), (1.0, 1.0))


def test_kernel_symmetric_positive(rng):
    pts = rng.uniform([-3, 1e-3], [3, 3], size=(1000, 2, 2))
    for x, y in pts:
        k = kernel(x, y)
        assert k > 0
        assert k == kernel(y, x)
        assert kernel_log_ratio(x, y) == pytest.approx(k, rel=1e-12, abs=1e-15)


def test_self_interaction_positive():
    for h in (1e-3, 0.05, 0.5, 2.0):
        g = GridSpec.centered(h, 4, 4)
        assert np.all(self_interaction(g) > 0)


def test_apply_green_zero_and_single_cell():
    g = GridSpec.centered(0.1, 12, 10)
    assert not np.any(apply_green(ScalarField.zeros(g)).values)
    a = np.zeros(g.shape)
    a[2, 3] = 1.0
    psi = apply_green(ScalarField(g, a), method="direct")
    far = kernel((g.x1[10], g.x2[8]), (g.x1[3], g.x2[2])) * g.h**2
    assert psi.values[8, 10] == pytest.approx(far, rel=1e-13)


def test_apply_green_matches_double_loop_oracle(rng):
    g = GridSpec.centered(0.1, 16, 16)
    f = random_field(rng, g)
    want = apply_green_oracle(f)
    for method in ("direct", "fft"):
        got = apply_green(f, method=method).values
        assert np.max(np.abs(got - want)) <= 1e-10 * np.max(np.abs(want))


def test_fft_matches_direct_on_rectangular_window(rng):
    g = GridSpec(-1.3, 1.5, 1.2, 28, 12)
    f = random_field(rng, g, nonneg=False)
    d = apply_green(f, "direct").values
    q = apply_green(f, "fft").values
    assert np.max(np.abs(d - q)) <= 1e-8 * np.max(np.abs(d))


def test_apply_green_nonnegative_and_linear(rng):
    g = GridSpec.centered(0.1, 10, 8)
    f, k = random_field(rng, g), random_field(rng, g, nonneg=False)
    assert np.all(apply_green(f).values >= 0)
    al, be = 1.7, -0.4
    lhs = apply_green(f * al + k * be).values
    rhs = al * apply_green(f).values + be * apply_green(k).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


def test_energy_oracle_and_quadratic(rng):
    g = GridSpec.centered(0.125, 8, 8)
    f = random_field(rng, g)
    assert energy(f) == pytest.approx(energy_oracle(f), rel=1e-10)
    assert energy(ScalarField.zeros(g)) == 0.0
    assert energy(f * 2.0) == pytest.approx(4 * energy(f), rel=1e-12)
    assert energy(f) > 0


def test_energy_polarization(rng):
    g = GridSpec.centered(0.1, 12, 9)
    f, k = random_field(rng, g, False), random_field(rng, g, False)
    cross = float(np.sum(f.values * apply_green(k).values)) * g.cell_area
    assert energy(f + k) == pytest.approx(energy(f) + energy(k) + cross, rel=1e-10)


def test_energy_positive_definite(rng):
    # smallest eigenvalue of the discrete operator on a small grid is positive
    from oracles import green_matrix
    g = GridSpec.centered(0.1, 10, 10)
    K = green_matrix(g)
    assert np.allclose(K, K.T, rtol=0, atol=1e-15)
    assert np.linalg.eigvalsh(K).min() > 0


def test_objective_limits(rng):
    g = GridSpec.centered(0.1, 8, 8)
    f = random_field(rng, g)
    assert objective(ScalarField.zeros(g), 0.3) == 0.0
    assert objective(f, 0.0) == energy(f)
    assert objective(f, 0.2) == pytest.approx(energy(f) - 0.2 * impulse(f), rel=1e-14)


def test_objective_interaction_bound():
    # supports in R x [0, Z] a distance R apart interact by at most
    # (Z^2 / (pi R^2)) |z1|_1 |z2|_1, since log(1 + t) <= t
    g = GridSpec.centered(0.1, 120, 20)
    X1, X2 = g.mesh()
    lam = 1.0
    z1 = ScalarField(g, ((X1 + 4) ** 2 + (X2 - 0.6) ** 2 < 0.16).astype(float))
    z2 = ScalarField(g, ((X1 - 4) ** 2 + (X2 - 0.6) ** 2 < 0.16).astype(float))
    inter = float(np.sum(z1.values * apply_green(z2).values)) * g.cell_area
    whole = objective(z1 + z2, lam)
    assert whole == pytest.approx(objective(z1, lam) + objective(z2, lam) + inter, rel=1e-12)
    R = 8.0 - 0.8
    rows = np.flatnonzero((z1 + z2).values.any(axis=1))
    Z = (rows[-1] + 1) * g.h
    bound = Z**2 / (math.pi * R**2) * norms(z1).l1 * norms(z2).l1
    assert 0 < inter <= bound


def test_velocity_uniform_stream():
    g = GridSpec.centered(0.1, 6, 5)
    u1, u2 = velocity(ScalarField.zeros(g), 0.7)
    assert np.all(u1.values == 0.7) and np.all(u2.values == 0.0)


def test_velocity_wall_behaviour(rng):
    # psi0 vanishes linearly at the wall, so the wall row is O(h)
    for h in (0.1, 0.05):
        n = int(round(1.6 / h))
        g = GridSpec.centered(h, n, n)
        X1, X2 = g.mesh()
        f = ScalarField(g, np.exp(-((X1) ** 2 + (X2 - 0.8) ** 2) / 0.05))
        psi = apply_green(f).values
        assert np.max(np.abs(psi[0])) <= 2.0 * h


def test_velocity_discretely_divergence_free():
    g = GridSpec.centered(0.05, 64, 64)
    X1, X2 = g.mesh()
    f = ScalarField(g, np.exp(-((X1 - 0.2) ** 2 + (X2 - 1.5) ** 2) / 0.1))
    u1, u2 = velocity(f, 0.3)
    h = g.h
    div = ((u1.values[1:-1, 2:] - u1.values[1:-1, :-2])
           + (u2.values[2:, 1:-1] - u2.values[:-2, 1:-1])) / (2 * h)
    assert float(np.sum(div**2)) * h * h <= 1e-6


def test_sup_bound_constants_rederived():
    # int_0^1 r log^2 r dr = 1/4, the integral behind the L2 coefficient
    val, _ = integrate.quad(lambda r: r * math.log(r) ** 2, 0, 1)
    assert val == pytest.approx(0.25, abs=1e-12)
    assert LEMMA9_CONSTANTS["c_l2"] == pytest.approx(math.sqrt(2 * math.pi * 4 * val), rel=1e-12)
    assert LEMMA9_CONSTANTS["c_log"] == pytest.approx(math.log(3) + math.log(8) + math.log(9), rel=1e-15)
    assert LEMMA9_CONSTANTS["c_imp"] == 2.0


def test_sup_bound_examples():
    from vortexpair.field import NormReport
    unit = NormReport(1.0, 1.0, 1.0, 4.0, 1.0, 1.0, 2.0, 2.0)
    want = (math.log(216) + 2 + math.sqrt(2 * math.pi)) / (4 * math.pi)
    assert sup_bound(unit) == pytest.approx(want, rel=1e-15)
    assert sup_bound(unit) == pytest.approx(0.7864, abs=5e-5)
    assert support_height_z(unit, 1.0) == pytest.approx(want, rel=1e-15)
    zero = NormReport(0, 0, 0, 4.0, 0, 0, 0, 0)
    assert sup_bound(zero) == 0.0
    zs = [support_height_z(unit, lam) for lam in (0.5, 1, 2, 8, 100)]
    assert all(a > b for a, b in zip(zs, zs[1:]))
    with pytest.raises(ValueError):
        support_height_z(unit, 0.0)


def test_green_column_matches_apply_green():
    from vortexpair.greens import green_column
    g = GridSpec.centered(0.1, 7, 6)
    a = np.zeros(g.size)
    a[17] = 1.0
    col = green_column(g, 17)
    assert np.allclose(col, apply_green(ScalarField(g, a), "direct").values, rtol=1e-13, atol=0)
