import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mixedplap.energy import (EnergyBreakdown, Field, energy_and_gradient, energy_gradient,
                              eigen_residual, local_energy, lp_norm, nonlocal_energy,
                              normalize, quadratic_form_matrix, rayleigh, total_energy)
from mixedplap.errors import GridMismatch, ZeroField
from mixedplap.geometry import Ball, Box, Params, build_grid, two_balls
from mixedplap.kernel import kernel_table

P_VALUES = st.sampled_from([2.0, 2.5, 3.0, 4.0])


def _field(grid, seed):
    return Field(grid, np.random.default_rng(seed).standard_normal(grid.count))


def test_zero_field_energies(small_ball_grid):
    kt = kernel_table(small_ball_grid, Params(3.0, 0.5, 1))
    z = Field.zeros(small_ball_grid)
    assert local_energy(z, 3.0) == 0.0
    assert nonlocal_energy(z, kt) == (0.0, 0.0)
    assert total_energy(z, kt) == EnergyBreakdown(0.0, 0.0, 0.0)
    assert np.all(energy_gradient(z, kt).values == 0.0)


def test_two_cell_local_energy():
    g = build_grid(Box((0.0,), (2.0,)), 1.0)
    assert g.count == 2
    assert local_energy(Field(g, np.ones(2)), 2.0) == 2.0


def test_single_cell_nonlocal_energy():
    g = build_grid(Box((0.0,), (1.0,)), 1.0)
    kt = kernel_table(g, Params(2.0, 0.5, 1))
    assert nonlocal_energy(Field(g, np.ones(1)), kt) == (0.0, kt.w[0])


def test_hat_function_local_energy(interval_grid):
    x = interval_grid.centers[:, 0]
    hat = Field(interval_grid, 1.0 - np.abs(2 * x - 1))
    # continuum integral of |u'|^2 for the unit hat is 4
    assert local_energy(hat, 2.0) == pytest.approx(4.0, rel=0.03)


def test_cross_sum_bound_brute_force():
    h, r, d = 1.0 / 16, 1.0, 5.0
    g = build_grid(two_balls(r, d), h)
    p = 3.0
    kt = kernel_table(g, Params(p, 0.5, 1))
    x = g.centers[:, 0]
    left = x < 0
    vals = np.where(left, np.cos(x + d / 2), -np.cos(x - d / 2))
    cross = 0.0
    for i in np.flatnonzero(left):
        for j in np.flatnonzero(~left):
            cross += 2 * abs(vals[i] - vals[j]) ** p * kt.K[i, j]
    u = Field(g, vals)
    ul, ur = Field(g, np.where(left, vals, 0)), Field(g, np.where(left, 0, vals))
    # the interior sum of u splits into within-support sums and the cross sum
    within = (nonlocal_energy(ul, kt)[0] + nonlocal_energy(ur, kt)[0]
              - 2 * sum(abs(vals[i]) ** p * kt.K[i, ~left].sum() for i in np.flatnonzero(left))
              - 2 * sum(abs(vals[j]) ** p * kt.K[j, left].sum() for j in np.flatnonzero(~left)))
    assert nonlocal_energy(u, kt)[0] == pytest.approx(within + cross, rel=1e-12)
    nl, nr = left.sum(), (~left).sum()
    bound = nl * nr * np.max(np.abs(vals)) ** p * 2 ** p * (d - 2 * r) ** -(1 + p * 0.5) * h ** 2
    assert cross / 2 <= bound


def test_decoupling_decreases_with_separation():
    h, p = 1.0 / 16, 2.0
    prm = Params(p, 0.5, 1)
    gaps = []
    for d in (4.0, 8.0, 16.0, 32.0):
        g = build_grid(two_balls(1.0, d), h)
        kt = kernel_table(g, prm)
        x = g.centers[:, 0]
        left = x < 0
        bump = np.cos(np.pi / 2 * np.where(left, x + d / 2, x - d / 2))
        u = Field(g, bump)
        ul, ur = Field(g, np.where(left, bump, 0)), Field(g, np.where(left, 0, bump))
        gaps.append(abs(total_energy(u, kt).total - total_energy(ul, kt).total
                        - total_energy(ur, kt).total))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_principal_rayleigh_matches_linear_oracle(ball1d_grid):
    prm = Params(2.0, 0.5, 1)
    kt = kernel_table(ball1d_grid, prm)
    A = quadratic_form_matrix(kt)
    h = ball1d_grid.h
    evals, evecs = np.linalg.eigh(A / h)
    u = Field(ball1d_grid, evecs[:, 0])
    assert total_energy(u, kt).total / lp_norm(u, 2) ** 2 == pytest.approx(evals[0], rel=1e-8)


def test_quadratic_form_reproduces_energy(small_ball_grid):
    kt = kernel_table(small_ball_grid, Params(2.0, 0.7, 1))
    u = _field(small_ball_grid, 3)
    A = quadratic_form_matrix(kt)
    assert u.values @ A @ u.values == pytest.approx(total_energy(u, kt).total, rel=1e-12)


def _fd_max_rel_error(kt, vals):
    step = 1e-5 * np.max(np.abs(vals))
    _, grad = energy_and_gradient(vals, kt)
    fd = np.empty_like(vals)
    for i in range(vals.size):
        e = np.zeros_like(vals)
        e[i] = step
        fd[i] = (energy_and_gradient(vals + e, kt)[0] - energy_and_gradient(vals - e, kt)[0]) / (2 * step)
    return np.max(np.abs(grad - fd)) / np.max(np.abs(fd))


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_gradient_matches_central_differences(small_ball_grid, p):
    kt = kernel_table(small_ball_grid, Params(p, 0.5, 1))
    for seed in range(3):
        assert _fd_max_rel_error(kt, _field(small_ball_grid, seed).values) <= 1e-6


def test_gradient_matches_central_differences_2d():
    g = build_grid(Ball((0.0, 0.0), 0.3), 0.1)
    kt = kernel_table(g, Params(3.0, 0.4, 2))
    assert _fd_max_rel_error(kt, _field(g, 7).values) <= 1e-6


def test_gradient_linear_at_p2(small_ball_grid):
    kt = kernel_table(small_ball_grid, Params(2.0, 0.5, 1))
    u, v = _field(small_ball_grid, 1), _field(small_ball_grid, 2)
    lhs = energy_gradient(u + v, kt).values
    rhs = energy_gradient(u, kt).values + energy_gradient(v, kt).values
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * np.max(np.abs(lhs)))


@given(P_VALUES, st.integers(0, 10 ** 6))
def test_euler_identity(p, seed):
    g = build_grid(Ball((0.0,), 1.0), 1.0 / 16)
    kt = kernel_table(g, Params(p, 0.5, 1))
    vals = _field(g, seed).values
    energy, grad = energy_and_gradient(vals, kt)
    assert np.dot(grad, vals) == pytest.approx(p * energy, rel=1e-10)


@given(P_VALUES, st.floats(-50, 50).filter(lambda c: abs(c) > 1e-3), st.integers(0, 1000))
def test_homogeneity_all_parts(p, c, seed):
    g = build_grid(Ball((0.0,), 1.0), 1.0 / 16)
    kt = kernel_table(g, Params(p, 0.5, 1))
    u = _field(g, seed)
    a, b = total_energy(u * c, kt), total_energy(u, kt)
    for x, y in ((a.local, b.local), (a.nonlocal_interior, b.nonlocal_interior),
                 (a.nonlocal_exterior, b.nonlocal_exterior)):
        assert x == pytest.approx(abs(c) ** p * y, rel=1e-12)
        assert y >= 0
    assert rayleigh(u * c, kt) == pytest.approx(rayleigh(u, kt), rel=1e-12)


def test_breakdown_total_is_exact_sum(small_ball_grid):
    kt = kernel_table(small_ball_grid, Params(3.0, 0.5, 1))
    e = total_energy(_field(small_ball_grid, 5), kt)
    assert e.total == e.local + e.nonlocal_interior + e.nonlocal_exterior
    assert e.scaled(2.0).total == 2 * e.total


def test_total_dominates_parts(small_ball_grid):
    kt = kernel_table(small_ball_grid, Params(2.5, 0.5, 1))
    e = total_energy(_field(small_ball_grid, 9), kt)
    assert e.total >= e.local and e.total >= e.nonlocal_interior + e.nonlocal_exterior


def test_lp_norm_and_normalize(small_ball_grid):
    g = small_ball_grid
    ones = Field(g, np.ones(g.count))
    assert lp_norm(ones, 3.0) == pytest.approx((g.count * g.h) ** (1 / 3), rel=1e-15)
    assert lp_norm(Field.zeros(g), 2.0) == 0.0
    u = normalize(_field(g, 4), 2.5)
    assert lp_norm(u, 2.5) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ZeroField):
        normalize(Field.zeros(g), 2.0)


def test_rayleigh_scaling_and_zero(small_ball_grid):
    kt = kernel_table(small_ball_grid, Params(3.0, 0.5, 1))
    u = _field(small_ball_grid, 6)
    assert rayleigh(u * -7.0, kt) == pytest.approx(rayleigh(u, kt), rel=1e-12)
    with pytest.raises(ZeroField):
        rayleigh(Field.zeros(small_ball_grid), kt)


def test_rayleigh_bounded_below_by_lambda1(ball1d_grid):
    from mixedplap.eigensolve import solve_lambda1
    prm = Params(2.0, 0.5, 1)
    kt = kernel_table(ball1d_grid, prm)
    lam = solve_lambda1(ball1d_grid, prm).lam
    x = ball1d_grid.centers[:, 0]
    bump = Field(ball1d_grid, np.where(np.abs(x) < 0.5, 1.0, 0.0))
    assert rayleigh(bump, kt) > lam
    for seed in range(5):
        assert rayleigh(_field(ball1d_grid, seed), kt) >= lam * (1 - 1e-8)


def test_grid_mismatch_raises(small_ball_grid):
    kt = kernel_table(small_ball_grid, Params(2.0, 0.5, 1))
    other = build_grid(Ball((0.0,), 1.0), 1.0 / 8)
    with pytest.raises(GridMismatch):
        total_energy(Field.zeros(other), kt)
    with pytest.raises(GridMismatch):
        energy_gradient(Field.zeros(other), kt)


def test_residual_vanishes_for_linear_eigenpair(ball1d_grid):
    from mixedplap.eigensolve import solve_linear_spectrum
    kt = kernel_table(ball1d_grid, Params(2.0, 0.5, 1))
    lam, u = solve_linear_spectrum(ball1d_grid, 0.5, 1)[0]
    assert eigen_residual(u, kt, lam) < 1e-10
