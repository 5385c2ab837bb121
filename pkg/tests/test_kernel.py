import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from mixedplap.errors import GridMismatch, PreconditionViolated
from mixedplap.geometry import Ball, Box, Field, Params, build_grid
from mixedplap.kernel import (assemble_kernel, calibrate_cp, check_lemma29_part1,
                              cell_integral, far_field_ball, j_p, kernel_table, lemma29_part2_ratio,
                              monotonicity_gap, outside_box_integral, tail)

finite = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.mark.parametrize("t,p,expected", [(-3.0, 2, -3.0), (2.0, 3, 4.0), (-2.0, 4, -8.0),
                                          (0.0, 2.5, 0.0), (0.0, 3, 0.0)])
def test_j_p_values(t, p, expected):
    assert j_p(t, p) == expected


@given(finite, st.sampled_from([2.0, 2.5, 3.0, 4.0, 5.5]))
def test_j_p_odd(t, p):
    assert j_p(-t, p) == -j_p(t, p)


@given(finite, finite, st.sampled_from([2.0, 2.5, 3.0, 4.0]))
def test_j_p_monotone(a, b, p):
    lo, hi = min(a, b), max(a, b)
    assert j_p(lo, p) <= j_p(hi, p)


def test_far_field_ball_closed_form():
    assert far_field_ball(1.0, 1, 1.0) == 2.0


def test_adjacent_pair_weight():
    h = 0.1
    g = build_grid(Box((0.0,), (2 * h,)), h)
    kt = assemble_kernel(g, Params(2.0, 0.5, 1))
    assert g.count == 2
    assert kt.K[0, 1] == pytest.approx(h ** (1 - 1.0), rel=1e-14)
    assert kt.K[0, 0] == 0.0


def _outside_interval(x, lo, hi, alpha):
    # exact integral of |x - y|^-(1 + alpha) over y outside (lo, hi)
    f = lambda y: abs(x - y) ** (-1 - alpha)
    left = integrate.quad(f, -np.inf, lo)[0]
    right = integrate.quad(f, hi, np.inf)[0]
    return left + right


def test_centre_exterior_weight_matches_quadrature():
    h = 0.1
    g = build_grid(Ball((0.0,), 1.0), h)
    kt = kernel_table(g, Params(2.0, 0.5, 1))
    i = int(np.argmin(np.abs(g.centers[:, 0] - 0.05)))
    w_over_h = kt.w[i] / h
    # continuum complement of the unit ball
    assert w_over_h == pytest.approx(4.0, rel=0.05)
    # complement of the union of active cells, integrated adaptively
    lo = g.centers[:, 0].min() - h / 2
    hi = g.centers[:, 0].max() + h / 2
    oracle = 2 * _outside_interval(g.centers[i, 0], lo, hi, 1.0)
    assert w_over_h == pytest.approx(oracle, rel=2e-3)


def _ray_distance(x, y, lx, ly, th):
    c, s = math.cos(th), math.sin(th)
    tx = (lx - x) / c if c > 0 else (-x / c if c < 0 else math.inf)
    ty = (ly - y) / s if s > 0 else (-y / s if s < 0 else math.inf)
    return min(tx, ty)


@pytest.mark.parametrize("pt,alpha", [((0.3, 0.6), 1.0), ((0.05, 0.9), 1.5), ((0.5, 0.25), 0.6)])
def test_outside_box_integral_against_polar_quadrature(pt, alpha):
    lx, ly = 1.0, 0.5 if pt[1] < 0.5 else 1.0
    x, y = pt
    corners = sorted(math.atan2(cy - y, cx - x) % (2 * math.pi)
                     for cx in (0, lx) for cy in (0, ly))
    oracle = integrate.quad(lambda th: _ray_distance(x, y, lx, ly, th) ** -alpha / alpha,
                            0, 2 * math.pi, points=corners, limit=200, epsabs=0, epsrel=1e-12)[0]
    got = outside_box_integral(np.array([pt]), np.array([lx, ly]), alpha)[0]
    assert got == pytest.approx(oracle, rel=1e-9)


def test_outside_interval_closed_form():
    x, L, alpha = 0.3, 1.0, 0.8
    got = outside_box_integral(np.array([[x]]), np.array([L]), alpha)[0]
    assert got == pytest.approx(_outside_interval(x, 0.0, L, alpha), rel=1e-9)


@pytest.mark.parametrize("off,alpha", [((0.1, 0.0), 1.0), ((0.1, 0.1), 1.5),
                                       ((-0.3, 0.2), 0.6), ((0.0, -0.2), 1.3)])
def test_cell_integral_2d_against_quadrature(off, alpha):
    h, expo = 0.1, 2 + alpha
    oracle = integrate.dblquad(lambda y, x: (x * x + y * y) ** (-expo / 2),
                               off[0] - h / 2, off[0] + h / 2, off[1] - h / 2, off[1] + h / 2,
                               epsabs=0, epsrel=1e-12)[0]
    assert cell_integral(np.array(off), h, alpha) == pytest.approx(oracle, rel=1e-11)


@pytest.mark.parametrize("c,alpha", [(0.1, 1.0), (-0.2, 1.5), (40.0, 0.7)])
def test_cell_integral_1d_against_quadrature(c, alpha):
    h = 0.1
    oracle = integrate.quad(lambda y: abs(y) ** -(1 + alpha), c - h / 2, c + h / 2,
                            epsabs=0, epsrel=1e-13)[0]
    assert cell_integral(np.array([c]), h, alpha) == pytest.approx(oracle, rel=1e-12)


@pytest.mark.parametrize("shape,h,tol", [(Ball((0.0,), 1.0), 1 / 64, 1e-13),
                                         (Ball((0.0, 0.0), 0.5), 1 / 20, 1e-6)])
def test_exterior_weight_independent_of_window(shape, h, tol):
    prm = Params(3.0, 0.5, shape.dim)
    narrow = assemble_kernel(build_grid(shape, h), prm).w
    wide = assemble_kernel(build_grid(shape, h, margin=10 * h), prm).w
    assert np.max(np.abs(narrow / wide - 1)) < tol


def test_kernel_table_invariants():
    g = build_grid(Ball((0.0, 0.0), 0.5), 0.1)
    kt = assemble_kernel(g, Params(3.0, 0.3, 2))
    assert np.array_equal(kt.K, kt.K.T)
    off = ~np.eye(g.count, dtype=bool)
    assert np.all(kt.K[off] > 0) and np.all(np.isfinite(kt.K))
    assert np.all(kt.w > 0)


def test_kernel_independent_of_worker_count():
    g = build_grid(Ball((0.0, 0.0), 0.6), 0.02)
    p = Params(2.0, 0.5, 2)
    a, b = assemble_kernel(g, p, workers=1), assemble_kernel(g, p, workers=3)
    assert np.array_equal(a.K, b.K) and np.array_equal(a.w, b.w)


def test_grid_mismatch():
    kt = kernel_table(build_grid(Ball((0.0,), 1.0), 0.1), Params(2.0, 0.5, 1))
    with pytest.raises(GridMismatch):
        kt.check(build_grid(Ball((0.0,), 1.0), 0.05))


# tail ----------------------------------------------------------------------

def test_tail_zero_when_support_inside_ball():
    g = build_grid(Ball((0.0,), 1.0), 0.1)
    u = Field(g, np.ones(g.count))
    assert tail(u, (0.0,), 2.0, g, Params(2.0, 0.5, 1)) == 0.0


def test_tail_single_cell():
    h, rho = 0.1, 0.5
    g = build_grid(Box((0.0,), (2.0,)), h)
    i = int(np.argmin(np.abs(g.centers[:, 0] - 1.05)))
    z = (g.centers[i, 0] - 2 * rho,)
    vals = np.zeros(g.count)
    vals[i] = 1.0
    got = tail(Field(g, vals), z, rho, g, Params(2.0, 0.5, 1))
    assert got == pytest.approx(math.sqrt(h / 4), rel=1e-12)


def test_tail_rejects_nonpositive_radius():
    g = build_grid(Ball((0.0,), 1.0), 0.1)
    with pytest.raises(PreconditionViolated):
        tail(Field(g, np.ones(g.count)), (0.0,), 0.0, g, Params(2.0, 0.5, 1))


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_tail_brute_force_and_bound(p):
    from mixedplap.eigensolve import solve_lambda1
    g = build_grid(Ball((0.0, 0.0), 0.5), 1.0 / 20)
    prm = Params(p, 0.5, 2)
    u = solve_lambda1(g, prm).eigenfunction
    z = np.array([0.1, 0.0])
    values = []
    for rho in (0.1, 0.2, 0.3):
        brute = 0.0
        for x, val in zip(g.centers, u.values):
            r = math.dist(x, z)
            if r > rho:
                brute += abs(val) ** p * r ** -(2 + p * 0.5) * g.cell_measure
        brute = (rho ** p * brute) ** (1 / p)
        got = tail(u, z, rho, g, prm)
        assert got == pytest.approx(brute, rel=1e-10)
        # |x - z| > rho gives Tail <= rho^(1 - n/p - s) ||u||_p
        assert got <= rho ** (1 - 2 / p - 0.5) * 1.0
        values.append(got)


@given(st.floats(0.01, 100.0))
def test_tail_positively_homogeneous(c):
    g = build_grid(Ball((0.0,), 1.0), 0.1)
    prm = Params(3.0, 0.4, 1)
    u = Field(g, np.linspace(0.1, 2.0, g.count))
    assert tail(u * c, (0.2,), 0.3, g, prm) == pytest.approx(c * tail(u, (0.2,), 0.3, g, prm),
                                                             rel=1e-12)


# scalar inequalities --------------------------------------------------------

@pytest.mark.parametrize("a,b,p", [(1.0, 0.0, 3), (1.0, -1.0, 2), (2.0, -3.0, 4)])
def test_lemma29_part1_examples(a, b, p):
    assert check_lemma29_part1(a, b, p)


def test_lemma29_part1_precondition():
    with pytest.raises(PreconditionViolated):
        check_lemma29_part1(1.0, 1.0, 3)


@given(st.floats(-1e3, 1e3), st.floats(0, 1e3), st.sampled_from([1.2, 1.5, 2.0, 2.5, 3.0, 4.0]))
def test_lemma29_part1_property(a, mag, p):
    b = -math.copysign(mag, a)
    assert check_lemma29_part1(a, b, p)


@pytest.mark.parametrize("a,b,p,expected", [(1.0, 1.0, 2, -2.0), (1.0, -1.0, 2, 2.0)])
def test_lemma29_part2_examples(a, b, p, expected):
    assert lemma29_part2_ratio(a, b, p) == pytest.approx(expected, rel=1e-15)


def test_lemma29_part2_precondition():
    with pytest.raises(PreconditionViolated):
        lemma29_part2_ratio(0.0, 1.0, 3)


@pytest.mark.parametrize("p", [2.0, 2.5, 3.0, 4.0])
def test_sampled_cp_agrees_with_fine_angle_sup(p):
    # the ratio is 0-homogeneous, so its sup is a sup over the angle of (a, b)
    phi = np.linspace(0, 2 * np.pi, 2_000_001)
    a, b = np.cos(phi), np.sin(phi)
    ok = np.abs(a * b) > 1e-12
    fine = np.max(lemma29_part2_ratio(a[ok], b[ok], p))
    sampled = calibrate_cp(p, 10 ** 6, seed=0)
    assert sampled <= fine * (1 + 1e-6)
    assert sampled >= fine * 0.99


@given(finite, finite, st.sampled_from([2.0, 2.5, 3.0, 4.0]))
def test_monotonicity_gap_nonnegative(t1, t2, p):
    assert monotonicity_gap(t1, t2, p) >= -1e-12 * max(1.0, abs(t1 - t2) ** p)


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_monotonicity_constant_is_sharp(p):
    # sampling oracle for C = 2^(p-2): the ratio bottoms out at t1 = -t2
    rng = np.random.default_rng(1)
    t1, t2 = rng.standard_normal((2, 200_000))
    ratio = (j_p(t1, p) - j_p(t2, p)) * (t1 - t2) / np.abs(t1 - t2) ** p
    assert ratio.min() >= 2.0 ** (2 - p) * (1 - 1e-12)
    assert monotonicity_gap(1.0, -1.0, p) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("t1,t2,p,expected", [(0.7, 0.7, 3, 0.0), (1.0, -1.0, 2, 0.0),
                                              (1.0, 0.0, 4, 0.75)])
def test_monotonicity_gap_examples(t1, t2, p, expected):
    assert monotonicity_gap(t1, t2, p) == pytest.approx(expected, abs=1e-15)
