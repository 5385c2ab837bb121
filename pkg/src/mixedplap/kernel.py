"""Singular interaction kernel, exterior weights and scalar inequalities.

The nonlocal energy of a cell field ``u`` (zero outside the domain) is

    sum_{i != j} |u_i - u_j|^p K_ij  +  sum_i |u_i|^p w_i

where ``K_ij = |x_i - x_j|^-(n+ps) h^2n`` is the midpoint rule for the
Gagliardo double integral over the domain and ``w_i`` is twice the integral
of the kernel over the complement, scaled by the cell measure.  The
complement of the union of active cells is split into the inactive cells of
a window (the active bounding box grown by the margin) and everything
outside the window.  Both parts are integrated exactly (in 2D, cells more
than a few steps away use a 3x3 Gauss rule), so ``w`` does not depend on
where the window ends.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import GridMismatch, PreconditionViolated
from .geometry import Field, Grid, Params

# rows x cols elements handled per block of pairwise work
BLOCK_ELEMENTS = 1 << 20


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))


def row_blocks(nrows: int, ncols: int) -> list:
    """Fixed partition of ``range(nrows)``; independent of the worker count."""
    step = max(1, BLOCK_ELEMENTS // max(ncols, 1))
    return [(a, min(a + step, nrows)) for a in range(0, nrows, step)]


def block_map(fn, blocks, workers=None) -> list:
    """Apply ``fn(a, b)`` to every block, returning results in block order."""
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(blocks) == 1:
        return [fn(a, b) for a, b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), blocks))


def abs_pow(t: np.ndarray, p: float) -> np.ndarray:
    """|t|^p with cheap paths for small integer exponents."""
    if p == 2:
        return t * t
    a = np.abs(t)
    if p == 3:
        return a * a * a
    if p == 4:
        t2 = t * t
        return t2 * t2
    return a ** p


def j_p(t, p: float):
    """J_p(t) = |t|^(p-2) t, extended by 0 at t = 0."""
    t = np.asarray(t, dtype=float)
    if p == 2:
        out = t.copy()
    elif p == 3:
        out = np.abs(t) * t
    elif p == 4:
        out = t * t * t
    else:
        a = np.abs(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(a > 0, a ** (p - 2) * t, 0.0)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# exterior integrals
# --------------------------------------------------------------------------

def far_field_ball(radius, n: int, alpha: float):
    """Integral of |y|^-(n+alpha) over |y| > radius."""
    sigma = {1: 2.0, 2: 2.0 * math.pi}[n]
    return sigma * np.asarray(radius, dtype=float) ** (-alpha) / alpha


def _cos_power_integral(e, d, alpha):
    # integral of cos^alpha over [0, atan(e/d)] via the incomplete beta function
    b = 0.5 * (alpha + 1.0)
    x = e * e / (e * e + d * d)
    return 0.5 * special.beta(0.5, b) * special.betainc(0.5, b, x)


def outside_box_integral(points: np.ndarray, extent: np.ndarray, alpha: float) -> np.ndarray:
    """Integral of |x - y|^-(n+alpha) over y outside the box [0, extent].

    ``points`` are (N, n) coordinates strictly inside the box.  In 2D the
    integral is written in polar coordinates around ``x`` as
    (1/alpha) * int rho(theta)^-alpha dtheta, where rho is the distance to
    the box boundary along the ray; each side reduces to an incomplete beta
    function.
    """
    pts = np.atleast_2d(points)
    n = pts.shape[1]
    if n == 1:
        x = pts[:, 0]
        return (x ** -alpha + (extent[0] - x) ** -alpha) / alpha
    x, y = pts[:, 0], pts[:, 1]
    lx, ly = extent
    total = np.zeros(len(pts))
    # (distance to side, offsets to the side's two corners)
    for d, e1, e2 in ((lx - x, y, ly - y), (x, y, ly - y),
                      (ly - y, x, lx - x), (y, x, lx - x)):
        total += d ** -alpha * (_cos_power_integral(e1, d, alpha)
                                + _cos_power_integral(e2, d, alpha))
    return total / alpha


# cells within this many lattice steps (Chebyshev) get the 2D closed form
EXACT_CELL_REACH = 4
_GAUSS3 = np.polynomial.legendre.leggauss(3)


def _side_integral(d, e1, e2, alpha):
    # d * int_{e1}^{e2} (d^2 + t^2)^-(2+alpha)/2 dt for a side at signed offset d
    ad = np.abs(d)
    g = lambda e: np.sign(e) * _cos_power_integral(np.abs(e), ad, alpha)
    return np.sign(d) * ad ** -alpha * (g(e2) - g(e1))


def cell_integral(offset: np.ndarray, h: float, alpha: float) -> np.ndarray:
    """Integral of |y|^-(n+alpha) over cells of side ``h`` centred at ``offset``.

    ``offset`` has shape (..., n); no cell may contain the origin.  In 2D the
    divergence theorem turns the cell integral into a sum over its four sides,
    each an incomplete beta function.
    """
    off = np.asarray(offset, dtype=float)
    if off.shape[-1] == 1:
        c = np.abs(off[..., 0])
        t = 0.5 * h / c
        # c^-alpha ((1 - t)^-alpha - (1 + t)^-alpha), free of cancellation
        return c ** -alpha * (np.expm1(-alpha * np.log1p(-t))
                              - np.expm1(-alpha * np.log1p(t))) / alpha
    x, y = off[..., 0], off[..., 1]
    x0, x1, y0, y1 = x - h / 2, x + h / 2, y - h / 2, y + h / 2
    flux = (_side_integral(x1, y0, y1, alpha) - _side_integral(x0, y0, y1, alpha)
            + _side_integral(y1, x0, x1, alpha) - _side_integral(y0, x0, x1, alpha))
    return -flux / alpha


def _gauss_cell_integral(offset: np.ndarray, h: float, expo: float) -> np.ndarray:
    nodes, weights = _GAUSS3
    out = np.zeros(offset.shape[:-1])
    for a, wa in zip(nodes, weights):
        for b, wb in zip(nodes, weights):
            dx = offset[..., 0] + 0.5 * h * a
            dy = offset[..., 1] + 0.5 * h * b
            out += wa * wb * (dx * dx + dy * dy) ** (-0.5 * expo)
    return out * (0.25 * h * h)


def _complement_cells_integral(rows: np.ndarray, cols: np.ndarray, h: float,
                               expo: float, alpha: float) -> np.ndarray:
    # sum over the cells ``cols`` of the kernel integral seen from each row cell
    diff = (cols[None, :, :] - rows[:, None, :]).astype(float)
    if rows.shape[1] == 1:
        return cell_integral(diff * h, h, alpha).sum(axis=1)
    vals = _gauss_cell_integral(diff * h, h, expo)
    near = np.max(np.abs(diff), axis=2) <= EXACT_CELL_REACH
    vals[near] = cell_integral(diff[near] * h, h, alpha)
    return vals.sum(axis=1)


# --------------------------------------------------------------------------
# kernel table
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KernelTable:
    """Pairwise weights ``K`` (zero diagonal) and exterior weights ``w``."""
    grid: Grid
    params: Params
    K: np.ndarray
    w: np.ndarray

    def check(self, grid: Grid):
        if grid is not self.grid and grid.key() != self.grid.key():
            raise GridMismatch("field and kernel table live on different grids")


def _pair_block(idx_rows, idx_cols, scale, expo):
    diff = idx_rows[:, None, :] - idx_cols[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff).astype(float)
    with np.errstate(divide="ignore"):
        out = scale * d2 ** (-0.5 * expo)
    out[d2 == 0] = 0.0
    return out


def assemble_kernel(grid: Grid, params: Params, workers=None) -> KernelTable:
    """Assemble pairwise and exterior weights; O(N^2) in the active count."""
    if grid.n != params.n:
        raise GridMismatch(f"grid dimension {grid.n} != params dimension {params.n}")
    n, h = grid.n, grid.h
    expo = params.kernel_exponent
    alpha = params.p * params.s
    idx = grid.index
    N = grid.count

    K = np.empty((N, N))

    def fill(a, b):
        K[a:b] = _pair_block(idx[a:b], idx, h ** (2 * n - expo), expo)

    block_map(fill, row_blocks(N, N), workers)

    # complement quadrature window: active bounding box plus the margin,
    # so the weights depend only on the active pattern
    mc = max(2, int(math.floor(grid.margin / h + 1e-9)))
    lo = np.maximum(idx.min(axis=0) - mc, 0)
    hi = np.minimum(idx.max(axis=0) + mc + 1, np.asarray(grid.dims))
    wdims = tuple(int(v) for v in hi - lo)
    inside = np.ones(wdims, dtype=bool)
    inside[tuple((idx - lo).T)] = False
    out_idx = np.argwhere(inside) + lo
    collar = np.zeros(N)
    if len(out_idx):
        def collar_sum(a, b):
            collar[a:b] = _complement_cells_integral(idx[a:b], out_idx, h, expo, alpha)

        block_map(collar_sum, row_blocks(N, 9 * len(out_idx)), workers)
    far = outside_box_integral((idx - lo + 0.5) * h, np.asarray(wdims) * h, alpha)
    w = 2.0 * grid.cell_measure * (collar + far)
    K.setflags(write=False)
    w.setflags(write=False)
    return KernelTable(grid, params, K, w)


def kernel_table(grid: Grid, params: Params, workers=None) -> KernelTable:
    """Cached :func:`assemble_kernel`; tables depend only on n + ps."""
    key = ("kernel", params.kernel_exponent, params.p * params.s)
    kt = grid._cache.get(key)
    if kt is None:
        kt = assemble_kernel(grid, params, workers)
        grid._cache[key] = kt
    elif kt.params != params:
        kt = KernelTable(grid, params, kt.K, kt.w)
    return kt


def tail(u: Field, z, rho: float, grid: Grid, params: Params) -> float:
    """Weighted L^p mass of ``u`` outside the ball B_rho(z), scaled by rho."""
    if not rho > 0:
        raise PreconditionViolated(f"rho must be positive, got {rho}")
    vals = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    dist = np.linalg.norm(grid.centers - np.asarray(z, dtype=float), axis=1)
    out = dist > rho
    if not np.any(out):
        return 0.0
    p = params.p
    total = np.sum(abs_pow(vals[out], p) * dist[out] ** -params.kernel_exponent)
    return float((rho ** p * total * grid.cell_measure) ** (1.0 / p))


# --------------------------------------------------------------------------
# scalar inequalities
# --------------------------------------------------------------------------

def check_lemma29_part1(a, b, p: float, rtol: float = 1e-12):
    """Lower bound for J_p(a - b) a when a and b have opposite signs.

    Returns a bool (or a bool array for array input).  Comparisons allow a
    relative slack of ``rtol`` for the equality cases.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not p > 1:
        raise PreconditionViolated(f"p must exceed 1, got {p}")
    if np.any(a * b > 0):
        raise PreconditionViolated("requires a*b <= 0")
    left = j_p(a - b, p) * a
    if p <= 2:
        d = np.abs(a - b)
        # a = b forces a = b = 0 here, where the correction term vanishes
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = np.where(d > 0, d ** (p - 2) * a * b, 0.0)
        right = abs_pow(a, p) - (p - 1) * corr
    else:
        right = abs_pow(a, p) - (p - 1) * np.abs(a) ** (p - 2) * a * b
    ok = left >= right - rtol * np.maximum(np.abs(left), np.abs(right))
    return ok if ok.ndim else bool(ok)


def lemma29_part2_ratio(a, b, p: float):
    """(|a-b|^p - |a|^p - |b|^p) / ((a^2+b^2)^((p-2)/2) |ab|)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not p >= 2:
        raise PreconditionViolated(f"p must be >= 2, got {p}")
    if np.any(a * b == 0):
        raise PreconditionViolated("requires a*b != 0")
    # 0-homogeneous: with t = min/max of |a|, |b| the ratio is
    # ((1 -+ t)^p - 1 - t^p) / ((1 + t^2)^((p-2)/2) t), evaluated without cancellation
    x, y = np.abs(a), np.abs(b)
    t = np.minimum(x, y) / np.maximum(x, y)
    sgn = np.where(a * b < 0, 1.0, -1.0)
    with np.errstate(divide="ignore"):  # t = 1, a = b: log1p(-1) = -inf is intended
        num = np.expm1(p * np.log1p(sgn * t)) - t ** p
    out = num / ((1.0 + t * t) ** (0.5 * (p - 2)) * t)
    return out if out.ndim else float(out)


def calibrate_cp(p: float, samples: int = 10 ** 6, seed: int = 0) -> float:
    """Sampled supremum of :func:`lemma29_part2_ratio` (log-uniform magnitudes)."""
    rng = np.random.default_rng(seed)
    mag = 10.0 ** rng.uniform(-6, 6, size=(2, samples))
    sign = rng.choice([-1.0, 1.0], size=(2, samples))
    a, b = mag * sign
    return float(np.max(lemma29_part2_ratio(a, b, p)))


def monotonicity_gap(t1, t2, p: float):
    """(J_p(t1) - J_p(t2))(t1 - t2) - 2^(2-p) |t1 - t2|^p, nonnegative for p >= 2."""
    if not p >= 2:
        raise PreconditionViolated(f"p must be >= 2, got {p}")
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    out = (j_p(t1, p) - j_p(t2, p)) * (t1 - t2) - 2.0 ** (2 - p) * abs_pow(t1 - t2, p)
    return out if np.ndim(out) else float(out)
