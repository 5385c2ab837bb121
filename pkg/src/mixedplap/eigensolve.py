"""First and second Dirichlet eigenvalues of the discrete mixed operator.

``solve_lambda1`` minimizes the Rayleigh quotient on the L^p sphere by
projected descent: a limited-memory quasi-Newton direction (preconditioned
with the p = 2 quadratic form), Armijo backtracking on the quotient and
renormalization after every step, so the sequence of quotients is
nonincreasing.

For p = 2 the problem is a symmetric generalized eigenproblem and
``solve_linear_spectrum`` solves it densely.  For p > 2 the second eigenvalue
is bracketed: an upper bound is the largest quotient along an odd loop
``theta -> c(theta) v - s(theta) w`` built from two disjointly supported
nonnegative fields, and a lower bound is the larger first eigenvalue of the
two nodal sets of the loop's maximizer.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .energy import (Field, _local_energy_grad, _nonlocal_energy_grad,
                     eigen_residual, lp_norm, quadratic_form_matrix,
                     rayleigh_gradient)
from .errors import (DegenerateLoop, DimensionTooSmall, NoSignChange,
                     NotConverged, ZeroField)
from .geometry import Grid, Params, boundary_distance, components
from .kernel import KernelTable, abs_pow, block_map, kernel_table, row_blocks

log = logging.getLogger(__name__)

GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-12
    max_iterations: int = 3000
    initial_step: float = 1.0
    backtrack: float = 0.5
    seed: int = 0
    memory: int = 12
    armijo: float = 1e-4
    loop_points: int = 256
    refine_rounds: int = 2
    workers: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if not self.initial_step > 0:
            raise ValueError("initial step must be positive")


@dataclass
class EigenResult:
    lam: float
    eigenfunction: Field
    iterations: int
    residual: float
    converged: bool
    bracket_lower: float | None = None
    bracket_upper: float | None = None
    history: list = field(default_factory=list, repr=False)


# --------------------------------------------------------------------------
# first eigenvalue
# --------------------------------------------------------------------------

def _preconditioner(kt: KernelTable):
    key = ("chol", kt.params.kernel_exponent, kt.params.p * kt.params.s)
    fac = kt.grid._cache.get(key)
    if fac is None:
        fac = linalg.cho_factor(quadratic_form_matrix(kt), lower=True)
        kt.grid._cache[key] = fac
    return fac


def _normalize(vals, p, hn):
    nrm = (math.fsum(abs_pow(vals, p)) * hn) ** (1.0 / p)
    if nrm == 0:
        raise ZeroField("iterate collapsed to zero")
    return vals / nrm


def _two_loop(g, S, Y, precond, gamma):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.dot(s, q)
        alphas.append((a, rho))
        q -= a * y
    r = gamma * precond(q)
    for (s, y), (a, rho) in zip(zip(S, Y), reversed(alphas)):
        b = rho * np.dot(y, r)
        r += (a - b) * s
    return r


def _descend(kt: KernelTable, u0: np.ndarray, opts: SolverOptions):
    """Monotone projected quasi-Newton descent of the Rayleigh quotient."""
    p = kt.params.p
    hn = kt.grid.cell_measure
    fac = _preconditioner(kt)
    precond = lambda g: linalg.cho_solve(fac, g)

    u = _normalize(u0, p, hn)
    R, gR, _ = rayleigh_gradient(u, kt, opts.workers)
    history = [R]
    S, Y = [], []
    gamma = 1.0 / p
    converged = False
    it = 0
    while it < opts.max_iterations:
        it += 1
        d = -_two_loop(gR, S, Y, precond, gamma)
        slope = float(np.dot(gR, d))
        if not slope < 0:
            S.clear(), Y.clear()
            d = -gamma * precond(gR)
            slope = float(np.dot(gR, d))
            if not slope < 0:
                converged = True
                break
        t = opts.initial_step
        accepted = None
        for _ in range(60):
            trial = u + t * d
            try:
                Rt, gt, _ = rayleigh_gradient(trial, kt, opts.workers)
            except ZeroField:
                Rt = math.inf
            if Rt <= R + opts.armijo * t * slope:
                accepted = (trial, Rt, gt)
                break
            t *= opts.backtrack
        if accepted is None:
            # no decrease left at working precision
            converged = True
            it -= 1
            break
        trial, Rt, gt = accepted
        scale = (math.fsum(abs_pow(trial, p)) * hn) ** (1.0 / p)
        u_new = trial / scale
        # R is 0-homogeneous, its gradient (-1)-homogeneous
        g_new = gt * scale
        s_vec, y_vec = u_new - u, g_new - gR
        sy = float(np.dot(s_vec, y_vec))
        if sy > 1e-16 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec), Y.append(y_vec)
            if len(S) > opts.memory:
                S.pop(0), Y.pop(0)
            py = precond(y_vec)
            gamma = sy / float(np.dot(y_vec, py))
        decrease = (R - Rt) / abs(R)
        u, R, gR = u_new, Rt, g_new
        history.append(R)
        if decrease < opts.tol:
            converged = True
            break
    return u, R, it, converged, history


def solve_lambda1(grid: Grid, params: Params, opts: SolverOptions | None = None,
                  initial: np.ndarray | None = None, kt: KernelTable | None = None) -> EigenResult:
    """Principal eigenpair by projected Rayleigh-quotient descent.

    The default start is the (positive) distance to the complement.  The
    returned eigenfunction is L^p-normalized with nonnegative sum.
    Raises :class:`NotConverged` carrying the best iterate on hitting the
    iteration cap.
    """
    opts = opts or SolverOptions()
    kt = kt or kernel_table(grid, params, opts.workers)
    u0 = boundary_distance(grid) if initial is None else np.asarray(initial, dtype=float)
    u, R, it, converged, history = _descend(kt, u0, opts)
    # |u| is admissible and never has a larger quotient
    u = np.abs(u)
    R = rayleigh_gradient(u, kt, opts.workers)[0]
    ef = Field(grid, u)
    res = EigenResult(R, ef, it, eigen_residual(ef, kt, R, opts.workers), converged,
                      history=history)
    if not converged:
        raise NotConverged(f"lambda1 descent hit {opts.max_iterations} iterations", res)
    return res


def _lambda1_value(grid: Grid, params: Params, opts: SolverOptions, cache: dict | None = None):
    """lambda1 result, tolerating the iteration cap (descent gives an upper bound)."""
    key = grid.key()
    if cache is not None and key in cache:
        return cache[key]
    try:
        res = solve_lambda1(grid, params, opts)
    except NotConverged as exc:
        log.warning("sub-problem not converged: %s", exc)
        res = exc.result
    if cache is not None:
        cache[key] = res
    return res


# --------------------------------------------------------------------------
# linear spectrum
# --------------------------------------------------------------------------

def solve_linear_spectrum(grid: Grid, s: float, k: int, kt: KernelTable | None = None) -> list:
    """k smallest eigenpairs of the p = 2 problem, eigenfunctions L^2-orthonormal."""
    if k < 1 or k > grid.count:
        raise DimensionTooSmall(f"need 1 <= k <= {grid.count}, got k = {k}")
    kt = kt or kernel_table(grid, Params(2.0, s, grid.n))
    A = quadratic_form_matrix(kt)
    evals, evecs = linalg.eigh(A, subset_by_index=[0, k - 1])
    hn = grid.cell_measure
    out = []
    for lam, vec in zip(evals, evecs.T):
        vec = vec / math.sqrt(hn)
        pivot = np.argmax(np.abs(vec))
        if vec[pivot] < 0:
            vec = -vec
        out.append((float(lam / hn), Field(grid, vec)))
    if out and np.sum(out[0][1].values) < 0:
        out[0] = (out[0][0], -out[0][1])
    return out


# --------------------------------------------------------------------------
# second eigenvalue, p > 2
# --------------------------------------------------------------------------

@dataclass
class LoopMaximum:
    value: float
    theta: float
    maximizer: Field
    skipped: list


def loop_point(v: np.ndarray, w: np.ndarray, theta: float, p: float) -> np.ndarray:
    """sgn(c)|c|^(2/p) v - sgn(s)|s|^(2/p) w with (c, s) = (cos, sin)(theta)."""
    c, s = math.cos(theta), math.sin(theta)
    a = math.copysign(abs(c) ** (2.0 / p), c)
    b = math.copysign(abs(s) ** (2.0 / p), s)
    return a * v - b * w


def _quotient(vals, kt, workers):
    p = kt.params.p
    mass = math.fsum(abs_pow(vals, p)) * kt.grid.cell_measure
    if mass == 0:
        return None
    el = _local_energy_grad(kt.grid, vals, p, False)[0]
    ei, ee, _ = _nonlocal_energy_grad(kt, vals, False, workers)
    return (el + ei + ee) / mass


class _LoopQuotient:
    """Rayleigh quotient along theta -> loop_point(v, w, theta).

    With disjoint supports A = {v != 0}, B = {w != 0} the interior pair sum
    splits into |a|^p P_v + |b|^p P_w + 2 sum_{A x B} |a v_i + b w_j|^p K_ij,
    so only the cross block has to be re-evaluated per angle.
    """

    def __init__(self, kt: KernelTable, v: np.ndarray, w: np.ndarray, workers=None):
        self.kt, self.v, self.w, self.workers = kt, v, w, workers
        self.p = kt.params.p
        A, B = v != 0, w != 0
        self.split = not np.any(A & B)
        if self.split:
            ia, ib = np.flatnonzero(A), np.flatnonzero(B)
            self.va, self.wb = v[ia], w[ib]
            self.KAB = kt.K[np.ix_(ia, ib)]
            p = self.p
            self.Pv = (_nonlocal_energy_grad(kt, v, False, workers)[0]
                       - 2.0 * math.fsum(abs_pow(self.va, p) * self.KAB.sum(axis=1)))
            self.Pw = (_nonlocal_energy_grad(kt, w, False, workers)[0]
                       - 2.0 * math.fsum(abs_pow(self.wb, p) * self.KAB.sum(axis=0)))

    def __call__(self, theta: float):
        p = self.p
        f = loop_point(self.v, self.w, theta, p)
        if not self.split:
            return _quotient(f, self.kt, self.workers)
        mass = math.fsum(abs_pow(f, p)) * self.kt.grid.cell_measure
        if mass == 0:
            return None
        c, s = math.cos(theta), math.sin(theta)
        a = math.copysign(abs(c) ** (2.0 / p), c)
        b = math.copysign(abs(s) ** (2.0 / p), s)
        va, wb, KAB = self.va, self.wb, self.KAB

        def cross(lo, hi):
            return float(np.sum(abs_pow(a * va[lo:hi, None] + b * wb[None, :], p) * KAB[lo:hi]))

        parts = block_map(cross, row_blocks(len(va), len(wb)), self.workers)
        energy = (_local_energy_grad(self.kt.grid, f, p, False)[0]
                  + abs(a) ** p * self.Pv + abs(b) ** p * self.Pw
                  + 2.0 * math.fsum(parts) + math.fsum(abs_pow(f, p) * self.kt.w))
        return energy / mass


def _golden_max(fun, a, b, iters=26):
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = fun(x1), fun(x2)
    for _ in range(iters):
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = fun(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = fun(x2)
    return (x1, f1) if f1 >= f2 else (x2, f2)


def loop_maximum(kt: KernelTable, v: Field, w: Field, points: int = 256,
                 window: tuple | None = None, workers=None) -> LoopMaximum:
    """Largest Rayleigh quotient along the odd loop through v and w.

    The quotient is even under theta -> theta + pi, so sampling covers
    [0, pi) with ``points // 2`` nodes of the ``points``-grid on [0, 2 pi),
    followed by golden-section refinement around the best node.  With
    ``window = (lo, hi)`` only that interval is searched (local refinement).
    """
    p = kt.params.p
    vv, wv = v.values, w.values
    skipped = []
    quotient = _LoopQuotient(kt, vv, wv, workers)

    def q(theta):
        val = quotient(theta)
        if val is None:
            skipped.append(theta)
            return -math.inf
        return val

    if window is None:
        step = 2.0 * math.pi / points
        thetas = step * np.arange(max(points // 2, 1))
        vals = np.array([q(t) for t in thetas])
        if not np.any(np.isfinite(vals)):
            raise DegenerateLoop("loop vanishes at every sampled angle")
        k = int(np.argmax(vals))
        theta, value = float(thetas[k]), float(vals[k])
        lo, hi = theta - step, theta + step
    else:
        lo, hi = window
        theta, value = 0.5 * (lo + hi), q(0.5 * (lo + hi))
    t_ref, v_ref = _golden_max(q, lo, hi)
    if v_ref > value:
        theta, value = t_ref, v_ref
    if skipped:
        log.warning("loop vanished at %d angle(s); skipped", len(skipped))
    return LoopMaximum(value, theta, Field(v.grid, loop_point(vv, wv, theta, p)), skipped)


def lambda2_upper(grid: Grid, params: Params, v: Field, w: Field,
                  opts: SolverOptions | None = None, kt: KernelTable | None = None) -> float:
    """Max of the Rayleigh quotient along the odd loop f(cos t, sin t) built on v, w."""
    opts = opts or SolverOptions()
    for f in (v, w):
        if not np.any(f.values):
            raise ZeroField("loop generators must be nonzero")
    kt = kt or kernel_table(grid, params, opts.workers)
    return loop_maximum(kt, v, w, opts.loop_points, workers=opts.workers).value


def _embed(grid: Grid, sub: Grid, vals: np.ndarray) -> np.ndarray:
    out = np.zeros(grid.count)
    out[np.searchsorted(grid.active, sub.active)] = vals
    return out


def nodal_bound_detail(grid: Grid, params: Params, phi: Field, opts=None, cache=None):
    opts = opts or SolverOptions()
    pos, neg = phi.values > 0, phi.values < 0
    if not (np.any(pos) and np.any(neg)):
        raise NoSignChange("field does not change sign on the active cells")
    lam_pos = _lambda1_value(grid.subgrid(pos), params, opts, cache).lam
    lam_neg = _lambda1_value(grid.subgrid(neg), params, opts, cache).lam
    return max(lam_pos, lam_neg), lam_pos, lam_neg


def lambda2_lower_nodal(grid: Grid, params: Params, phi: Field,
                        opts: SolverOptions | None = None, cache: dict | None = None) -> float:
    """max(lambda1({phi > 0}), lambda1({phi < 0})); zero cells belong to neither set."""
    return nodal_bound_detail(grid, params, phi, opts, cache)[0]


def _candidate_partitions(grid: Grid, params: Params, opts: SolverOptions, cache: dict):
    """Pairs of disjoint boolean masks over the active cells."""
    cands = []
    comps = components(grid)
    if len(comps) >= 2:
        lams = [_lambda1_value(c, params, opts, cache).lam for c in comps]
        order = np.argsort(lams, kind="stable")[:2]
        masks = []
        for k in order:
            m = np.zeros(grid.count, dtype=bool)
            m[np.searchsorted(grid.active, comps[k].active)] = True
            masks.append(m)
        cands.append(("components", masks[0], masks[1]))
    if grid.count >= 2:
        _, phi = solve_linear_spectrum(grid, params.s, 2)[1]
        cands.append(("linear-nodal", phi.values > 0, phi.values < 0))
    centroid = grid.centers.mean(axis=0)
    for d in range(grid.n):
        x = grid.centers[:, d]
        cands.append((f"split-axis{d}", x < centroid[d], x > centroid[d]))
    seen, out = set(), []
    for name, a, b in cands:
        if not (np.any(a) and np.any(b)):
            continue
        key = (a.tobytes(), b.tobytes())
        if key in seen or (b.tobytes(), a.tobytes()) in seen:
            continue
        seen.add(key)
        out.append((name, a, b))
    return out


def _principal_on(grid, params, mask, opts, cache):
    sub = grid.subgrid(mask)
    res = _lambda1_value(sub, params, opts, cache)
    vals = np.abs(_embed(grid, sub, res.eigenfunction.values))
    return Field(grid, vals), res.lam


def _refine_pair(kt, v, w, best: LoopMaximum, opts: SolverOptions):
    """Fixed-budget alternating descent on the loop generators.

    Each generator moves within its own support (so the loop stays on the
    L^p sphere exactly) along a preconditioned descent direction of the
    quotient at the current maximizer; a step is kept if the locally
    re-maximized loop value drops.
    """
    p = kt.params.p
    hn = kt.grid.cell_measure
    A = quadratic_form_matrix(kt)
    step = 2.0 * math.pi / opts.loop_points
    gens = [v.values.copy(), w.values.copy()]
    supports = [gens[0] > 0, gens[1] > 0]
    factors = [linalg.cho_factor(A[np.ix_(m, m)], lower=True) for m in supports]
    current = best
    for _ in range(opts.refine_rounds):
        for k in (0, 1):
            theta = current.theta
            c, s = math.cos(theta), math.sin(theta)
            coef = math.copysign(abs(c) ** (2 / p), c) if k == 0 else -math.copysign(abs(s) ** (2 / p), s)
            if coef == 0:
                continue
            _, gR, _ = rayleigh_gradient(current.maximizer.values, kt, opts.workers)
            m = supports[k]
            g = coef * gR[m]
            d = -linalg.cho_solve(factors[k], g) / p
            t = opts.initial_step
            for _ in range(8):
                trial = gens[k].copy()
                trial[m] = np.abs(trial[m] + t * d)
                if not np.all(trial[m] > 0):
                    t *= opts.backtrack
                    continue
                trial = _normalize(trial, p, hn)
                pair = [Field(kt.grid, g_) for g_ in gens]
                pair[k] = Field(kt.grid, trial)
                cand = loop_maximum(kt, pair[0], pair[1], opts.loop_points,
                                    window=(theta - step, theta + step), workers=opts.workers)
                if cand.value < current.value:
                    gens[k] = trial
                    current = cand
                    break
                t *= opts.backtrack
    v2, w2 = Field(kt.grid, gens[0]), Field(kt.grid, gens[1])
    full = loop_maximum(kt, v2, w2, opts.loop_points, workers=opts.workers)
    if full.value < best.value:
        return v2, w2, full
    return v, w, best


def solve_lambda2(grid: Grid, params: Params, opts: SolverOptions | None = None) -> EigenResult:
    """Second eigenvalue: exact for p = 2, bracketed for p > 2.

    For p > 2 ``lam`` is the bracket's upper end.  Raises
    :class:`NotConverged` (with the bracket attached) if a sub-problem hit
    its iteration cap.
    """
    opts = opts or SolverOptions()
    if grid.count < 2:
        raise DimensionTooSmall("second eigenvalue needs at least two active cells")
    if params.p == 2:
        kt = kernel_table(grid, params, opts.workers)
        lam, ef = solve_linear_spectrum(grid, params.s, 2, kt)[1]
        res = eigen_residual(ef, kt, lam, opts.workers)
        ef = Field(grid, ef.values / lp_norm(ef, 2.0))
        return EigenResult(lam, ef, 0, res, True, lam, lam)
    return bracket_lambda2(grid, params, opts)


def bracket_lambda2(grid: Grid, params: Params, opts: SolverOptions | None = None) -> EigenResult:
    """Loop upper bound and nodal lower bound for the second eigenvalue (any p).

    Candidate partitions: connected components (if several), the nodal sets
    of the p = 2 second eigenfunction, and half-spaces through the centroid
    along each axis.  Each gives a loop through the principal eigenfunctions
    of its two parts; the lowest loop maximum is refined and its maximizer's
    nodal sets give the lower bound.
    """
    opts = opts or SolverOptions()
    if grid.count < 2:
        raise DimensionTooSmall("second eigenvalue needs at least two active cells")
    kt = kernel_table(grid, params, opts.workers)
    cache: dict = {}
    best = None
    for name, ma, mb in _candidate_partitions(grid, params, opts, cache):
        v, _ = _principal_on(grid, params, ma, opts, cache)
        w, _ = _principal_on(grid, params, mb, opts, cache)
        lm = loop_maximum(kt, v, w, opts.loop_points, workers=opts.workers)
        log.info("lambda2 candidate %s: upper %.10g", name, lm.value)
        if best is None or lm.value < best[2].value:
            best = (v, w, lm)
    v, w, lm = best
    if opts.refine_rounds > 0:
        v, w, lm = _refine_pair(kt, v, w, lm, opts)
    phi = lm.maximizer
    if not (np.any(phi.values > 0) and np.any(phi.values < 0)):
        phi = v - w
    lower = lambda2_lower_nodal(grid, params, phi, opts, cache)
    converged = all(r.converged for r in cache.values())
    ef = Field(grid, phi.values / lp_norm(phi, params.p))
    result = EigenResult(lm.value, ef, opts.refine_rounds,
                         eigen_residual(ef, kt, lm.value, opts.workers), converged,
                         min(lower, lm.value), lm.value)
    if lower > lm.value:
        log.warning("nodal lower bound %.10g exceeds loop upper bound %.10g", lower, lm.value)
    if not converged:
        raise NotConverged("a lambda1 sub-problem hit its iteration cap", result)
    return result
