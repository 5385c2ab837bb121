"""Batch experiments: equal-volume shape comparison for the first eigenvalue,
second eigenvalue against the half-volume ball, and the two-ball separation
sweep.  Results serialize to CSV with 17 significant digits.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .eigensolve import (EigenResult, SolverOptions, nodal_bound_detail,
                         solve_lambda1, solve_lambda2, solve_linear_spectrum)
from .errors import NotConverged, OverlappingBalls, ShapeError
from .geometry import (Ball, Grid, Params, ball_of_volume, build_grid,
                       format_shape, parse_shape, rescale_to_count, two_balls)
from .rearrange import ball_grid_of_count

log = logging.getLogger(__name__)

LAMBDA_HEADER = ("shape", "p", "s", "h", "lambda", "residual", "iterations", "converged")
SWEEP_HEADER = ("d", "lambda2", "lambda2_lower", "lambda2_upper", "lambda1_ball", "gap",
                "gap_times_dminus2r")
SUITE_HEADER = ("shape", "p", "s", "h", "lambda_main", "lambda_ball", "delta", "pass")

# equal-area disk, unit square and 2:1 rectangle
DEFAULT_FK_SHAPES = ("ball 0 0 0.5641895835477563", "box 0 0 1 1",
                     "box 0 0 1.4142135623730951 0.70710678118654757")
DEFAULT_HKS_SHAPES = ("ball 0 0 0.5641895835477563", "box 0 0 1 1")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    text = to_csv(header, rows)
    with open(path, "w", newline="") as fh:
        fh.write(text)


@dataclass(frozen=True)
class ExperimentConfig:
    params: Params
    h: float
    shapes: tuple = ()
    margin: float | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    out: str | None = None
    r: float = 1.0
    distances: tuple = (4.0, 8.0, 16.0, 32.0)
    workers: int | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if self.margin is not None and self.margin < 2 * self.h * (1 - 1e-12):
            raise ValueError("margin must be at least 2h")
        if not self.r > 0:
            raise ValueError(f"r must be positive, got {self.r}")
        shapes = tuple(parse_shape(s, self.params.n) if isinstance(s, str) else s
                       for s in self.shapes)
        for sh in shapes:
            if sh.dim != self.params.n:
                raise ShapeError(f"shape {format_shape(sh)} is not {self.params.n}-dimensional")
        object.__setattr__(self, "shapes", shapes)
        object.__setattr__(self, "distances", tuple(float(d) for d in self.distances))

    def grid(self, shape) -> Grid:
        return build_grid(shape, self.h, self.margin)


def _map_rows(fn, items, workers):
    """Run independent rows, concurrently when allowed, results in input order."""
    if not workers or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _lambda1(grid: Grid, config: ExperimentConfig) -> EigenResult:
    if config.params.p == 2:
        lam, ef = solve_linear_spectrum(grid, config.params.s, 1)[0]
        return EigenResult(lam, ef, 0, 0.0, True)
    try:
        return solve_lambda1(grid, config.params, config.solver)
    except NotConverged as exc:
        log.warning("%s", exc)
        return exc.result


# --------------------------------------------------------------------------
# single runs
# --------------------------------------------------------------------------

def lambda_rows(config: ExperimentConfig, which: int = 1) -> list:
    """(shape, p, s, h, lambda, residual, iterations, converged) per shape."""
    solve = solve_lambda1 if which == 1 else solve_lambda2

    def run(shape):
        grid = config.grid(shape)
        try:
            res = solve(grid, config.params, config.solver)
        except NotConverged as exc:
            res = exc.result
        return (format_shape(shape), config.params.p, config.params.s, config.h,
                res.lam, res.residual, res.iterations, res.converged), res

    return _map_rows(run, list(config.shapes), config.workers)


# --------------------------------------------------------------------------
# equal-volume first eigenvalue comparison
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteRow:
    shape: str
    p: float
    s: float
    h: float
    lambda_main: float
    lambda_ball: float
    delta: float
    passed: bool
    count: int = 0
    ball_count: int = 0
    extra: float | None = None  # nodal bound, when available
    converged: bool = True

    def as_csv(self) -> tuple:
        return (self.shape, self.p, self.s, self.h, self.lambda_main, self.lambda_ball,
                self.delta, self.passed)


def fk_suite(config: ExperimentConfig) -> list:
    """First eigenvalue of each shape against the ball with the same cell count.

    The reference ball is the first Ball in the list, or else a ball rescaled
    to the first shape's cell count.  Every other shape is rescaled to the
    reference count.  ``passed`` requires delta > 0 for non-balls and
    delta >= 0 for balls.
    """
    if not config.shapes:
        raise ValueError("shape list is empty")
    p = config.params
    balls = [sh for sh in config.shapes if isinstance(sh, Ball)]
    if balls:
        ref_shape = balls[0]
    else:
        first = config.grid(config.shapes[0])
        n = p.n
        ref_shape = rescale_to_count(Ball(tuple([0.0] * n),
                                          ball_of_volume(first.count * first.cell_measure, n)),
                                     config.h, first.count, config.margin)
    ref_grid = config.grid(ref_shape)
    target = ref_grid.count

    def prepare(shape):
        if shape == ref_shape:
            return shape
        return rescale_to_count(shape, config.h, target, config.margin)

    shapes = [prepare(sh) for sh in config.shapes]
    ref = _lambda1(ref_grid, config)

    def run(shape):
        if shape == ref_shape:
            res, count = ref, target
        else:
            grid = config.grid(shape)
            res, count = _lambda1(grid, config), grid.count
        delta = res.lam - ref.lam
        ok = (delta >= 0) if isinstance(shape, Ball) else (delta > 0)
        if abs(count - target) > 0.01 * target:
            log.warning("%s: %d cells vs reference %d", format_shape(shape), count, target)
            ok = False
        ok = ok and res.converged and ref.converged
        return SuiteRow(format_shape(shape), p.p, p.s, config.h, res.lam, ref.lam, delta,
                        bool(ok), count, target, None, res.converged)

    return _map_rows(run, shapes, config.workers)


# --------------------------------------------------------------------------
# second eigenvalue against the half-volume ball
# --------------------------------------------------------------------------

def hks_suite(config: ExperimentConfig) -> list:
    """Second eigenvalue (bracket lower end for p > 2) vs the half-volume ball.

    The ball is the centred discrete ball with ceil(N / 2) cells.
    ``extra`` holds the nodal lower bound max(lambda1(+), lambda1(-)) of the
    second eigenfunction.
    """
    if not config.shapes:
        raise ValueError("shape list is empty")
    p = config.params

    def run(shape):
        grid = config.grid(shape)
        try:
            res2 = solve_lambda2(grid, p, config.solver)
        except NotConverged as exc:
            res2 = exc.result
        lam2 = res2.lam if p.p == 2 else res2.bracket_lower
        half = int(math.ceil(grid.count / 2))
        ball_grid = ball_grid_of_count(half, config.h, p.n, config.margin)[0]
        ball = _lambda1(ball_grid, config)
        try:
            nodal = nodal_bound_detail(grid, p, res2.eigenfunction, config.solver)[0]
        except ValueError:
            nodal = None
        delta = lam2 - ball.lam
        ok = bool(delta > 0 and res2.converged and ball.converged)
        return SuiteRow(format_shape(shape), p.p, p.s, config.h, lam2, ball.lam, delta, ok,
                        grid.count, half, nodal, res2.converged)

    return _map_rows(run, list(config.shapes), config.workers)


# --------------------------------------------------------------------------
# two-ball separation sweep
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    d: float
    lambda2: float
    lambda2_lower: float
    lambda2_upper: float
    lambda1_ball: float
    gap: float
    gap_times_dminus2r: float

    def as_csv(self) -> tuple:
        return (self.d, self.lambda2, self.lambda2_lower, self.lambda2_upper,
                self.lambda1_ball, self.gap, self.gap_times_dminus2r)


def separation_sweep(config: ExperimentConfig) -> list:
    """lambda2 of two radius-r balls at each center distance vs lambda1 of one ball.

    The single ball sits at the origin with the same h and margin, so its
    lattice is anchored exactly like the left ball of every two-ball grid.
    Rows are sorted by distance.
    """
    p, r = config.params, config.r
    ds = sorted(config.distances)
    for d in ds:
        if d <= 2 * r:
            raise OverlappingBalls(f"distance {d} does not exceed 2r = {2 * r}")
    ball = _lambda1(config.grid(Ball(tuple([0.0] * p.n), r)), config)

    def run(d):
        grid = config.grid(two_balls(r, d, p.n))
        try:
            res = solve_lambda2(grid, p, config.solver)
        except NotConverged as exc:
            log.warning("%s", exc)
            res = exc.result
        gap = res.lam - ball.lam
        return SweepRow(d, res.lam, res.bracket_lower, res.bracket_upper, ball.lam, gap,
                        gap * (d - 2 * r))

    return _map_rows(run, ds, config.workers)


def sweep_violations(rows) -> list:
    """Messages for nonpositive gaps or gaps that fail to decrease strictly."""
    out = []
    for row in rows:
        if not row.gap > 0:
            out.append(f"gap at d={row.d:g} is not positive ({row.gap:.6g})")
    for a, b in zip(rows, rows[1:]):
        if not b.gap < a.gap:
            out.append(f"gap does not decrease from d={a.d:g} to d={b.d:g}")
    return out


# --------------------------------------------------------------------------
# self test
# --------------------------------------------------------------------------

def _fd_gradient_error(kt, vals, step):
    from .energy import energy_and_gradient
    _, grad = energy_and_gradient(vals, kt)
    fd = np.empty_like(vals)
    for i in range(vals.size):
        e = np.zeros_like(vals)
        e[i] = step
        fd[i] = (energy_and_gradient(vals + e, kt)[0]
                 - energy_and_gradient(vals - e, kt)[0]) / (2 * step)
    return float(np.max(np.abs(grad - fd)) / np.max(np.abs(fd)))


def selftest(seed: int = 0, samples: int = 20000) -> list:
    """Quick invariant checks; returns (name, ok, detail) triples."""
    from .energy import Field, energy_and_gradient, rayleigh, total_energy
    from .kernel import (calibrate_cp, check_lemma29_part1, kernel_table,
                         lemma29_part2_ratio, monotonicity_gap)

    rng = np.random.default_rng(seed)
    results = []

    for p in (2.0, 2.5, 3.0, 4.0):
        a = rng.standard_normal(samples) * 10.0 ** rng.uniform(-3, 3, samples)
        b = -np.sign(a) * np.abs(rng.standard_normal(samples)) * 10.0 ** rng.uniform(-3, 3, samples)
        ok1 = bool(np.all(check_lemma29_part1(a, b, p)))
        t1, t2 = rng.standard_normal((2, samples)) * 10.0
        gap = monotonicity_gap(t1, t2, p)
        ok2 = bool(np.all(gap >= -1e-12 * np.maximum(1.0, np.abs(t1 - t2) ** p)))
        cp = calibrate_cp(p, samples, seed)
        ratio = lemma29_part2_ratio(a, b, p)
        ok3 = bool(np.max(ratio) <= cp * 1.01)
        results.append((f"scalar inequalities p={p:g}", ok1 and ok2 and ok3,
                        f"sampled c_p={cp:.6g}"))

    grid = build_grid(Ball((0.0,), 1.0), 1.0 / 16)
    for p in (2.0, 3.0):
        kt = kernel_table(grid, Params(p, 0.5, 1))
        vals = rng.standard_normal(grid.count)
        err = _fd_gradient_error(kt, vals, 1e-5 * np.max(np.abs(vals)))
        energy, grad = energy_and_gradient(vals, kt)
        euler = abs(np.dot(grad, vals) - p * energy) / (p * energy)
        u = Field(grid, vals)
        homog = abs(total_energy(u * -3.0, kt).total / (3.0 ** p * energy) - 1)
        scale = abs(rayleigh(u * 7.0, kt) / rayleigh(u, kt) - 1)
        results.append((f"gradient and homogeneity p={p:g}",
                        err <= 1e-6 and euler <= 1e-10 and homog <= 1e-12 and scale <= 1e-12,
                        f"fd {err:.2e} euler {euler:.2e} homog {homog:.2e}"))

    unit = build_grid(parse_shape("box 0 1"), 1.0 / 64)
    prm = Params(2.0, 0.5, 1)
    dense = solve_linear_spectrum(unit, 0.5, 1)[0][0]
    desc = solve_lambda1(unit, prm).lam
    rel = abs(desc - dense) / dense
    results.append(("descent matches dense eigensolve", rel <= 1e-6, f"rel {rel:.2e}"))

    h = 1.0 / 32
    l_a = solve_lambda1(build_grid(Ball((0.0,), 1.0), h), prm).lam
    l_b = solve_lambda1(build_grid(Ball((3 * h,), 1.0), h), prm).lam
    results.append(("lattice translation invariance", l_a == l_b, f"{l_a!r} vs {l_b!r}"))

    cfg = ExperimentConfig(prm, 1.0 / 32, distances=(4.0, 8.0))
    first = to_csv(SWEEP_HEADER, [r.as_csv() for r in separation_sweep(cfg)])
    second = to_csv(SWEEP_HEADER, [r.as_csv() for r in separation_sweep(cfg)])
    results.append(("sweep output is reproducible", first == second, ""))
    return results
