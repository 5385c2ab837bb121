"""Command-line front end.

Exit codes: 0 success, 1 an asserted inequality failed (or a solve hit its
iteration cap), 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .eigensolve import SolverOptions
from .errors import InvalidParams, InvalidSpacing, OverlappingBalls, ShapeError
from .experiments import (DEFAULT_FK_SHAPES, DEFAULT_HKS_SHAPES, LAMBDA_HEADER,
                          SUITE_HEADER, SWEEP_HEADER, ExperimentConfig, fk_suite,
                          hks_suite, lambda_rows, selftest, separation_sweep,
                          sweep_violations, to_csv)
from .geometry import Params, parse_shape

SHAPE_GRAMMAR = """\
shape grammar (numbers in decimal notation, whitespace separated):
  ball cx [cy] r             ball of radius r centred at (cx[, cy])
  box x0 [y0] x1 [y1]        open box with corners (x0[, y0]) and (x1[, y1])
  union(<shape>;<shape>...)  union of shapes
  twoballs r d               two radius-r balls, centres d apart on the first axis
--shapes takes several shapes separated by '|'."""

DEFAULT_H = {1: 1.0 / 64, 2: 1.0 / 41}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _distances(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad distance list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--p", type=float, default=2.0, help="exponent p >= 2")
    common.add_argument("--s", type=float, default=0.5, help="fractional order in (0, 1)")
    common.add_argument("--dim", type=int, choices=(1, 2), default=None)
    common.add_argument("--h", type=float, default=None,
                        help="grid spacing (default 1/64 in 1D, 1/41 in 2D)")
    common.add_argument("--margin", type=float, default=None, help="lattice margin (>= 2h)")
    common.add_argument("--tol", type=float, default=1e-12)
    common.add_argument("--max-iter", type=int, default=3000)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--out", default=None, help="CSV output path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="mixedplap",
                     description="Dirichlet eigenvalues of the mixed local/nonlocal p-Laplacian.",
                     epilog=SHAPE_GRAMMAR, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (("lambda1", "first eigenvalue"), ("lambda2", "second eigenvalue")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--shape", required=True)
    for name, helptext in (("fk", "equal-volume comparison of first eigenvalues"),
                           ("hks", "second eigenvalue vs the half-volume ball")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--shapes", default=None)
    sp = sub.add_parser("sweep", parents=[common], help="two-ball separation sweep")
    sp.add_argument("--r", type=float, default=1.0)
    sp.add_argument("--d", type=_distances, default=(4.0, 8.0, 16.0, 32.0))
    sub.add_parser("selftest", parents=[common], help="run the invariant checks")
    return parser


def _config(args, shapes) -> ExperimentConfig:
    parsed = [parse_shape(t, args.dim) for t in shapes]
    dims = {sh.dim for sh in parsed}
    if args.dim is not None:
        dims.add(args.dim)
    if len(dims) > 1:
        raise ShapeError("shapes and --dim disagree on the dimension")
    n = dims.pop() if dims else 1
    h = args.h if args.h is not None else DEFAULT_H[n]
    if not h > 0:
        raise InvalidSpacing(f"--h must be positive, got {h}")
    opts = SolverOptions(tol=args.tol, max_iterations=args.max_iter, seed=args.seed,
                         workers=args.workers)
    return ExperimentConfig(Params(args.p, args.s, n), h, tuple(parsed), args.margin, opts,
                            args.out, getattr(args, "r", 1.0), getattr(args, "d", ()),
                            args.workers)


def _emit(args, header, rows, out):
    text = to_csv(header, rows)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        out.write(text)


def _run(args, out) -> int:
    cmd = args.command
    if cmd == "selftest":
        failed = 0
        for name, ok, detail in selftest(args.seed):
            failed += not ok
            out.write(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}\n")
        return 1 if failed else 0

    if cmd in ("lambda1", "lambda2"):
        config = _config(args, [args.shape])
        results = lambda_rows(config, 1 if cmd == "lambda1" else 2)
        rows = [r for r, _ in results]
        for row, res in results:
            line = f"{cmd}({row[0]}) = {res.lam:.12g}  residual {res.residual:.3e}  " \
                   f"iterations {res.iterations}"
            if res.bracket_lower is not None:
                line += f"  bracket [{res.bracket_lower:.12g}, {res.bracket_upper:.12g}]"
            out.write(line + "\n")
        _emit(args, LAMBDA_HEADER, rows, out)
        return 0 if all(res.converged for _, res in results) else 1

    if cmd in ("fk", "hks"):
        default = DEFAULT_FK_SHAPES if cmd == "fk" else DEFAULT_HKS_SHAPES
        shapes = args.shapes.split("|") if args.shapes else list(default)
        config = _config(args, shapes)
        rows = (fk_suite if cmd == "fk" else hks_suite)(config)
        for r in rows:
            extra = f"  nodal bound {r.extra:.10g}" if r.extra is not None else ""
            out.write(f"{'PASS' if r.passed else 'FAIL'}  {r.shape}  [{r.count} cells]  "
                      f"main {r.lambda_main:.10g}  ball {r.lambda_ball:.10g} "
                      f"[{r.ball_count} cells]  delta {r.delta:.6g}{extra}\n")
        _emit(args, SUITE_HEADER, [r.as_csv() for r in rows], out)
        return 0 if all(r.passed for r in rows) else 1

    if cmd == "sweep":
        config = _config(args, [])
        rows = separation_sweep(config)
        for r in rows:
            out.write(f"d={r.d:g}  lambda2 {r.lambda2:.12g}  ball {r.lambda1_ball:.12g}  "
                      f"gap {r.gap:.6g}  gap*(d-2r) {r.gap_times_dminus2r:.6g}\n")
        problems = sweep_violations(rows)
        for msg in problems:
            out.write(f"FAIL  {msg}\n")
        _emit(args, SWEEP_HEADER, [r.as_csv() for r in rows], out)
        return 1 if problems else 0
    raise UsageError(f"unknown command {cmd}")


def run_cli(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{parser.format_usage()}error: {exc}\n{SHAPE_GRAMMAR}\n")
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args, out)
    except (ShapeError, InvalidParams, InvalidSpacing, OverlappingBalls, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n{SHAPE_GRAMMAR}\n")
        return 2


def main() -> None:
    sys.exit(run_cli())
