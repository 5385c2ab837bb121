"""Discrete Schwarz symmetrization and Polya-Szego energy comparisons.

The target of a field on N cells is a discrete ball of exactly N cells: the
N cells of a lattice centred at the origin (cell centres at (k + 1/2) h)
that are closest to the origin, ties broken lexicographically by lattice
index.  When N is not a full-shell count the outermost shell is partial,
which is flagged on the result instead of changing the cell count.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .energy import _local_energy_grad, nonlocal_energy
from .errors import NegativeValues, ZeroField
from .geometry import BALL_VOLUME, Ball, Field, Grid, Params, ball_of_volume
from .kernel import kernel_table

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RearrangedPair:
    source: Field
    target: Field
    # target.values[k] == |source.values[permutation[k]]|
    permutation: np.ndarray
    partial_shell: bool


def _ordered_ball_cells(count: int, n: int):
    """Doubled offsets (2k + 1) of the ``count`` centred cells, nearest first.

    Returns (offsets, partial_shell).  Squared distances are exact integers.
    """
    # cube of half-width well beyond the radius of a ball of ``count`` cells
    half = int(np.ceil((count / BALL_VOLUME[n]) ** (1.0 / n))) + 2
    ks = np.arange(-half, half)
    grids = np.meshgrid(*([ks] * n), indexing="ij")
    odd = np.stack([2 * g.ravel() + 1 for g in grids], axis=1).astype(np.int64)
    r2 = np.sum(odd * odd, axis=1)
    # lexsort uses the last key as primary
    keys = [odd[:, d] for d in range(n - 1, -1, -1)] + [r2]
    order = np.lexsort(keys)
    chosen = order[:count]
    partial = count < len(order) and r2[order[count]] == r2[order[count - 1]]
    return odd[chosen], bool(partial)


def ball_grid_of_count(count: int, h: float, n: int, margin: float | None = None) -> tuple:
    """Centred discrete ball with exactly ``count`` cells.

    Returns (grid, order, partial): ``order[k]`` is the position within
    ``grid``'s active list of the k-th nearest cell, and ``partial`` flags an
    incomplete outer shell.
    """
    offsets, partial = _ordered_ball_cells(count, n)
    margin = 2 * h if margin is None else margin
    mc = int(np.ceil(margin / h - 1e-9))
    k = (offsets - 1) // 2
    lo = k.min(axis=0) - mc
    dims = tuple(int(v) for v in k.max(axis=0) - lo + 1 + mc)
    flat = np.ravel_multi_index(tuple((k - lo).T), dims)
    active = np.sort(flat)
    order = np.searchsorted(active, flat)
    shape = Ball(tuple([0.0] * n), ball_of_volume(count * h ** n, n))
    grid = Grid(float(h), lo.astype(float) * h, dims, active, float(margin), shape)
    return grid, order, partial


def schwarz(u: Field) -> RearrangedPair:
    """Radially nonincreasing rearrangement of a nonnegative field."""
    vals = u.values
    if np.any(vals < 0):
        raise NegativeValues("Schwarz symmetrization needs a nonnegative field")
    grid = u.grid
    target_grid, order, partial = ball_grid_of_count(grid.count, grid.h, grid.n, grid.margin)
    if partial:
        log.info("discrete ball of %d cells has a partial outer shell", grid.count)
    perm = np.argsort(-vals, kind="stable")
    out = np.empty(grid.count)
    out[order] = vals[perm]
    permutation = np.empty(grid.count, dtype=np.int64)
    permutation[order] = perm
    return RearrangedPair(u, Field(target_grid, out), permutation, partial)


class PolyaSzegoReport(NamedTuple):
    local_ok: bool
    nonlocal_ok: bool
    deltas: tuple  # (local, nonlocal) relative changes target vs source


def polya_szego_check(u: Field, params: Params, tau: float = 0.05,
                      workers=None) -> PolyaSzegoReport:
    """Compare local and nonlocal energies of ``u`` and its rearrangement."""
    if not np.any(u.values):
        raise ZeroField("Polya-Szego check of the zero field")
    pair = schwarz(u)
    parts = []
    for f in (pair.source, pair.target):
        kt = kernel_table(f.grid, params, workers)
        local = _local_energy_grad(f.grid, f.values, params.p, False)[0]
        parts.append((local, sum(nonlocal_energy(f, kt, workers))))
    (ls, ns), (lt, nt) = parts
    d_local = (lt - ls) / ls
    d_nonlocal = (nt - ns) / ns
    report = PolyaSzegoReport(bool(lt <= ls * (1 + tau)), bool(nt <= ns * (1 + tau)),
                              (d_local, d_nonlocal))
    if not (report.local_ok and report.nonlocal_ok):
        log.warning("rearrangement raised an energy part beyond tolerance: %s", report.deltas)
    return report
