"""Discrete mixed local/nonlocal energy, its gradient and the Rayleigh quotient.

For a field ``u`` on the active cells (zero elsewhere) the energy is

    E(u) = sum_c |grad_h u(c)|^p h^n                    (local)
         + sum_{i != j} |u_i - u_j|^p K_ij              (nonlocal, interior)
         + sum_i |u_i|^p w_i                            (nonlocal, exterior)

where ``grad_h`` is the vector of forward differences and the local sum runs
over every lattice cell, so edges from active to inactive cells carry the
Dirichlet penalty.  E is p-homogeneous; the Rayleigh quotient E(u)/||u||_p^p
is scale invariant and its minimum over nonzero fields is the discrete first
eigenvalue.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ZeroField
from .geometry import Field, Grid
from .kernel import KernelTable, abs_pow, block_map, j_p, row_blocks

__all__ = [
    "Field", "EnergyBreakdown", "local_energy", "nonlocal_energy", "total_energy",
    "energy_gradient", "energy_and_gradient", "lp_norm", "normalize", "rayleigh",
    "rayleigh_gradient", "eigen_residual", "quadratic_form_matrix",
]


@dataclass(frozen=True)
class EnergyBreakdown:
    local: float
    nonlocal_interior: float
    nonlocal_exterior: float

    @property
    def total(self) -> float:
        return self.local + self.nonlocal_interior + self.nonlocal_exterior

    def scaled(self, c: float) -> "EnergyBreakdown":
        return EnergyBreakdown(self.local * c, self.nonlocal_interior * c,
                               self.nonlocal_exterior * c)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, Field) else np.asarray(u, dtype=float)


# --------------------------------------------------------------------------
# local part
# --------------------------------------------------------------------------

def _forward_differences(grid: Grid, vals: np.ndarray):
    """Zero-padded lattice array and forward differences over all cells."""
    padded = np.pad(grid.scatter(vals), 1)
    base = tuple(slice(0, -1) for _ in grid.dims)
    diffs = []
    for d in range(grid.n):
        shifted = tuple(slice(1, None) if k == d else slice(0, -1) for k in range(grid.n))
        diffs.append(padded[shifted] - padded[base])
    return padded, diffs


def _local_energy_grad(grid: Grid, vals: np.ndarray, p: float, need_grad: bool):
    h, n = grid.h, grid.n
    padded, diffs = _forward_differences(grid, vals)
    sq = sum(d * d for d in diffs) / (h * h)
    if p == 2:
        dens = sq
    else:
        dens = sq ** (0.5 * p)
    energy = math.fsum(np.sum(dens, axis=-1).ravel()) * h ** n
    if not need_grad:
        return energy, None
    if p == 2:
        coef = np.full_like(sq, 2.0)
    else:
        coef = p * sq ** (0.5 * p - 1.0)
    scale = h ** (n - 2)
    acc = np.zeros_like(padded)
    base = tuple(slice(0, -1) for _ in grid.dims)
    for d, diff in enumerate(diffs):
        flux = coef * diff * scale
        shifted = tuple(slice(1, None) if k == d else slice(0, -1) for k in range(n))
        acc[shifted] += flux
        acc[base] -= flux
    inner = acc[tuple(slice(1, -1) for _ in grid.dims)]
    return energy, inner.flat[grid.active].copy()


def local_energy(u: Field, p: float) -> float:
    """Sum over lattice cells of |forward-difference gradient|^p times h^n."""
    return _local_energy_grad(u.grid, u.values, p, False)[0]


# --------------------------------------------------------------------------
# nonlocal part
# --------------------------------------------------------------------------

def _nonlocal_energy_grad(kt: KernelTable, vals: np.ndarray, need_grad: bool, workers=None):
    p = kt.params.p
    K = kt.K
    N = vals.size

    def work(a, b):
        D = vals[a:b, None] - vals[None, :]
        if need_grad:
            T = j_p(D, p) * K[a:b]
            return float(np.sum(T * D)), T.sum(axis=1)
        return float(np.sum(abs_pow(D, p) * K[a:b])), None

    parts = block_map(work, row_blocks(N, N), workers)
    interior = math.fsum(e for e, _ in parts)
    exterior = math.fsum(abs_pow(vals, p) * kt.w)
    if not need_grad:
        return interior, exterior, None
    rows = np.concatenate([g for _, g in parts]) if parts else np.zeros(0)
    grad = 2.0 * p * rows + p * j_p(vals, p) * kt.w
    return interior, exterior, grad


def nonlocal_energy(u: Field, kt: KernelTable, workers=None):
    """(interior, exterior) nonlocal energy."""
    kt.check(u.grid)
    interior, exterior, _ = _nonlocal_energy_grad(kt, u.values, False, workers)
    return interior, exterior


def total_energy(u: Field, kt: KernelTable, workers=None) -> EnergyBreakdown:
    kt.check(u.grid)
    local = _local_energy_grad(u.grid, u.values, kt.params.p, False)[0]
    interior, exterior, _ = _nonlocal_energy_grad(kt, u.values, False, workers)
    return EnergyBreakdown(local, interior, exterior)


def energy_and_gradient(vals: np.ndarray, kt: KernelTable, workers=None):
    """Total energy and its gradient for raw active-cell values."""
    el, gl = _local_energy_grad(kt.grid, vals, kt.params.p, True)
    interior, exterior, gn = _nonlocal_energy_grad(kt, vals, True, workers)
    return el + interior + exterior, gl + gn


def energy_gradient(u: Field, kt: KernelTable, workers=None) -> Field:
    kt.check(u.grid)
    return Field(u.grid, energy_and_gradient(u.values, kt, workers)[1])


# --------------------------------------------------------------------------
# norms and quotients
# --------------------------------------------------------------------------

def lp_norm(u, p: float, grid: Grid | None = None) -> float:
    vals = _values(u)
    g = grid if grid is not None else u.grid
    return math.fsum(abs_pow(vals, p)) ** (1.0 / p) * g.cell_measure ** (1.0 / p)


def normalize(u: Field, p: float) -> Field:
    nrm = lp_norm(u, p)
    if nrm == 0:
        raise ZeroField("cannot normalize the zero field")
    return Field(u.grid, u.values / nrm)


def rayleigh(u: Field, kt: KernelTable, p: float | None = None, workers=None) -> float:
    p = kt.params.p if p is None else p
    nrm = lp_norm(u, p)
    if nrm == 0:
        raise ZeroField("Rayleigh quotient of the zero field")
    return total_energy(u, kt, workers).total / nrm ** p


def rayleigh_gradient(vals: np.ndarray, kt: KernelTable, workers=None):
    """Rayleigh quotient R and its gradient with respect to the raw values."""
    p = kt.params.p
    hn = kt.grid.cell_measure
    energy, grad = energy_and_gradient(vals, kt, workers)
    mass = math.fsum(abs_pow(vals, p)) * hn
    if mass == 0:
        raise ZeroField("Rayleigh quotient of the zero field")
    R = energy / mass
    return R, (grad - R * p * hn * j_p(vals, p)) / mass, grad


def eigen_residual(u: Field, kt: KernelTable, lam: float, workers=None) -> float:
    """Relative residual of the discrete eigen-equation grad E = lam p h^n J_p(u)."""
    kt.check(u.grid)
    p = kt.params.p
    _, grad = energy_and_gradient(u.values, kt, workers)
    res = grad - lam * p * u.grid.cell_measure * j_p(u.values, p)
    scale = np.linalg.norm(grad)
    return float(np.linalg.norm(res) / scale) if scale > 0 else float(np.linalg.norm(res))


def _neighbor_pairs(grid: Grid):
    """Index pairs (i, j) of active cells that are lattice neighbours."""
    pos = np.full(grid.dims, -1, dtype=np.int64)
    pos.flat[grid.active] = np.arange(grid.count)
    pairs = []
    for d in range(grid.n):
        a = pos[tuple(slice(0, -1) if k == d else slice(None) for k in range(grid.n))]
        b = pos[tuple(slice(1, None) if k == d else slice(None) for k in range(grid.n))]
        both = (a >= 0) & (b >= 0)
        pairs.append(np.stack([a[both], b[both]], axis=1))
    return np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)


def quadratic_form_matrix(kt: KernelTable) -> np.ndarray:
    """Dense symmetric A with E(u) = u^T A u for the p = 2 energy on kt's grid."""
    grid = kt.grid
    N, n, h = grid.count, grid.n, grid.h
    pairs = _neighbor_pairs(grid)
    adj = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(N, N))
    adj = (adj + adj.T).toarray()
    A = h ** (n - 2) * (2 * n * np.eye(N) - adj)
    A += 2.0 * (np.diag(kt.K.sum(axis=1)) - kt.K)
    A += np.diag(kt.w)
    return 0.5 * (A + A.T)
