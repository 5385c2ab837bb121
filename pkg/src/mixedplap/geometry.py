"""Constructive shapes, problem parameters and uniform cell-centred grids.

A shape is a union of balls and axis-aligned boxes in one or two dimensions.
It is discretized on a uniform lattice whose lower corner sits at the shape's
tight bounding box minus a margin; a cell is active when its centre lies
inside the shape.  All lattice geometry is expressed through integer cell
indices so that lattice-shifted copies of a shape discretize identically.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union as TUnion

import numpy as np
from scipy import ndimage

from .errors import (InvalidParams, InvalidSpacing, NoActiveCells,
                     NonpositiveVolume, OverlappingBalls, ShapeError)

# unit-ball volumes and unit-sphere surface areas
BALL_VOLUME = {1: 2.0, 2: math.pi}
SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi}


# --------------------------------------------------------------------------
# shapes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) not in (1, 2):
            raise ShapeError(f"ball dimension must be 1 or 2, got {len(self.center)}")
        if not self.radius > 0:
            raise ShapeError(f"ball radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:
        return len(self.center)

    def bounds(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def contains(self, x: np.ndarray) -> np.ndarray:
        d = np.asarray(x, dtype=float) - np.asarray(self.center)
        return np.einsum("...i,...i->...", d, d) < self.radius ** 2

    def translated(self, t) -> "Ball":
        return Ball(tuple(np.asarray(self.center) + np.asarray(t, dtype=float)), self.radius)

    def scaled(self, factor: float, about) -> "Ball":
        a = np.asarray(about, dtype=float)
        return Ball(tuple(a + factor * (np.asarray(self.center) - a)), self.radius * factor)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(c) for c in self.lo))
        object.__setattr__(self, "hi", tuple(float(c) for c in self.hi))
        if len(self.lo) != len(self.hi) or len(self.lo) not in (1, 2):
            raise ShapeError("box corners must both have dimension 1 or 2")
        if not all(a < b for a, b in zip(self.lo, self.hi)):
            raise ShapeError(f"box needs lo < hi componentwise, got {self.lo}, {self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def bounds(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x > np.asarray(self.lo)) & (x < np.asarray(self.hi)), axis=-1)

    def translated(self, t) -> "Box":
        t = np.asarray(t, dtype=float)
        return Box(tuple(np.asarray(self.lo) + t), tuple(np.asarray(self.hi) + t))

    def scaled(self, factor: float, about) -> "Box":
        a = np.asarray(about, dtype=float)
        return Box(tuple(a + factor * (np.asarray(self.lo) - a)),
                   tuple(a + factor * (np.asarray(self.hi) - a)))


@dataclass(frozen=True)
class Union:
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ShapeError("union needs at least one part")
        dims = {p.dim for p in self.parts}
        if len(dims) != 1:
            raise ShapeError(f"union mixes dimensions {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    def bounds(self):
        los, his = zip(*(p.bounds() for p in self.parts))
        return np.min(los, axis=0), np.max(his, axis=0)

    def contains(self, x: np.ndarray) -> np.ndarray:
        out = self.parts[0].contains(x)
        for p in self.parts[1:]:
            out = out | p.contains(x)
        return out

    def translated(self, t) -> "Union":
        return Union(tuple(p.translated(t) for p in self.parts))

    def scaled(self, factor: float, about) -> "Union":
        return Union(tuple(p.scaled(factor, about) for p in self.parts))


ShapeSpec = TUnion[Ball, Box, Union]


def shape_center(shape: ShapeSpec) -> np.ndarray:
    lo, hi = shape.bounds()
    return 0.5 * (lo + hi)


def two_balls(r: float, d: float, dim: int = 1) -> Union:
    """Two radius-``r`` balls whose centres lie ``d`` apart on the first axis."""
    if not d > 2 * r:
        raise OverlappingBalls(f"centre distance {d} must exceed 2r = {2 * r}")
    left = [-d / 2] + [0.0] * (dim - 1)
    right = [d / 2] + [0.0] * (dim - 1)
    return Union((Ball(tuple(left), r), Ball(tuple(right), r)))


# --------------------------------------------------------------------------
# DSL
# --------------------------------------------------------------------------

_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


def _numbers(tokens: Sequence[str], text: str) -> list:
    out = []
    for tok in tokens:
        if not _NUMBER.match(tok):
            raise ShapeError(f"not a number: {tok!r} in {text!r}")
        out.append(float(tok))
    return out


def _split_top_level(body: str) -> list:
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(body):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ShapeError(f"unbalanced parentheses in {body!r}")
        elif ch == ";" and depth == 0:
            parts.append(body[start:i])
            start = i + 1
    if depth != 0:
        raise ShapeError(f"unbalanced parentheses in {body!r}")
    parts.append(body[start:])
    return parts


def parse_shape(text: str, dim: int | None = None) -> ShapeSpec:
    """Parse a shape DSL string.

    Grammar::

        ball cx [cy] r
        box x0 [y0] x1 [y1]
        union(<spec>;<spec>[;...])
        twoballs r d          (dimension taken from ``dim``, default 1)
    """
    s = text.strip()
    if not s:
        raise ShapeError("empty shape string")
    if s.startswith("union"):
        rest = s[len("union"):].strip()
        if not (rest.startswith("(") and rest.endswith(")")):
            raise ShapeError(f"union must be written union(a;b): {text!r}")
        parts = [parse_shape(p, dim) for p in _split_top_level(rest[1:-1])]
        return Union(tuple(parts))
    tokens = s.split()
    kind, args = tokens[0], tokens[1:]
    if kind == "ball":
        vals = _numbers(args, text)
        if len(vals) not in (2, 3):
            raise ShapeError(f"ball takes 2 or 3 numbers: {text!r}")
        shape = Ball(tuple(vals[:-1]), vals[-1])
    elif kind == "box":
        vals = _numbers(args, text)
        if len(vals) == 2:
            shape = Box((vals[0],), (vals[1],))
        elif len(vals) == 4:
            shape = Box((vals[0], vals[1]), (vals[2], vals[3]))
        else:
            raise ShapeError(f"box takes 2 or 4 numbers: {text!r}")
    elif kind == "twoballs":
        vals = _numbers(args, text)
        if len(vals) != 2:
            raise ShapeError(f"twoballs takes r d: {text!r}")
        shape = two_balls(vals[0], vals[1], dim or 1)
    else:
        raise ShapeError(f"unknown shape kind {kind!r} in {text!r}")
    if dim is not None and shape.dim != dim:
        raise ShapeError(f"shape {text!r} has dimension {shape.dim}, expected {dim}")
    return shape


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def format_shape(shape: ShapeSpec) -> str:
    """Inverse of :func:`parse_shape` (two-ball unions are written as unions)."""
    if isinstance(shape, Ball):
        return " ".join(["ball", *map(_fmt, shape.center), _fmt(shape.radius)])
    if isinstance(shape, Box):
        if shape.dim == 1:
            return f"box {_fmt(shape.lo[0])} {_fmt(shape.hi[0])}"
        return "box " + " ".join(map(_fmt, (*shape.lo, *shape.hi)))
    return "union(" + ";".join(format_shape(p) for p in shape.parts) + ")"


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Params:
    """Exponents of the mixed operator.

    ``p`` is the integrability exponent, ``s`` the fractional order and ``n``
    the space dimension.  Sobolev-type conjugate exponents are derived on
    access.
    """
    p: float
    s: float
    n: int

    def __post_init__(self):
        if not self.p >= 2:
            raise InvalidParams(f"p must be >= 2, got {self.p}")
        if not 0 < self.s < 1:
            raise InvalidParams(f"s must lie in (0, 1), got {self.s}")
        if self.n not in (1, 2):
            raise InvalidParams(f"n must be 1 or 2, got {self.n}")

    @property
    def p_conjugate(self) -> float:
        return self.p / (self.p - 1)

    @property
    def p_star(self) -> float:
        return self.n * self.p / (self.n - self.p) if self.p < self.n else math.inf

    @property
    def p_star_conjugate(self) -> float:
        if self.p < self.n:
            ps = self.p_star
            return ps / (ps - 1)
        return 1.0

    @property
    def p_star_s(self) -> float:
        sp = self.s * self.p
        return self.n * self.p / (self.n - sp) if sp < self.n else math.inf

    @property
    def kernel_exponent(self) -> float:
        """Decay exponent n + ps of the interaction kernel."""
        return self.n + self.p * self.s


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice of cells with an ordered set of active cells.

    Cell ``k`` (multi-index) has centre ``origin + (k + 1/2) h``.  ``active``
    holds the C-order flat indices of active cells in increasing order.
    """
    h: float
    origin: np.ndarray
    dims: tuple
    active: np.ndarray
    margin: float
    shape: ShapeSpec | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def count(self) -> int:
        return int(self.active.size)

    @property
    def cell_measure(self) -> float:
        return self.h ** self.n

    @cached_property
    def index(self) -> np.ndarray:
        """(N, n) integer lattice indices of the active cells."""
        return np.stack(np.unravel_index(self.active, self.dims), axis=-1).astype(np.int64)

    @cached_property
    def local_centers(self) -> np.ndarray:
        """Active-cell centres relative to ``origin``."""
        return (self.index + 0.5) * self.h

    @cached_property
    def centers(self) -> np.ndarray:
        return self.origin + self.local_centers

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.dims, dtype=bool)
        m.flat[self.active] = True
        return m

    @property
    def extent(self) -> np.ndarray:
        """Side lengths of the lattice box."""
        return np.asarray(self.dims, dtype=float) * self.h

    def key(self) -> tuple:
        """Hashable description of the discrete domain (lattice + active set)."""
        return (self.h, self.dims, self.active.tobytes())

    def subgrid(self, select) -> "Grid":
        """Grid on the same lattice keeping the active cells picked by ``select``.

        ``select`` is a boolean mask or an index array over active cells.
        """
        sel = np.asarray(select)
        keep = self.active[sel] if sel.dtype == bool else self.active[np.sort(sel)]
        if keep.size == 0:
            raise NoActiveCells("subgrid selection is empty")
        return Grid(self.h, self.origin, self.dims, keep, self.margin, None)

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Embed active-cell values into a zero-filled lattice array."""
        out = np.zeros(self.dims)
        out.flat[self.active] = values
        return out

    def same_lattice(self, other: "Grid") -> bool:
        return (self.h == other.h and self.dims == other.dims
                and np.array_equal(self.origin, other.origin))


def build_grid(shape: ShapeSpec, h: float, margin: float | None = None) -> Grid:
    if not h > 0:
        raise InvalidSpacing(f"spacing must be positive, got {h}")
    if margin is None:
        margin = 2 * h
    if margin < 2 * h * (1 - 1e-12):
        raise InvalidSpacing(f"margin {margin} is below 2h = {2 * h}")
    lo, hi = shape.bounds()
    origin = lo - margin
    dims = tuple(int(math.ceil((b - a + 2 * margin) / h - 1e-9)) for a, b in zip(lo, hi))
    # membership is decided in lattice-local coordinates
    local_shape = shape.translated(-origin)
    axes = [(np.arange(d) + 0.5) * h for d in dims]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    inside = local_shape.contains(pts)
    active = np.flatnonzero(inside)
    if active.size == 0:
        raise NoActiveCells(f"no cell centre of spacing {h} lies inside {format_shape(shape)}")
    return Grid(float(h), origin, dims, active, float(margin), shape)


def ball_of_volume(v: float, n: int) -> float:
    if not v > 0:
        raise NonpositiveVolume(f"volume must be positive, got {v}")
    return (v / BALL_VOLUME[n]) ** (1.0 / n)


def volume(grid: Grid) -> float:
    return grid.count * grid.cell_measure


def rescale_to_count(shape: ShapeSpec, h: float, target: int,
                     margin: float | None = None, span: int = 48) -> ShapeSpec:
    """Scale ``shape`` about its centre so its grid has (about) ``target`` cells.

    Counts are not monotone in the scale factor because the lattice anchor
    moves with the bounding box, so a window of factors around the volume
    estimate is scanned in steps of h/8 of linear size.  Returns the shape
    whose count is closest to ``target``; ties go to the factor nearest 1.
    """
    base = build_grid(shape, h, margin).count
    if base == target:
        return shape
    n = shape.dim
    f0 = (target / base) ** (1.0 / n)
    lo, hi = shape.bounds()
    size = float(np.max(hi - lo))
    step = h / (8.0 * size)
    about = shape_center(shape)
    best, best_key = shape, (abs(base - target), abs(f0 - 1.0))
    for k in range(-span, span + 1):
        f = f0 * (1.0 + k * step)
        if f <= 0:
            continue
        cand = shape.scaled(f, about)
        try:
            c = build_grid(cand, h, margin).count
        except NoActiveCells:
            continue
        key = (abs(c - target), abs(f - f0))
        if key < best_key:
            best, best_key = cand, key
    return best


def components(grid: Grid) -> list:
    """Face-connected components of the active set, largest first."""
    labels, num = ndimage.label(grid.mask)
    lab = labels.flat[grid.active]
    comps = [np.flatnonzero(lab == k) for k in range(1, num + 1)]
    comps.sort(key=lambda c: (-c.size, c[0]))
    return [grid.subgrid(c) for c in comps]


def boundary_distance(grid: Grid) -> np.ndarray:
    """Distance from each active centre to the nearest inactive centre."""
    padded = np.pad(grid.mask, 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded)
    inner = dist[tuple(slice(1, -1) for _ in grid.dims)]
    return inner.flat[grid.active] * grid.h


@dataclass(frozen=True, eq=False)
class Field:
    """Values on the active cells of ``grid``; zero everywhere else in R^n."""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.count,):
            raise ValueError(f"field has shape {v.shape}, grid has {self.grid.count} active cells")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.count))

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid is not self.grid and other.grid.key() != self.grid.key():
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __mul__(self, c):
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def to_lattice(self) -> np.ndarray:
        return self.grid.scatter(self.values)
