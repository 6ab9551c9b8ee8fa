"""Uniform grids, nodal fields, finite-difference stencils and quadrature."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError

__all__ = [
    "Grid",
    "TriGrid",
    "Field",
    "make_grid",
    "make_trigrid",
    "fd_weights",
    "diff",
    "diff_matrix",
    "integrate",
    "trapezoid_weights",
]


@dataclass(frozen=True)
class Grid:
    """Uniform mesh of ``n`` nodes on [0, 1]."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 5:
            raise InvalidArgumentError(f"grid needs n >= 5 nodes, got {self.n!r}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return _nodes(self.n)

    def field(self, values) -> "Field":
        return Field(self, values)

    def sample(self, func) -> "Field":
        return Field(self, func(self.x))

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.n))


@lru_cache(maxsize=None)
def _nodes(n):
    x = np.arange(n) / (n - 1)
    x[-1] = 1.0
    x.setflags(write=False)
    return x


def make_grid(n: int) -> Grid:
    return Grid(n)


@dataclass(frozen=True)
class TriGrid:
    """Uniform lattice on the triangle {0 <= x <= y <= 1}.

    Node ``(i, j)`` sits at ``(x_i, y_j) = (i h, j h)`` and exists for
    ``i <= j``. Arrays on the lattice are stored as ``(m, m)`` matrices whose
    strictly lower part is unused and kept at zero.
    """

    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 5:
            raise InvalidArgumentError(f"triangular grid needs m >= 5, got {self.m!r}")

    @property
    def h(self) -> float:
        return 1.0 / (self.m - 1)

    @property
    def x(self) -> np.ndarray:
        return _nodes(self.m)

    @property
    def mask(self) -> np.ndarray:
        return _upper_mask(self.m)

    @property
    def edge(self) -> Grid:
        """1-D grid matching the lattice spacing along any edge."""
        return Grid(self.m)


@lru_cache(maxsize=None)
def _upper_mask(m):
    mask = np.triu(np.ones((m, m), dtype=bool))
    mask.setflags(write=False)
    return mask


def make_trigrid(m: int) -> TriGrid:
    return TriGrid(m)


@dataclass(frozen=True, eq=False)
class Field:
    """Real values sampled at the nodes of a :class:`Grid`.

    Values are copied and frozen on construction. Arithmetic with scalars and
    with fields on the same grid returns new fields.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise InvalidArgumentError(
                f"field needs {self.grid.n} values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def x(self):
        return self.grid.x

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.grid.n

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise InvalidArgumentError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._other(other))

    def __pow__(self, power):
        return Field(self.grid, self.values ** power)

    def __neg__(self):
        return Field(self.grid, -self.values)


def _as_values(f, grid=None):
    if isinstance(f, Field):
        return f.values, f.grid
    v = np.asarray(f, dtype=float)
    if grid is None:
        grid = Grid(v.shape[-1])
    return v, grid


def fd_weights(offsets, order: int) -> np.ndarray:
    """Weights ``w`` with ``sum(w * f(offsets)) ~ f^(order)(0)`` for unit spacing."""
    offsets = np.asarray(offsets, dtype=float)
    n = offsets.size
    if order >= n:
        raise InvalidArgumentError("need more stencil points than the derivative order")
    vander = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = factorial(order)
    return np.linalg.solve(vander, rhs)


# stencil widths: centered in the interior, one-sided of equal accuracy at the ends
_WIDTH = {1: (3, 3), 2: (3, 4), 3: (5, 5)}


def stencil_offsets(i: int, n: int, order: int) -> np.ndarray:
    """Offsets (relative to node ``i``) of the second-order stencil used by :func:`diff`."""
    centered, onesided = _WIDTH[order]
    half = centered // 2
    if i - half >= 0 and i + half <= n - 1:
        return np.arange(-half, half + 1)
    start = 0 if i - half < 0 else n - onesided
    return np.arange(start, start + onesided) - i


@lru_cache(maxsize=64)
def diff_matrix(n: int, order: int) -> sp.csr_matrix:
    """Sparse matrix of :func:`diff` on an ``n``-node grid (``h = 1/(n-1)``)."""
    if order not in _WIDTH:
        raise InvalidArgumentError(f"derivative order must be 1, 2 or 3, got {order!r}")
    if n < 2 * order + 1:
        raise InvalidArgumentError(
            f"grid with {n} nodes too coarse for derivative order {order}"
        )
    h = 1.0 / (n - 1)
    rows, cols, vals = [], [], []
    for i in range(n):
        offs = stencil_offsets(i, n, order)
        w = fd_weights(offs, order) / h**order
        rows.extend([i] * offs.size)
        cols.extend(i + offs)
        vals.extend(w)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return mat


def diff(f, order: int) -> Field:
    """Second-order finite-difference derivative of ``f``.

    Centered stencils in the interior, one-sided stencils of the same order
    at and next to the boundaries.
    """
    v, grid = _as_values(f)
    return Field(grid, diff_matrix(grid.n, order) @ v)


@lru_cache(maxsize=None)
def _trap(n):
    w = np.full(n, 1.0 / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    w.setflags(write=False)
    return w


def trapezoid_weights(n: int) -> np.ndarray:
    return _trap(n)


def integrate(f) -> float:
    """Composite trapezoid rule over [0, 1]."""
    v, grid = _as_values(f)
    return float(_trap(grid.n) @ v)
