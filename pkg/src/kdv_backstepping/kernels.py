"""Backstepping gain kernels on the triangle {0 <= x <= y <= 1}.

The four kernels share one operator,

    L[g] = g_xxx + g_yyy + g_x + g_y,

and differ in the sign of the reaction term and in where their boundary data
sit. In characteristic coordinates s = x + y, t = y - x the operator factors
as ``L = 2 d/ds (d2/ds2 + 3 d2/dt2 + 1)``. The diagonal t = 0 carries Cauchy
data, which makes any marching or local collocation scheme unstable, so the
kernels are computed by successive approximations on a spectral
representation instead: every iterate is a finite polynomial in s whose
coefficients solve oscillatory initial-value problems ``3c'' + c = q`` in t.
Those are integrated in closed form (variation of parameters) on Chebyshev
series, so each iteration is exact up to series truncation.

``l(lambda) = -k(-lambda)``, and the observer kernels are reflections of the
controller ones, ``p(x, y) = k(1 - y, 1 - x)`` and ``r(x, y) = l(1 - y, 1 - x)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .errors import ConvergenceError, InvalidArgumentError
from .grid import Field, Grid, TriGrid, trapezoid_weights

__all__ = [
    "KernelKind",
    "Kernel",
    "TraceResiduals",
    "solve_kernel",
    "solve_kernel_set",
    "trace_residuals",
    "pde_residual",
    "reciprocity_residual",
    "observer_gain_p1",
    "composite_gain_pbar",
    "kernel_on_grid",
    "write_kernel_csv",
    "read_kernel_csv",
]


class KernelKind(str, Enum):
    CONTROL_K = "k"
    OBSERVER_P = "p"
    INVERSE_L = "l"
    INVERSE_R = "r"


# sign of the reaction term: L[g] = sign * lambda * g
_PDE_SIGN = {
    KernelKind.CONTROL_K: -1.0,
    KernelKind.OBSERVER_P: 1.0,
    KernelKind.INVERSE_L: 1.0,
    KernelKind.INVERSE_R: -1.0,
}
_REFLECTED = {KernelKind.OBSERVER_P, KernelKind.INVERSE_R}
_PAIRS = {
    (KernelKind.CONTROL_K, KernelKind.INVERSE_L),
    (KernelKind.OBSERVER_P, KernelKind.INVERSE_R),
}

# --------------------------------------------------------------------------
# spectral successive approximation
#
# Coordinates: sigma = x + y - 1 in [-1, 1], tau = 2 (y - x) - 1 in [-1, 1].
# A function on the bounding rectangle is an array C[j, q] of coefficients of
# T_j(sigma) T_q(tau).

_OMEGA = 1.0 / np.sqrt(3.0)
_NT = 64  # tau modes kept
_NS_MAX = 96  # sigma modes kept


@lru_cache(maxsize=None)
def _trig_series():
    cos_s = cheb.chebinterpolate(lambda tau: np.cos(_OMEGA * (tau + 1) / 2), 32)
    sin_s = cheb.chebinterpolate(lambda tau: np.sin(_OMEGA * (tau + 1) / 2), 32)
    return cos_s, sin_s


@lru_cache(maxsize=None)
def _edge_series(j):
    # T_j(sigma) restricted to the edge y = 1, where sigma = 1 - t = (1 - tau) / 2
    return cheb.Chebyshev.basis(j)(cheb.Chebyshev([0.5, -0.5])).coef


@lru_cache(maxsize=None)
def _d2_sigma(n):
    out = np.zeros((n, n))
    for i in range(2, n):
        e = np.zeros(i + 1)
        e[i] = 1.0
        d = cheb.chebder(e, 2)
        out[: d.size, i] = d
    return out


def _fit(c, n=_NT):
    out = np.zeros(n)
    k = min(n, len(c))
    out[:k] = c[:k]
    return out


def _ivp(q, slope):
    """Series of c(t) solving 3 c'' + c = q, c(0) = 0, c'(0) = slope."""
    cos_s, sin_s = _trig_series()
    a = cheb.chebint(cheb.chebmul(cos_s, q), lbnd=-1, scl=0.5)
    b = cheb.chebint(cheb.chebmul(sin_s, q), lbnd=-1, scl=0.5)
    c = cheb.chebsub(cheb.chebmul(sin_s, a), cheb.chebmul(cos_s, b)) / (3.0 * _OMEGA)
    c = cheb.chebadd(c, sin_s * (slope / _OMEGA))
    return _fit(c)


def _solve_homogeneous(forcing, slope):
    """Solve L[v] = forcing with v = 0 on t = 0 and on y = 1, v_t = slope on t = 0.

    ``forcing`` is a coefficient array (possibly with zero rows), ``slope`` the
    sigma-series of the transverse derivative on the diagonal.
    """
    ns = min(max(forcing.shape[0] + 1, len(slope)), _NS_MAX)
    # 2 d/ds M = forcing  ->  M = antiderivative / 2 + g(t); g only feeds mode 0
    anti = np.zeros((ns, _NT))
    if forcing.shape[0]:
        f_int = 0.5 * cheb.chebint(forcing, axis=0)
        k = min(ns, f_int.shape[0])
        anti[:k] = f_int[:k]
    d = np.zeros(ns)
    d[: min(ns, len(slope))] = slope[:ns]
    d2 = _d2_sigma(ns)
    out = np.zeros((ns, _NT))
    for j in range(ns - 1, 0, -1):
        # 3 c_j'' + c_j = M_j - (d2/dsigma2 v)_j, higher modes already known
        rhs = anti[j] - d2[j, j + 1:] @ out[j + 1:]
        out[j] = _ivp(rhs, d[j])
    mode0 = np.zeros(_NT)
    for j in range(1, ns):
        mode0 = _fit(cheb.chebsub(mode0, cheb.chebmul(_edge_series(j), out[j])))
    out[0] = mode0
    return out


@lru_cache(maxsize=64)
def _series(lam, pde_sign, tol, max_iter):
    """Coefficients of the controller-oriented kernel with L[g] = pde_sign*lam*g.

    Returns (coef, iterations, last_increment). ``coef`` is read-only.
    """
    if lam == 0.0:
        coef = np.zeros((1, _NT))
        coef.setflags(write=False)
        return coef, 0, 0.0
    # g_x(x, x) = lam (1 - x) / 3  <=>  g_t(s, 0) = -lam (1 - s / 2) / 3
    slope = np.array([-lam / 6.0, lam / 6.0])  # in sigma = s - 1
    delta = _solve_homogeneous(np.zeros((0, _NT)), slope)
    coef = delta.copy()
    increment = np.inf
    for it in range(1, max_iter + 1):
        delta = _solve_homogeneous(pde_sign * lam * delta, np.zeros(1))
        if delta.shape[0] > coef.shape[0]:
            coef = np.vstack([coef, np.zeros((delta.shape[0] - coef.shape[0], _NT))])
        coef[: delta.shape[0]] += delta
        # sum of |coefficients| bounds the sup norm on the rectangle
        increment = float(np.abs(delta).sum())
        if increment <= tol * max(1.0, float(np.abs(coef).sum())):
            coef.setflags(write=False)
            return coef, it, increment
    raise ConvergenceError(
        f"kernel successive approximation did not converge in {max_iter} iterations",
        increment,
    )


def _eval_series(coef, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return cheb.chebval2d(x + y - 1.0, 2.0 * (y - x) - 1.0, coef)


# --------------------------------------------------------------------------
# public API


@dataclass(frozen=True, eq=False)
class Kernel:
    """A gain kernel sampled on a triangular lattice.

    ``values[i, j]`` is the kernel at ``(x_i, y_j)`` for ``i <= j``; entries
    below the diagonal are zero. ``solver_residual`` is the size of the last
    successive-approximation increment.
    """

    trigrid: TriGrid
    values: np.ndarray = field(repr=False)
    kind: KernelKind
    lam: float
    solver_residual: float = 0.0
    iterations: int = 0
    _coef: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        m = self.trigrid.m
        if v.shape != (m, m):
            raise InvalidArgumentError(f"kernel values must be {m}x{m}, got {v.shape}")
        v[~self.trigrid.mask] = 0.0
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("kernel values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kind", KernelKind(self.kind))

    @property
    def m(self):
        return self.trigrid.m

    def evaluate(self, x, y):
        """Evaluate the kernel off the lattice.

        Uses the underlying series when the kernel came from
        :func:`solve_kernel`, otherwise lattice interpolation.
        """
        if self._coef is not None:
            return _eval_series(self._coef, x, y)
        return _interp_lattice(self.values, self.trigrid.h, x, y)


def solve_kernel(kind, lam: float, trigrid: TriGrid, tol: float = 1e-13,
                 max_iter: int = 200) -> Kernel:
    """Solve the kernel equation of ``kind`` for design rate ``lam``.

    Raises
    ------
    InvalidArgumentError
        If ``lam`` is negative or not finite.
    ConvergenceError
        If the successive approximations stall above ``tol``.
    """
    kind = KernelKind(kind)
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise InvalidArgumentError(f"lambda must be >= 0, got {lam}")
    if not isinstance(trigrid, TriGrid):
        trigrid = TriGrid(int(trigrid))
    inverse = kind in (KernelKind.INVERSE_L, KernelKind.INVERSE_R)
    # reflected kernels satisfy the controller-oriented problem with the
    # opposite reaction sign after (x, y) -> (1 - y, 1 - x)
    base_sign = 1.0 if inverse else -1.0
    coef, iters, incr = _series(lam, base_sign, float(tol), int(max_iter))
    if kind in _REFLECTED:
        flip = (-1.0) ** np.arange(coef.shape[0])
        coef = coef * flip[:, None]
        coef.setflags(write=False)
    x = trigrid.x
    xx, yy = np.meshgrid(x, x, indexing="ij")
    values = np.where(trigrid.mask, _eval_series(coef, xx, yy), 0.0)
    return Kernel(trigrid, values, kind, lam, incr, iters, coef)


def solve_kernel_set(lam: float, trigrid: TriGrid, **kwargs) -> dict:
    """All four kernels keyed by their letter ``'k', 'p', 'l', 'r'``."""
    return {kind.value: solve_kernel(kind, lam, trigrid, **kwargs) for kind in KernelKind}


class TraceResiduals(NamedTuple):
    diagonal: float
    derivative: float
    edge: float


def _diag_target(kern):
    x = kern.trigrid.x
    if kern.kind in _REFLECTED:
        return kern.lam * x / 3.0
    return kern.lam * (1.0 - x) / 3.0


def diagonal_derivative(kern: Kernel) -> np.ndarray:
    """Second-order estimate of ``g_x(x, x)`` at every diagonal node.

    Backward x-differences inside the triangle; at the two first nodes, where
    the row is too short, ``g_x = d/dx g(x, x) - g_y`` with forward y-differences.
    """
    v = kern.values
    m = kern.m
    h = kern.trigrid.h
    out = np.empty(m)
    i = np.arange(2, m)
    out[2:] = (3 * v[i, i] - 4 * v[i - 1, i] + v[i - 2, i]) / (2 * h)
    diag = np.diag(v)
    for i in (0, 1):
        g_y = (-3 * v[i, i] + 4 * v[i, i + 1] - v[i, i + 2]) / (2 * h)
        along = (-3 * diag[i] + 4 * diag[i + 1] - diag[i + 2]) / (2 * h)
        out[i] = along - g_y
    return out


def trace_residuals(kern: Kernel) -> TraceResiduals:
    """Max-abs residuals of the three boundary conditions of ``kern``.

    The derivative condition is measured with second-order differences, so
    for a non-trivial kernel it reports the discretization floor.
    """
    v = kern.values
    diagonal = float(np.abs(np.diag(v)).max())
    derivative = float(np.abs(diagonal_derivative(kern) - _diag_target(kern)).max())
    if kern.kind in _REFLECTED:
        edge = float(np.abs(v[0, :]).max())
    else:
        edge = float(np.abs(v[:, -1]).max())
    return TraceResiduals(diagonal, derivative, edge)


def pde_residual(kern: Kernel) -> float:
    """Max-abs finite-difference residual of the kernel PDE at interior nodes.

    Centered second-order stencils, evaluated wherever they fit inside the
    triangle (``i >= 2``, ``j >= i + 2``, ``j <= m - 3``).
    """
    v = kern.values
    m, h = kern.m, kern.trigrid.h
    if m < 7:
        raise InvalidArgumentError("need m >= 7 to evaluate interior residuals")
    c = slice(2, m - 2)
    g = v[c, c]
    gxxx = (-v[0:m - 4, c] + 2 * v[1:m - 3, c] - 2 * v[3:m - 1, c] + v[4:m, c]) / (2 * h**3)
    gyyy = (-v[c, 0:m - 4] + 2 * v[c, 1:m - 3] - 2 * v[c, 3:m - 1] + v[c, 4:m]) / (2 * h**3)
    gx = (v[3:m - 1, c] - v[1:m - 3, c]) / (2 * h)
    gy = (v[c, 3:m - 1] - v[c, 1:m - 3]) / (2 * h)
    res = gxxx + gyyy + gx + gy - _PDE_SIGN[kern.kind] * kern.lam * g
    ii, jj = np.meshgrid(np.arange(2, m - 2), np.arange(2, m - 2), indexing="ij")
    ok = jj >= ii + 2
    if not ok.any():
        return 0.0
    return float(np.abs(res[ok]).max())


def _check_pair(a: Kernel, b: Kernel):
    if (a.kind, b.kind) not in _PAIRS:
        raise InvalidArgumentError(
            f"kernels ({a.kind.value}, {b.kind.value}) are not a forward/inverse pair"
        )
    if a.lam != b.lam:
        raise InvalidArgumentError(f"lambda mismatch: {a.lam} vs {b.lam}")
    if a.trigrid != b.trigrid:
        raise InvalidArgumentError("kernels live on different triangular grids")


def reciprocity_residual(forward: Kernel, inverse: Kernel) -> float:
    """Max over lattice nodes of ``|g - f - int_x^y f(x, xi) g(xi, y) dxi|``.

    ``forward`` is ``k`` (or ``p``) and ``inverse`` is ``l`` (or ``r``). The
    integral uses the trapezoid rule on the lattice nodes between x and y.
    """
    _check_pair(forward, inverse)
    f, g = forward.values, inverse.values
    h = forward.trigrid.h
    # both factors vanish outside the triangle, so the matrix product only
    # collects xi between x and y
    conv = f @ g - 0.5 * (np.diag(f)[:, None] * g + f * np.diag(g)[None, :])
    res = np.where(forward.trigrid.mask, g - f - h * conv, 0.0)
    return float(np.abs(res).max())


# --------------------------------------------------------------------------
# transferring lattice data to 1-D grids


def _interp_lattice(values, h, x, y):
    """Bilinear interpolation of lattice data, linear inside diagonal cells."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = values.shape[0]
    fx = np.clip(x / h, 0.0, m - 1.0)
    fy = np.clip(y / h, 0.0, m - 1.0)
    a = np.minimum(np.floor(fx).astype(int), m - 2)
    b = np.minimum(np.floor(fy).astype(int), m - 2)
    u = fx - a
    w = fy - b
    out = np.empty(np.broadcast(x, y).shape)
    cell = a < b
    ac, bc, uc, wc = a[cell], b[cell], u[cell], w[cell]
    out[cell] = ((1 - uc) * (1 - wc) * values[ac, bc] + uc * (1 - wc) * values[ac + 1, bc]
                 + (1 - uc) * wc * values[ac, bc + 1] + uc * wc * values[ac + 1, bc + 1])
    d = ~cell
    ad, ud, wd = a[d], u[d], w[d]
    # triangle (a, a), (a, a+1), (a+1, a+1); clamp points that sit just below it
    ud = np.minimum(ud, wd)
    out[d] = (values[ad, ad] + wd * (values[ad, ad + 1] - values[ad, ad])
              + ud * (values[ad + 1, ad + 1] - values[ad, ad + 1]))
    return out


def _resample_edge(values, grid: Grid) -> np.ndarray:
    """Move data given on ``len(values)`` uniform nodes onto ``grid``."""
    m = values.size
    n = grid.n
    if m == n:
        return np.array(values, dtype=float)
    if (m - 1) % (n - 1) == 0:
        return np.array(values[:: (m - 1) // (n - 1)], dtype=float)
    return np.interp(grid.x, np.linspace(0.0, 1.0, m), values)


def kernel_on_grid(kern: Kernel, grid: Grid) -> np.ndarray:
    """``(n, n)`` matrix of kernel values at the nodes of a 1-D grid.

    Exact lattice values when the grid nodes are a subset of the lattice,
    bilinear interpolation restricted to the triangle otherwise.
    """
    return _kernel_on_grid(kern, grid.n)


_GRID_CACHE: dict = {}


def _kernel_on_grid(kern, n):
    key = (id(kern), n)
    hit = _GRID_CACHE.get(key)
    if hit is not None and hit[0] is kern:
        return hit[1]
    m = kern.m
    if m == n:
        out = np.array(kern.values)
    elif (m - 1) % (n - 1) == 0:
        step = (m - 1) // (n - 1)
        out = np.array(kern.values[::step, ::step])
    else:
        x = np.arange(n) / (n - 1)
        xx, yy = np.meshgrid(x, x, indexing="ij")
        out = np.where(yy >= xx, _interp_lattice(kern.values, kern.trigrid.h, xx, yy), 0.0)
    out.setflags(write=False)
    if len(_GRID_CACHE) > 64:
        _GRID_CACHE.clear()
    _GRID_CACHE[key] = (kern, out)
    return out


def observer_gain_p1(p: Kernel, grid: Grid) -> Field:
    """Observer injection gain ``p1(x) = p(x, 1)`` on ``grid``."""
    if p.kind is not KernelKind.OBSERVER_P:
        raise InvalidArgumentError(f"expected an observer kernel p, got {p.kind.value}")
    return Field(grid, _resample_edge(p.values[:, -1], grid))


def composite_gain_pbar(k: Kernel, p1: Field) -> Field:
    """``pbar(x) = p1(x) - int_x^1 k(x, y) p1(y) dy`` by the trapezoid rule."""
    if k.kind is not KernelKind.CONTROL_K:
        raise InvalidArgumentError(f"expected a control kernel k, got {k.kind.value}")
    n = p1.grid.n
    kg = kernel_on_grid(k, p1.grid)
    v = p1.values
    out = np.empty(n)
    for i in range(n):
        seg = kg[i, i:] * v[i:]
        out[i] = v[i] - _trap_tail(seg, p1.grid.h)
    return Field(p1.grid, out)


def _trap_tail(seg, h):
    if seg.size < 2:
        return 0.0
    return h * (seg.sum() - 0.5 * (seg[0] + seg[-1]))


# --------------------------------------------------------------------------
# CSV exchange


def write_kernel_csv(kern: Kernel, path) -> None:
    """Write ``x,y,value`` rows for every lattice node with 17 significant digits."""
    x = kern.trigrid.x
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "value"])
        for i in range(kern.m):
            for j in range(i, kern.m):
                w.writerow([f"{x[i]:.17g}", f"{x[j]:.17g}", f"{kern.values[i, j]:.17g}"])


def read_kernel_csv(path, kind, lam: float) -> Kernel:
    """Inverse of :func:`write_kernel_csv`; values round-trip bit for bit."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["x", "y", "value"]:
        raise InvalidArgumentError(f"{path}: missing x,y,value header")
    data = np.array([[float(c) for c in r] for r in rows[1:]])
    count = data.shape[0]
    m = int(round((np.sqrt(8 * count + 1) - 1) / 2))
    if m * (m + 1) // 2 != count:
        raise InvalidArgumentError(f"{path}: {count} rows do not fill a triangular lattice")
    trigrid = TriGrid(m)
    values = np.zeros((m, m))
    iu = np.triu_indices(m)
    values[iu] = data[:, 2]
    return Kernel(trigrid, values, kind, lam)
