"""Volterra transformations and the nonlinear coupling functionals.

    K[w] = w - int_x^1 k(x, y) w(y) dy        L[w] = w + int_x^1 l(x, y) w(y) dy
    P[w] = w - int_x^1 p(x, y) w(y) dy        R[w] = w + int_x^1 r(x, y) w(y) dy
    L1[w] = l(x, x) w + int_x^1 l_x(x, y) w(y) dy
    P1[w] = p(x, x) w - int_x^1 p_x(x, y) w(y) dy

All integrals use the trapezoid rule over the grid nodes in [x, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .grid import Field, Grid, diff
from .kernels import Kernel, KernelKind, kernel_on_grid

__all__ = [
    "VolterraOp",
    "volterra_op",
    "volterra_apply",
    "derivative_functional_apply",
    "kernel_x_on_lattice",
    "round_trip_error",
    "F_functional",
    "G_functional",
]

_SIGN = {
    KernelKind.CONTROL_K: -1,
    KernelKind.OBSERVER_P: -1,
    KernelKind.INVERSE_L: 1,
    KernelKind.INVERSE_R: 1,
}


def _trapezoid_operator(values, h):
    """Matrix T with (T w)_i = int_{x_i}^1 values[i, y] w(y) dy (trapezoid)."""
    n = values.shape[0]
    t = np.triu(values) * h
    idx = np.arange(n)
    t[idx, idx] *= 0.5
    t[:, -1] *= 0.5
    t[-1, -1] = 0.0
    return t


@dataclass(frozen=True, eq=False)
class VolterraOp:
    """``w -> w + sign * int_x^1 kernel(x, y) w(y) dy``."""

    kernel: Kernel
    sign: int
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise InvalidArgumentError(f"sign must be +1 or -1, got {self.sign!r}")

    def matrix(self, grid: Grid) -> np.ndarray:
        """Integral part as an ``(n, n)`` matrix on ``grid`` (cached)."""
        mat = self._cache.get(grid.n)
        if mat is None:
            _check_compatible(self.kernel, grid)
            mat = self.sign * _trapezoid_operator(kernel_on_grid(self.kernel, grid), grid.h)
            mat.setflags(write=False)
            self._cache[grid.n] = mat
        return mat

    def __call__(self, w):
        return volterra_apply(self, w)


def volterra_op(kernel: Kernel, sign: int | None = None) -> VolterraOp:
    """Operator with the conventional sign for ``kernel.kind`` unless given."""
    return VolterraOp(kernel, _SIGN[kernel.kind] if sign is None else sign)


def _check_compatible(kernel: Kernel, grid: Grid):
    m, n = kernel.m, grid.n
    coarse, fine = sorted((m - 1, n - 1))
    if fine % coarse != 0:
        raise InvalidArgumentError(
            f"grid with {n} nodes does not nest with kernel lattice m={m}"
        )


def volterra_apply(op: VolterraOp, w: Field) -> Field:
    """Apply a Volterra operator; the value at x = 1 passes through unchanged."""
    if not isinstance(w, Field):
        raise InvalidArgumentError("volterra_apply expects a Field")
    return Field(w.grid, w.values + op.matrix(w.grid) @ w.values)


def kernel_x_on_lattice(kern: Kernel) -> np.ndarray:
    """Second-order ``d/dx`` of a lattice kernel, stored like ``kern.values``.

    Each row ``y = y_j`` is differenced over ``0 <= x <= y_j``: centered in
    the middle, one-sided at ``x = 0`` and at the diagonal. The two shortest
    rows use the quadratic through the six corner nodes.
    """
    v = kern.values
    m, h = kern.m, kern.trigrid.h
    out = np.zeros_like(v)
    for j in range(2, m):
        row = v[: j + 1, j]
        d = np.empty(j + 1)
        d[1:-1] = (row[2:] - row[:-2]) / (2 * h)
        d[0] = (-3 * row[0] + 4 * row[1] - row[2]) / (2 * h)
        d[-1] = (3 * row[-1] - 4 * row[-2] + row[-3]) / (2 * h)
        out[: j + 1, j] = d
    # corner triangle nodes (0,0),(0,1),(1,1),(0,2),(1,2),(2,2) in units of h
    pts = np.array([(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2)], dtype=float)
    vals = np.array([v[int(a), int(b)] for a, b in pts])
    basis = np.column_stack([np.ones(6), pts[:, 0], pts[:, 1], pts[:, 0] ** 2,
                             pts[:, 0] * pts[:, 1], pts[:, 1] ** 2])
    c = np.linalg.solve(basis, vals)
    for a, b in ((0, 0), (0, 1), (1, 1)):
        out[a, b] = (c[1] + 2 * c[3] * a + c[4] * b) / h
    return out


_KX_CACHE: dict = {}


def _kernel_x_kernel(kern: Kernel) -> Kernel:
    hit = _KX_CACHE.get(id(kern))
    if hit is not None and hit[0] is kern:
        return hit[1]
    kx = Kernel(kern.trigrid, kernel_x_on_lattice(kern), kern.kind, kern.lam)
    if len(_KX_CACHE) > 32:
        _KX_CACHE.clear()
    _KX_CACHE[id(kern)] = (kern, kx)
    return kx


def derivative_functional_apply(kind: str, kernel: Kernel, w: Field) -> Field:
    """Evaluate ``L1[w]`` (``kind='L1'``, kernel ``l``) or ``P1[w]`` (``'P1'``, kernel ``p``)."""
    expected = {"L1": (KernelKind.INVERSE_L, 1), "P1": (KernelKind.OBSERVER_P, -1)}
    if kind not in expected:
        raise InvalidArgumentError(f"derivative functional must be 'L1' or 'P1', got {kind!r}")
    kk, sign = expected[kind]
    if kernel.kind is not kk:
        raise InvalidArgumentError(f"{kind} needs kernel {kk.value}, got {kernel.kind.value}")
    _check_compatible(kernel, w.grid)
    diag = np.diag(kernel_on_grid(kernel, w.grid))
    kx = _kernel_x_kernel(kernel)
    integral = _trapezoid_operator(kernel_on_grid(kx, w.grid), w.grid.h) @ w.values
    return Field(w.grid, diag * w.values + sign * integral)


def round_trip_error(forward: VolterraOp, inverse: VolterraOp, w: Field) -> float:
    """``max |inverse(forward(w)) - w|``."""
    if forward.kernel.lam != inverse.kernel.lam:
        raise InvalidArgumentError(
            f"lambda mismatch: {forward.kernel.lam} vs {inverse.kernel.lam}"
        )
    back = volterra_apply(inverse, volterra_apply(forward, w))
    return float(np.abs(back.values - w.values).max())


def _ops(kernels):
    return {name: volterra_op(kernels[name]) for name in kernels if name in "kplr"}


def F_functional(w_hat: Field, kernels) -> Field:
    """``F = K[ L[w_hat] (w_hat_x + L1[w_hat]) ]`` with kernels ``k`` and ``l``."""
    ops = _ops(kernels)
    u_hat = volterra_apply(ops["l"], w_hat)
    slope = diff(w_hat, 1) + derivative_functional_apply("L1", kernels["l"], w_hat)
    return volterra_apply(ops["k"], u_hat * slope)


def G_functional(w_hat: Field, w_tilde: Field, kernels, hat_hat_weight: float = -1.0) -> Field:
    """Coupling functional of the error target system.

    ``G = R[P[wt](wt_x + P1[wt])] + R[P[wt](wh_x + L1[wh])]
          + R[L[wh](wt_x + P1[wt])] + c R[L[wh](wh_x + L1[wh])]``

    with ``c = hat_hat_weight``. ``c = -1`` is the four-term sign pattern
    (+, +, +, -); the error system of a nonlinear plant with a nonlinear
    observer corresponds to ``c = 0`` because ``u u_x - uh uh_x`` has no
    ``uh uh_x`` part left.
    """
    if w_hat.grid != w_tilde.grid:
        raise InvalidArgumentError("w_hat and w_tilde live on different grids")
    ops = _ops(kernels)
    u_tilde = volterra_apply(ops["p"], w_tilde)
    u_hat = volterra_apply(ops["l"], w_hat)
    tilde_slope = diff(w_tilde, 1) + derivative_functional_apply("P1", kernels["p"], w_tilde)
    hat_slope = diff(w_hat, 1) + derivative_functional_apply("L1", kernels["l"], w_hat)
    inner = u_tilde * tilde_slope + u_tilde * hat_slope + u_hat * tilde_slope
    if hat_hat_weight:
        inner = inner + hat_hat_weight * (u_hat * hat_slope)
    return volterra_apply(ops["r"], inner)
