"""Implicit time stepping of the forced KdV equation

    u_t + u_x + u_xxx [+ u u_x] = f(x, t),   u(0) = U(t), u(1) = 0, u_x(1) = 0

on a uniform grid with the theta-scheme (Crank-Nicolson for theta = 1/2).

Rows of the step matrix: row 0 imposes the left Dirichlet value, rows
``1..n-3`` carry the PDE, row ``n-2`` imposes ``u_x(1) = 0`` with a
second-order one-sided difference and row ``n-1`` imposes ``u(1) = 0``.
The matrix does not depend on the state, so it is factored once per
``(n, dt, theta)``. The quadratic term is iterated to convergence (Picard)
using the skew-symmetric split ``(u u_x + (u^2/2)_x) / 2``.

Crank-Nicolson barely damps grid-scale modes, and initial data that meet
only the first compatibility conditions excite them at t = 0. Drivers
therefore replace the first ``startup`` steps by two backward-Euler half
steps each (Rannacher start-up, see :func:`substeps`); this keeps second
order and removes the spurious slowly decaying tail.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import ConfigError, InvalidArgumentError, StepFailure
from .grid import Field, Grid, diff, fd_weights

__all__ = [
    "StepParams",
    "SimState",
    "Stepper",
    "get_stepper",
    "spatial_operator",
    "step",
    "substeps",
    "measure_uxx1",
    "check_compatible",
]


@dataclass(frozen=True)
class StepParams:
    """Time-stepping controls.

    Parameters
    ----------
    dt : float
        Step size, positive.
    theta : float
        Implicitness in ``[0.5, 1]``; 0.5 is second order in time.
    nonlinear : bool
        Include ``u u_x``.
    max_picard : int
        Cap on fixed-point sweeps for the quadratic term.
    picard_tol : float
        Max-norm increment, relative to ``max(1, max|u|)``, at which the
        sweeps stop.
    startup : int
        Leading steps taken as two backward-Euler half steps by drivers
        that use :func:`substeps`. :func:`step` itself ignores it.
    """

    dt: float = 1e-3
    theta: float = 0.5
    nonlinear: bool = False
    max_picard: int = 50
    picard_tol: float = 1e-12
    startup: int = 4

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidArgumentError(f"dt must be positive, got {self.dt!r}")
        if not (0.5 <= self.theta <= 1.0):
            raise InvalidArgumentError(f"theta must lie in [0.5, 1], got {self.theta!r}")
        if self.max_picard < 1:
            raise InvalidArgumentError("max_picard must be at least 1")
        if not self.picard_tol > 0:
            raise InvalidArgumentError("picard_tol must be positive")
        if self.startup < 0:
            raise InvalidArgumentError("startup must be non-negative")


def substeps(params: StepParams, index: int) -> tuple:
    """Step parameters making up step ``index`` (0-based) of a run."""
    if index < params.startup:
        half = replace(params, dt=params.dt / 2, theta=1.0, startup=0)
        return (half, half)
    return (params,)


@dataclass(frozen=True)
class SimState:
    """Solution at time ``t`` together with the data it was advanced with.

    ``bc_left`` is the Dirichlet value ``u(0, t)``; ``injection`` is the
    source ``f(., t)`` (``None`` means zero).
    """

    t: float
    u: Field
    bc_left: float = 0.0
    injection: Field | None = None


def _interior_d3_row1(h):
    return fd_weights(np.arange(-1, 4), 3) / h**3


class Stepper:
    """Factored theta-scheme matrix for one ``(n, dt, theta)``."""

    kl, ku = 2, 3

    def __init__(self, n, dt, theta, backend=None):
        self.grid = Grid(n)
        self.dt, self.theta = float(dt), float(theta)
        self.backend = _kernels.get_backend(backend)
        h = self.grid.h
        self.h = h
        self.w1 = np.ascontiguousarray(_interior_d3_row1(h))
        self.matrix = self._assemble()
        self._fac = self.backend.factor(self.matrix, self.kl, self.ku)

    def _assemble(self):
        n, h, c = self.grid.n, self.h, self.theta * self.dt
        mat = np.zeros((n, n))
        mat[0, 0] = 1.0
        # implicit part of u_t = A u with A = -D1 - D3
        mat[1, 0:3] += c * np.array([-1.0, 0.0, 1.0]) / (2 * h)
        mat[1, 0:5] += c * self.w1
        d3 = np.array([-1.0, 2.0, 0.0, -2.0, 1.0]) / (2 * h**3)
        for i in range(2, n - 2):
            mat[i, i - 1] -= c / (2 * h)
            mat[i, i + 1] += c / (2 * h)
            mat[i, i - 2:i + 3] += c * d3
        idx = np.arange(1, n - 2)
        mat[idx, idx] += 1.0
        mat[n - 2, n - 3:] = [0.5, -2.0, 1.5]
        mat[n - 1, n - 1] = 1.0
        return mat

    def advance(self, u, bc_next, f_now=None, f_next=None, nonlinear=False,
                guess=None, picard_tol=1e-12, max_picard=50):
        """One step from nodal values ``u``.

        Returns ``(u_new, sweeps, increment)`` with the last Picard increment
        relative to ``max(1, max|u|)``.
        """
        be, dt, th, h = self.backend, self.dt, self.theta, self.h
        u = np.asarray(u, dtype=float)
        n = u.size
        base = u + (1 - th) * dt * be.linear_term(u, h, self.w1)
        if nonlinear:
            base -= (1 - th) * dt * be.nonlinear_term(u, h)
        if f_now is not None:
            base[1:n - 2] += (1 - th) * dt * np.asarray(f_now)[1:n - 2]
        if f_next is not None:
            base[1:n - 2] += th * dt * np.asarray(f_next)[1:n - 2]
        base[0] = bc_next
        base[n - 2] = 0.0
        base[n - 1] = 0.0
        if guess is None:
            guess = u
        scale = max(1.0, float(np.abs(u).max()))
        u_new, sweeps, inc = be.picard(self._fac, base, np.asarray(guess, dtype=float), h,
                                       th * dt, bool(nonlinear), float(picard_tol) * scale,
                                       int(max_picard))
        return u_new, sweeps, inc / scale


@lru_cache(maxsize=16)
def _cached_stepper(n, dt, theta, backend):
    return Stepper(n, dt, theta, backend)


def get_stepper(n, dt, theta=0.5, backend=None) -> Stepper:
    return _cached_stepper(int(n), float(dt), float(theta), backend)


def spatial_operator(u: Field, nonlinear: bool = False) -> Field:
    """``-u_x - u_xxx [- u u_x]`` at the interior nodes.

    Uses the stencils of the stepper (the quadratic term in its split form).
    Boundary entries are zero; they belong to the boundary conditions.
    """
    if not isinstance(u, Field):
        raise InvalidArgumentError("spatial_operator expects a Field")
    if u.grid.n < 7:
        raise InvalidArgumentError("spatial_operator needs at least 7 nodes")
    v = u.values
    out = -diff(u, 1).values - diff(u, 3).values
    if nonlinear:
        ux = diff(u, 1).values
        out -= 0.5 * v * ux + 0.25 * diff(v * v, 1).values
    out[0] = out[-1] = 0.0
    return Field(u.grid, out)


def step(state: SimState, params: StepParams, bc_left_next: float = 0.0,
         injection_next: Field | None = None, guess=None) -> SimState:
    """Advance ``state`` by ``params.dt``.

    The injection enters theta-weighted between ``state.injection`` and
    ``injection_next``. Raises :class:`StepFailure` if the quadratic term
    does not converge or the result is not finite.
    """
    grid = state.u.grid
    for f in (state.injection, injection_next):
        if f is not None and f.grid != grid:
            raise InvalidArgumentError("injection lives on a different grid")
    st = get_stepper(grid.n, params.dt, params.theta)
    f_now = None if state.injection is None else state.injection.values
    f_next = None if injection_next is None else injection_next.values
    u_new, sweeps, inc = st.advance(
        state.u.values, float(bc_left_next), f_now, f_next, params.nonlinear,
        guess, params.picard_tol, params.max_picard,
    )
    t_new = state.t + params.dt
    if not np.all(np.isfinite(u_new)):
        raise StepFailure("non-finite solution", float("nan"), t_new)
    if params.nonlinear and inc > params.picard_tol:
        raise StepFailure("Picard iteration did not converge", inc, t_new)
    return SimState(t_new, Field(grid, u_new), float(bc_left_next), injection_next)


def measure_uxx1(u) -> float:
    """Second-order one-sided ``u_xx(1)`` from the last four nodes."""
    v = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    n = v.size
    if n < 4:
        raise InvalidArgumentError("need at least 4 nodes")
    h = 1.0 / (n - 1)
    return float((2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / h**2)


def check_compatible(u0: Field, bc_left: float = 0.0, atol: float = 1e-9, name: str = "u0"):
    """Reject initial data that violate the boundary conditions.

    Checks ``u(1) = 0`` and ``u(0) = bc_left`` to ``atol`` (scaled by the
    field size) and ``u_x(1) = 0`` up to the truncation error of the
    one-sided difference, ``h^2 max|u_xxx| / 3``, with a safety factor 3.
    """
    v = u0.values
    scale = max(1.0, float(np.abs(v).max()))
    h = u0.grid.h
    if abs(v[-1]) > atol * scale:
        raise ConfigError(f"{name}(1) = {v[-1]:.3g}, must vanish", key=name)
    if abs(v[0] - bc_left) > atol * scale:
        raise ConfigError(
            f"{name}(0) = {v[0]:.6g} differs from the boundary value {bc_left:.6g}", key=name
        )
    slope = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
    truncation = h * h * float(np.abs(diff(u0, 3).values).max())
    if abs(slope) > atol * scale + truncation:
        raise ConfigError(f"{name}_x(1) = {slope:.3g}, must vanish", key=name)
