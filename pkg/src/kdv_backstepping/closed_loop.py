"""Closed-loop experiments: plant, boundary observer and backstepping control.

Plant      u_t + u_x + u_xxx [+ u u_x] = 0,      u(0) = U, u(1) = u_x(1) = 0
Observer   uh_t + uh_x + uh_xxx [+ uh uh_x] + p1(x) (y - uh_xx(1)) = 0,
           same boundary conditions, y = u_xx(1)
Control    U = int_0^1 k(0, y) uh(y) dy   (plant state instead of uh in
           state-feedback mode)

Each time step is advanced with the plant and observer solved at the new
time level together with the control value and the output error they
produce. The coupling is resolved by fixed-point iteration started from a
linear extrapolation; one sweep of it is the staggered scheme (observer,
then control, then plant), further sweeps remove the O(dt) lag and keep the
loop second order in time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .dynamics import StepParams, check_compatible, get_stepper, measure_uxx1, substeps
from .errors import ConfigError, InvalidArgumentError, StepFailure
from .grid import Field, Grid, TriGrid, trapezoid_weights
from .kernels import Kernel, KernelKind, kernel_on_grid, observer_gain_p1, solve_kernel_set

__all__ = [
    "Mode",
    "InitialCondition",
    "ScenarioConfig",
    "Trajectory",
    "FAMILIES",
    "control_law",
    "control_gain",
    "run_scenario",
    "observer_error",
    "replay_controls",
]


class Mode(str, Enum):
    UNCONTROLLED = "Uncontrolled"
    STATE_FEEDBACK = "StateFeedback"
    OUTPUT_FEEDBACK = "OutputFeedback"


# every family vanishes with its slope at x = 1 and vanishes at x = 0
FAMILIES = {
    "zero": lambda x: np.zeros_like(x),
    "bump": lambda x: x**2 * (1 - x) ** 2,
    "sine2": lambda x: np.sin(np.pi * x) ** 2,
    "cubic": lambda x: x * (1 - x) ** 2,
}


def _lift(x):
    # unit value at x = 0, zero value and slope at x = 1
    return (1 - x) ** 2


@dataclass(frozen=True)
class InitialCondition:
    """``amplitude * FAMILIES[family](x)``."""

    family: str = "bump"
    amplitude: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(
                f"unknown initial-condition family {self.family!r}; "
                f"choose from {sorted(FAMILIES)}", key="family")
        if not math.isfinite(self.amplitude):
            raise ConfigError("amplitude must be finite", key="amplitude")

    def sample(self, grid: Grid) -> np.ndarray:
        return self.amplitude * FAMILIES[self.family](grid.x)


@dataclass(frozen=True)
class ScenarioConfig:
    """One closed-loop experiment.

    ``m`` is the kernel lattice size; ``m - 1`` and ``n - 1`` must divide one
    another so kernels can be read on the simulation grid without
    interpolation. ``t_end / dt`` must be a whole number of steps and a
    multiple of ``record_every``.
    """

    mode: Mode = Mode.OUTPUT_FEEDBACK
    plant_nonlinear: bool = False
    observer_nonlinear: bool = False
    lam: float = 8.0
    n: int = 201
    m: int = 201
    dt: float = 1e-3
    t_end: float = 4.0
    u0: InitialCondition = InitialCondition()
    uhat0: InitialCondition | None = InitialCondition("zero", 0.0)
    record_every: int = 10
    theta: float = 0.5

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
        except ValueError:
            raise ConfigError(f"unknown mode {self.mode!r}", key="mode") from None
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError(f"lambda must be finite and >= 0, got {self.lam!r}", key="lambda")
        for key in ("n", "m"):
            if getattr(self, key) < 7:
                raise ConfigError(f"{key} must be at least 7", key=key)
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError("dt must be positive", key="dt")
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ConfigError("t_end must be positive", key="t_end")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1", key="record_every")
        if not 0.5 <= self.theta <= 1:
            raise ConfigError("theta must lie in [0.5, 1]", key="theta")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("t_end must be a whole number of time steps", key="t_end")
        if round(steps) % self.record_every:
            raise ConfigError("number of steps must be a multiple of record_every",
                              key="record_every")
        coarse, fine = sorted((self.m - 1, self.n - 1))
        if fine % coarse:
            raise ConfigError(f"m={self.m} and n={self.n} do not nest", key="m")
        if self.mode is Mode.OUTPUT_FEEDBACK and self.uhat0 is None:
            raise ConfigError("OutputFeedback needs an observer initial condition", key="uhat0")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def controlled(self) -> bool:
        return self.mode is not Mode.UNCONTROLLED

    def step_params(self, nonlinear: bool) -> StepParams:
        return StepParams(dt=self.dt, theta=self.theta, nonlinear=nonlinear)


@dataclass(eq=False)
class Trajectory:
    """Recorded closed-loop run.

    Snapshots are taken every ``record_every`` steps. ``control`` and
    ``measurement`` hold ``U`` and ``y = u_xx(1)`` at the recorded times; the
    ``step_*`` arrays hold the same quantities at every (sub)step, which is
    what :func:`replay_controls` consumes. ``series`` is filled by
    :mod:`diagnostics`.
    """

    config: ScenarioConfig
    grid: Grid
    times: np.ndarray
    plant: np.ndarray
    observer: np.ndarray | None
    control: np.ndarray
    measurement: np.ndarray
    kernels: dict | None
    step_times: np.ndarray
    step_control: np.ndarray
    step_measurement: np.ndarray
    lift: float = 0.0
    series: dict = field(default_factory=dict)

    def __post_init__(self):
        size = len(self.times)
        arrays = [self.plant, self.control, self.measurement]
        if self.observer is not None:
            arrays.append(self.observer)
        if any(len(a) != size for a in arrays):
            raise InvalidArgumentError("trajectory series differ in length")

    def __len__(self):
        return len(self.times)

    def plant_field(self, index: int) -> Field:
        return Field(self.grid, self.plant[index])

    def observer_field(self, index: int) -> Field:
        if self.observer is None:
            raise InvalidArgumentError("trajectory has no observer")
        return Field(self.grid, self.observer[index])

    @property
    def plant_states(self):
        return [self.plant_field(i) for i in range(len(self))]

    @property
    def observer_states(self):
        if self.observer is None:
            return None
        return [self.observer_field(i) for i in range(len(self))]


def control_gain(k: Kernel, grid: Grid) -> np.ndarray:
    """Weights ``g`` with ``U = g @ u`` (trapezoid rule on ``k(0, .)``)."""
    if k.kind is not KernelKind.CONTROL_K:
        raise InvalidArgumentError(f"control law needs the k kernel, got {k.kind.value}")
    return kernel_on_grid(k, grid)[0] * trapezoid_weights(grid.n)


def control_law(k: Kernel, u_hat: Field) -> float:
    """``U = int_0^1 k(0, y) u_hat(y) dy``."""
    return float(control_gain(k, u_hat.grid) @ u_hat.values)


# -------------------------------------------------------------------------
# time loop

_COUPLING_MAX = 60
_U_TOL = 1e-13
_Y_TOL = 1e-10


class _System:
    """Plant or observer: state, boundary value and injection at the current time."""

    def __init__(self, u, bc, nonlinear, gain=None):
        self.u = np.array(u, dtype=float)
        self.bc = float(bc)
        self.nonlinear = nonlinear
        self.gain = gain            # injection profile, f = -gain * ytilde
        self.f = None

    def trial(self, stepper, sp, bc_next, ytilde_next=None, guess=None):
        f_next = None if self.gain is None else -self.gain * ytilde_next
        u_new, _, inc = stepper.advance(self.u, bc_next, self.f, f_next, self.nonlinear,
                                        guess, sp.picard_tol, sp.max_picard)
        if self.nonlinear and inc > sp.picard_tol:
            raise StepFailure("Picard iteration did not converge", inc)
        return u_new, f_next

    def accept(self, u_new, bc_next, f_next):
        self.u, self.bc, self.f = u_new, bc_next, f_next


def _fail(exc, t):
    if isinstance(exc, StepFailure):
        return StepFailure(exc.message, exc.residual, t)
    return StepFailure(str(exc), float("nan"), t)


def _coupled_substep(stepper, sp, t_new, plant, obs, gain, U_pred, yt_pred, y_given=None):
    """Advance plant and/or observer over one substep.

    Returns ``(U_new, y_new, ytilde_new)``. With ``y_given`` only the
    observer is advanced (replay of a recorded measurement).
    """
    U_g, yt_g = U_pred, yt_pred
    scale = max(1.0, abs(U_g))
    obs_new = plant_new = f_obs = None
    for _ in range(_COUPLING_MAX):
        if obs is not None:
            obs_new, f_obs = obs.trial(stepper, sp, U_g, yt_g, guess=None if obs_new is None else obs_new)
            U_new = float(gain @ obs_new)
        else:
            U_new = U_g
        if plant is not None:
            bc = U_new if obs is not None else U_g
            plant_new, _ = plant.trial(stepper, sp, bc, guess=plant_new)
            if obs is None:
                U_new = float(gain @ plant_new) if gain is not None else 0.0
            y_new = measure_uxx1(plant_new)
        else:
            y_new = y_given
        yt_new = y_new - measure_uxx1(obs_new) if obs is not None else 0.0
        done = (abs(U_new - U_g) <= _U_TOL * scale
                and abs(yt_new - yt_g) <= _Y_TOL * max(1.0, abs(yt_new)))
        U_g, yt_g = U_new, yt_new
        if done:
            break
    else:
        raise StepFailure("plant/observer coupling did not converge",
                          max(abs(U_new - U_g), abs(yt_new - yt_g)), t_new)
    if not (np.all(np.isfinite(obs_new if obs is not None else 0.0))
            and np.all(np.isfinite(plant_new if plant is not None else 0.0))):
        raise StepFailure("non-finite state", float("nan"), t_new)
    if obs is not None:
        # re-run with the converged values so states and inputs agree exactly
        obs_new, f_obs = obs.trial(stepper, sp, U_g, yt_g, guess=obs_new)
        obs.accept(obs_new, U_g, f_obs)
    if plant is not None:
        if obs is None and gain is None:
            U_g = 0.0
        plant_new, _ = plant.trial(stepper, sp, U_g, guess=plant_new)
        plant.accept(plant_new, U_g, None)
        y_new = measure_uxx1(plant_new)
        if obs is not None:
            yt_g = y_new - measure_uxx1(obs_new)
    return U_g, y_new, yt_g


def _initial_states(cfg: ScenarioConfig, grid: Grid, gain):
    """Initial plant and observer, lifted so that ``u(0) = U(0)`` holds."""
    f = cfg.u0.sample(grid)
    phi = _lift(grid.x)
    if cfg.mode is Mode.UNCONTROLLED:
        return f, None, 0.0, 0.0
    if cfg.mode is Mode.STATE_FEEDBACK:
        beta = float(gain @ f) / (1.0 - float(gain @ phi))
        # U(0) = gain @ u0 = beta; using beta keeps u0(0) = U(0) free of rounding
        return f + beta * phi, None, beta, beta
    g = cfg.uhat0.sample(grid)
    beta = float(gain @ g) / (1.0 - float(gain @ phi))
    return f + beta * phi, g + beta * phi, beta, beta


def run_scenario(cfg: ScenarioConfig, kernels: dict | None = None) -> Trajectory:
    """Simulate ``cfg`` and record every ``record_every`` steps.

    Kernels are solved once up front (all four, so diagnostics can reuse
    them) unless the mode is uncontrolled. Initial data from the named
    families vanish at ``x = 0``; in controlled modes a multiple of
    ``(1 - x)^2`` is added so that the plant and observer start compatible
    with ``u(0) = U(0)``.
    """
    grid = Grid(cfg.n)
    gain = p1 = None
    if cfg.controlled:
        if kernels is None:
            kernels = solve_kernel_set(cfg.lam, TriGrid(cfg.m))
        elif kernels["k"].lam != cfg.lam or kernels["k"].m != cfg.m:
            raise InvalidArgumentError("kernels do not match the configuration")
        gain = control_gain(kernels["k"], grid)
        p1 = observer_gain_p1(kernels["p"], grid).values
    else:
        kernels = None

    u0, uh0, lift, U0 = _initial_states(cfg, grid, gain)
    check_compatible(Field(grid, u0), U0, name="u0")
    plant = _System(u0, U0, cfg.plant_nonlinear)
    obs = None
    if uh0 is not None:
        check_compatible(Field(grid, uh0), U0, name="uhat0")
        obs = _System(uh0, U0, cfg.observer_nonlinear, gain=p1)

    y0 = measure_uxx1(u0)
    yt0 = y0 - measure_uxx1(uh0) if obs is not None else 0.0
    if obs is not None:
        obs.f = -p1 * yt0

    n_rec = cfg.n_steps // cfg.record_every + 1
    times = np.arange(n_rec) * (cfg.record_every * cfg.dt)
    plant_rec = np.empty((n_rec, grid.n))
    obs_rec = np.empty((n_rec, grid.n)) if obs is not None else None
    U_rec = np.empty(n_rec)
    y_rec = np.empty(n_rec)
    plant_rec[0], U_rec[0], y_rec[0] = u0, U0, y0
    if obs is not None:
        obs_rec[0] = uh0

    s_t, s_U, s_y = [0.0], [U0], [y0]
    hist_U, hist_yt = [U0, U0], [yt0, yt0]
    base_p = cfg.step_params(cfg.plant_nonlinear)
    t = 0.0
    for k in range(cfg.n_steps):
        for sp in substeps(base_p, k):
            stepper = get_stepper(grid.n, sp.dt, sp.theta)
            t_new = t + sp.dt
            # linear extrapolation (exact for the first step: constant)
            U_pred = 2 * hist_U[-1] - hist_U[-2]
            yt_pred = 2 * hist_yt[-1] - hist_yt[-2]
            try:
                if cfg.mode is Mode.UNCONTROLLED:
                    U, y, yt = _coupled_substep(stepper, sp, t_new, plant, None, None, 0.0, 0.0)
                elif cfg.mode is Mode.STATE_FEEDBACK:
                    U, y, yt = _coupled_substep(stepper, sp, t_new, plant, None, gain, U_pred, 0.0)
                else:
                    U, y, yt = _coupled_substep(stepper, sp, t_new, plant, obs, gain, U_pred, yt_pred)
            except StepFailure as exc:
                raise _fail(exc, t_new) from exc
            hist_U = [hist_U[-1], U]
            hist_yt = [hist_yt[-1], yt]
            t = t_new
            s_t.append(t)
            s_U.append(U)
            s_y.append(y)
        t = (k + 1) * cfg.dt
        if (k + 1) % cfg.record_every == 0:
            r = (k + 1) // cfg.record_every
            plant_rec[r], U_rec[r], y_rec[r] = plant.u, U, y
            if obs is not None:
                obs_rec[r] = obs.u
    return Trajectory(cfg, grid, times, plant_rec, obs_rec, U_rec, y_rec, kernels,
                      np.array(s_t), np.array(s_U), np.array(s_y), lift)


def observer_error(traj: Trajectory, index: int) -> Field:
    """``u - uh`` at recorded ``index``."""
    if traj.observer is None:
        raise InvalidArgumentError("observer error needs an OutputFeedback trajectory")
    if not -len(traj) <= index < len(traj):
        raise IndexError(f"index {index} out of range for {len(traj)} records")
    return Field(traj.grid, traj.plant[index] - traj.observer[index])


def replay_controls(traj: Trajectory, measurement=None) -> np.ndarray:
    """Recompute the control sequence from the observer alone.

    The observer is re-initialized from the recorded configuration and
    driven by ``measurement`` (defaults to ``traj.step_measurement``). The
    plant plays no part, so equality with ``traj.step_control`` shows the
    control depends on the measurement history only.
    """
    cfg = traj.config
    if cfg.mode is not Mode.OUTPUT_FEEDBACK:
        raise InvalidArgumentError("replay needs an OutputFeedback trajectory")
    y = np.asarray(traj.step_measurement if measurement is None else measurement, dtype=float)
    if y.shape != traj.step_measurement.shape:
        raise InvalidArgumentError("measurement history has the wrong length")
    grid, kernels = traj.grid, traj.kernels
    gain = control_gain(kernels["k"], grid)
    p1 = observer_gain_p1(kernels["p"], grid).values
    _, uh0, _, U0 = _initial_states(cfg, grid, gain)
    obs = _System(uh0, U0, cfg.observer_nonlinear, gain=p1)
    yt0 = y[0] - measure_uxx1(uh0)
    obs.f = -p1 * yt0
    out = [U0]
    hist_U, hist_yt = [U0, U0], [yt0, yt0]
    base_p = cfg.step_params(cfg.observer_nonlinear)
    t, j = 0.0, 0
    for k in range(cfg.n_steps):
        for sp in substeps(base_p, k):
            j += 1
            stepper = get_stepper(grid.n, sp.dt, sp.theta)
            U, _, yt = _coupled_substep(stepper, sp, t + sp.dt, None, obs, gain,
                                        2 * hist_U[-1] - hist_U[-2],
                                        2 * hist_yt[-1] - hist_yt[-2], y_given=y[j])
            t += sp.dt
            hist_U, hist_yt = [hist_U[-1], U], [hist_yt[-1], yt]
            out.append(U)
    return np.array(out)


def with_overrides(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Copy of ``cfg`` with fields replaced (validated again)."""
    return replace(cfg, **changes)
