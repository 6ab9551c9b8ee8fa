"""Norms, Lyapunov functionals, decay fits and target-system residuals."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .closed_loop import Mode, Trajectory, observer_error
from .dynamics import measure_uxx1
from .errors import InvalidArgumentError
from .grid import Field, diff, integrate
from .kernels import composite_gain_pbar, observer_gain_p1
from .transforms import F_functional, G_functional, volterra_apply, volterra_op

__all__ = [
    "NormKind",
    "norm",
    "NormReport",
    "norm_inequality_check",
    "lyapunov_V",
    "lyapunov_W",
    "fit_decay_rate",
    "default_window",
    "target_fields",
    "target_residual",
    "equivalence_ratio",
    "annotate",
    "norm_rows",
    "summarize",
]

AGMON_CONSTANT = 1.0
# fits never use samples below this fraction of the series maximum
NOISE_FLOOR = 1e-14


class NormKind(str, Enum):
    SUP = "Sup"
    L1 = "L1"
    L2 = "L2"
    H1 = "H1"
    H2 = "H2"
    H3 = "H3"


def _l2(v, grid):
    return float(np.sqrt(integrate(Field(grid, v * v))))


def norm(f: Field, kind) -> float:
    """Discrete norm of ``f``.

    ``H_i = sqrt(sum_{j<=i} ||d^j f||_2^2)`` with derivatives from
    :func:`~kdv_backstepping.grid.diff` and the trapezoid rule.
    """
    kind = NormKind(kind)
    v = f.values
    if kind is NormKind.SUP:
        return float(np.abs(v).max())
    if kind is NormKind.L1:
        return float(integrate(Field(f.grid, np.abs(v))))
    if kind is NormKind.L2:
        return _l2(v, f.grid)
    order = int(kind.value[1])
    if f.grid.n < 2 * order + 1:
        raise InvalidArgumentError(f"grid with {f.grid.n} nodes too coarse for {kind.value}")
    total = _l2(v, f.grid) ** 2
    for j in range(1, order + 1):
        total += _l2(diff(f, j).values, f.grid) ** 2
    return float(np.sqrt(total))


@dataclass(frozen=True)
class NormReport:
    l1: float
    l2: float
    sup: float
    agmon_bound: float
    ratios: dict
    passed: bool


def norm_inequality_check(f: Field, constant: float = AGMON_CONSTANT) -> NormReport:
    """Check ``L1 <= L2 <= Sup`` and ``Sup <= c (||f|| + ||f_x||)``.

    On [0, 1] the first chain holds with constant one, and
    ``|f(x)| <= |f(x0)| + int |f_x|`` with ``|f(x0)| <= ||f||`` gives the
    second with ``c = 1``. A failure points at a discretization bug.
    """
    l1, l2, sup = (norm(f, k) for k in (NormKind.L1, NormKind.L2, NormKind.SUP))
    bound = constant * (l2 + _l2(diff(f, 1).values, f.grid))
    slack = 1e-12 * max(sup, 1e-300)

    def ratio(a, b):
        return 0.0 if b == 0 else a / b

    ratios = {"L1/L2": ratio(l1, l2), "L2/Sup": ratio(l2, sup), "Sup/agmon": ratio(sup, bound)}
    passed = l1 <= l2 + slack and l2 <= sup + slack and sup <= bound + slack
    return NormReport(l1, l2, sup, bound, ratios, bool(passed))


def _check_weights(A, B):
    if not (A > 0 and B > 0):
        raise InvalidArgumentError(f"weights A and B must be positive, got {A!r}, {B!r}")


def _sq(f):
    return float(integrate(f * f))


def lyapunov_V(w_hat: Field, w_tilde: Field, w_tilde_t: Field, A: float = 1.0, B: float = 1.0) -> float:
    """``A/2 ||wh||^2 + B/2 ||wt||^2 + B/2 ||wt_t||^2``."""
    _check_weights(A, B)
    return 0.5 * A * _sq(w_hat) + 0.5 * B * (_sq(w_tilde) + _sq(w_tilde_t))


def lyapunov_W(w_hat: Field, eta_hat: Field, w_tilde: Field, eta_tilde: Field,
               A: float = 1.0, B: float = 1.0) -> float:
    """``A/2 (||wh||^2 + ||eta_h||^2) + B/2 (||wt||^2 + ||eta_t||^2)``, ``eta = w_t``."""
    _check_weights(A, B)
    return 0.5 * A * (_sq(w_hat) + _sq(eta_hat)) + 0.5 * B * (_sq(w_tilde) + _sq(eta_tilde))


def default_window(times, values, floor: float = NOISE_FLOOR):
    """Last half of the resolved decay span of ``values``.

    The span starts at the maximum of ``|values|`` and ends before the
    series drops below ``floor * max`` or, if the run ends on a flat
    rounding plateau (the last quarter spans less than four decades and sits
    below ``1e-6 * max``), before it comes within three decades of that
    plateau. Past that point the series says nothing about decay. Returns
    ``None`` for an all-zero series.
    """
    t = np.asarray(times, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    if not v.size or v.max() == 0.0:
        return None
    peak = int(np.argmax(v))
    top = v[peak]
    cutoff = floor * top
    tail = v[-max(3, len(v) // 4):]
    if tail.min() > 0 and tail.max() < 1e-6 * top and tail.max() / tail.min() < 1e4:
        cutoff = max(cutoff, 1e3 * float(np.median(tail)))
    below = np.nonzero(v[peak:] < cutoff)[0]
    last = peak + below[0] - 1 if below.size else len(v) - 1
    last = max(last, peak)
    return (0.5 * (t[peak] + t[last]), t[last])


def fit_decay_rate(times, values, window=None):
    """Least-squares fit ``values ~ c exp(-rate t)`` over ``window = (t_a, t_b)``.

    Returns ``(c, rate)``; positive ``rate`` means decay. Without a window,
    :func:`default_window` is used.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise InvalidArgumentError("times and values must be 1-D of equal length")
    if window is None:
        window = default_window(t, v)
        if window is None:
            raise InvalidArgumentError("series is identically zero; no decay rate")
    ta, tb = window
    sel = (t >= ta - 1e-12) & (t <= tb + 1e-12)
    if sel.sum() < 10:
        raise InvalidArgumentError(f"need at least 10 samples in the window, got {int(sel.sum())}")
    if np.any(v[sel] <= 0):
        raise InvalidArgumentError("values must be positive inside the fit window")
    slope, intercept = np.polyfit(t[sel], np.log(v[sel]), 1)
    return float(np.exp(intercept)), float(-slope)


# -------------------------------------------------------------------------
# target systems


def _require_output_feedback(traj):
    if traj.config.mode is not Mode.OUTPUT_FEEDBACK or traj.observer is None:
        raise InvalidArgumentError("needs an OutputFeedback trajectory")


def target_fields(traj: Trajectory, kernels: dict, index: int):
    """``(w_hat, w_tilde) = (K[uh], R[u - uh])`` at recorded ``index``."""
    _require_output_feedback(traj)
    w_hat = volterra_apply(volterra_op(kernels["k"]), traj.observer_field(index))
    w_tilde = volterra_apply(volterra_op(kernels["r"]), observer_error(traj, index))
    return w_hat, w_tilde


def _hat_hat_weight(cfg):
    # u u_x - uh uh_x = ut ut_x + ut uh_x + uh ut_x; the uh uh_x part survives
    # only when exactly one of plant and observer carries the quadratic term
    return float(cfg.plant_nonlinear) - float(cfg.observer_nonlinear)


def target_residual(traj: Trajectory, kernels: dict | None, index: int):
    """Max-abs residuals of the two target equations at recorded ``index``.

        wh_t + wh_x + wh_xxx + lam wh + pbar wt_xx(1) + F = 0
        wt_t + wt_x + wt_xxx + lam wt + G = 0

    Time derivatives are central differences over the neighbouring records,
    space derivatives come from :func:`diff`, ``wt_xx(1)`` from the one-sided
    measurement stencil. ``F`` enters when the observer is nonlinear and
    ``G`` collects whatever quadratic terms plant and observer do not share.
    Residuals are taken over interior nodes.
    """
    _require_output_feedback(traj)
    kernels = kernels or traj.kernels
    if not 1 <= index <= len(traj) - 2:
        raise InvalidArgumentError(f"index {index} has no neighbours on both sides")
    cfg = traj.config
    lam = cfg.lam
    if kernels["k"].lam != lam:
        raise InvalidArgumentError("kernels were solved for a different lambda")
    prev, mid, nxt = (target_fields(traj, kernels, i) for i in (index - 1, index, index + 1))
    dt2 = traj.times[index + 1] - traj.times[index - 1]
    grid = traj.grid
    wh, wt = mid
    wh_t = (nxt[0] - prev[0]) / dt2
    wt_t = (nxt[1] - prev[1]) / dt2

    p1 = observer_gain_p1(kernels["p"], grid)
    pbar = composite_gain_pbar(kernels["k"], p1)
    res_hat = wh_t + diff(wh, 1) + diff(wh, 3) + lam * wh + pbar * measure_uxx1(wt)
    if cfg.observer_nonlinear:
        res_hat = res_hat + F_functional(wh, kernels)
    res_tilde = wt_t + diff(wt, 1) + diff(wt, 3) + lam * wt
    weight = _hat_hat_weight(cfg)
    if cfg.plant_nonlinear:
        res_tilde = res_tilde + G_functional(wh, wt, kernels, hat_hat_weight=weight)
    elif cfg.observer_nonlinear:
        res_tilde = res_tilde + G_functional(wh, grid.zeros(), kernels, hat_hat_weight=weight)
    inner = slice(1, grid.n - 1)
    return (float(np.abs(res_hat.values[inner]).max()),
            float(np.abs(res_tilde.values[inner]).max()))


def _target_history(traj, kernels):
    wh = np.empty_like(traj.observer)
    wt = np.empty_like(traj.observer)
    for i in range(len(traj)):
        a, b = target_fields(traj, kernels, i)
        wh[i], wt[i] = a.values, b.values
    return wh, wt


def _time_derivative(series, times):
    if len(times) < 3:
        return np.zeros_like(series)
    return np.gradient(series, times, axis=0, edge_order=2)


def equivalence_ratio(traj: Trajectory, kernels: dict | None = None):
    """``||wt_t|| / ||wt||_H3`` per record (``nan`` where the error vanishes)."""
    _require_output_feedback(traj)
    kernels = kernels or traj.kernels
    _, wt = _target_history(traj, kernels)
    wt_t = _time_derivative(wt, traj.times)
    g = traj.grid
    out = np.full(len(traj), np.nan)
    for i in range(len(traj)):
        h3 = norm(Field(g, wt[i]), NormKind.H3)
        if h3 > 0:
            out[i] = _l2(wt_t[i], g) / h3
    return out


def annotate(traj: Trajectory, A: float = 1.0, B: float = 1.0) -> dict:
    """Fill ``traj.series`` with norm and Lyapunov series and return it.

    Keys: ``L2_plant``, ``H3_plant`` and, with an observer, the same for
    ``observer`` and ``error`` plus ``V`` and ``W``. ``eta = w_t`` comes
    from central differences of the recorded target states.
    """
    g = traj.grid
    s = {}
    fields = {"plant": traj.plant}
    if traj.observer is not None:
        fields["observer"] = traj.observer
        fields["error"] = traj.plant - traj.observer
    for name, arr in fields.items():
        s[f"L2_{name}"] = np.array([_l2(r, g) for r in arr])
        s[f"H3_{name}"] = np.array([norm(Field(g, r), NormKind.H3) for r in arr])
    if traj.observer is not None and traj.kernels is not None:
        wh, wt = _target_history(traj, traj.kernels)
        eh = _time_derivative(wh, traj.times)
        et = _time_derivative(wt, traj.times)
        s["V"] = np.array([lyapunov_V(Field(g, wh[i]), Field(g, wt[i]), Field(g, et[i]), A, B)
                           for i in range(len(traj))])
        s["W"] = np.array([lyapunov_W(Field(g, wh[i]), Field(g, eh[i]), Field(g, wt[i]),
                                      Field(g, et[i]), A, B) for i in range(len(traj))])
    traj.series.update(s)
    return traj.series


def norm_rows(traj: Trajectory):
    """Rows ``(t, kind, plant, observer, error)`` for the norms table."""
    s = traj.series or annotate(traj)
    nan = np.full(len(traj), np.nan)
    rows = []
    for kind in ("L2", "H3"):
        plant = s[f"{kind}_plant"]
        obs = s.get(f"{kind}_observer", nan)
        err = s.get(f"{kind}_error", nan)
        rows.extend((traj.times[i], kind, plant[i], obs[i], err[i]) for i in range(len(traj)))
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def _rate_entry(times, values):
    try:
        window = default_window(times, values)
        if window is None:
            return {"rate": None, "c": None, "window": None, "status": "undefined: zero series"}
        c, rate = fit_decay_rate(times, values, window)
        return {"rate": rate, "c": c, "window": list(window), "status": "ok"}
    except InvalidArgumentError as exc:
        return {"rate": None, "c": None, "window": None, "status": f"undefined: {exc}"}


def summarize(traj: Trajectory) -> dict:
    """Structured summary: fitted rates, kernel residuals, target residuals."""
    from .kernels import pde_residual, trace_residuals

    s = traj.series or annotate(traj)
    out = {"mode": traj.config.mode.value, "lambda": traj.config.lam, "rates": {}}
    for key, series in s.items():
        out["rates"][key] = _rate_entry(traj.times, series)
    t_end = traj.times[-1]
    out["final"] = {k: float(v[-1]) for k, v in s.items()}
    out["initial"] = {k: float(v[0]) for k, v in s.items()}
    out["t_end"] = float(t_end)
    if traj.kernels is not None:
        kr = {}
        for name, kern in traj.kernels.items():
            tr = trace_residuals(kern)
            kr[name] = {"solver": kern.solver_residual, "iterations": kern.iterations,
                        "pde": pde_residual(kern), "diagonal": tr.diagonal,
                        "derivative": tr.derivative, "edge": tr.edge}
        out["kernel_residuals"] = kr
    if traj.config.mode is Mode.OUTPUT_FEEDBACK and len(traj) >= 3:
        window = out["rates"]["L2_plant"]["window"]
        t_probe = window[0] if window else traj.times[1]
        idx = int(np.clip(np.searchsorted(traj.times, t_probe), 1, len(traj) - 2))
        rh, rt = target_residual(traj, traj.kernels, idx)
        out["target_residual"] = {"t": float(traj.times[idx]), "hat": rh, "tilde": rt}
    return out
