"""Inner loops of the implicit KdV stepper.

Two interchangeable implementations share one calling convention:

* ``NumbaBackend``: explicit loops compiled with numba, banded LU with
  partial pivoting restricted to the band.
* ``NumpyBackend``: vectorized numpy plus LAPACK (``scipy.linalg.lu_factor``).

``BACKEND`` is picked at import time from ``KDVBS_BACKEND`` (see ``_accel``).
Both give the same results to rounding.
"""
import numpy as np
import scipy.linalg as sla

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def band_lu_factor(a, kl, ku):
    """In-place LU with partial pivoting of a dense-stored band matrix.

    Multipliers are kept below the diagonal without applying later row
    swaps to them (LAPACK gbtrf convention); ``band_lu_solve`` replays the
    swaps in order.
    """
    n = a.shape[0]
    piv = np.empty(n, dtype=np.int64)
    ubw = kl + ku
    for k in range(n):
        last = min(n - 1, k + kl)
        p = k
        big = abs(a[k, k])
        for i in range(k + 1, last + 1):
            if abs(a[i, k]) > big:
                big = abs(a[i, k])
                p = i
        piv[k] = p
        cmax = min(n - 1, k + ubw)
        if p != k:
            for c in range(k, cmax + 1):
                tmp = a[k, c]
                a[k, c] = a[p, c]
                a[p, c] = tmp
        if a[k, k] == 0.0:
            piv[0] = -1
            return piv
        for i in range(k + 1, last + 1):
            f = a[i, k] / a[k, k]
            a[i, k] = f
            if f != 0.0:
                for c in range(k + 1, cmax + 1):
                    a[i, c] -= f * a[k, c]
    return piv


@njit(cache=True)
def band_lu_solve(lu, piv, kl, ku, b):
    n = lu.shape[0]
    x = b.copy()
    for k in range(n):
        p = piv[k]
        if p != k:
            tmp = x[k]
            x[k] = x[p]
            x[p] = tmp
        last = min(n - 1, k + kl)
        for i in range(k + 1, last + 1):
            x[i] -= lu[i, k] * x[k]
    ubw = kl + ku
    for k in range(n - 1, -1, -1):
        s = x[k]
        cmax = min(n - 1, k + ubw)
        for c in range(k + 1, cmax + 1):
            s -= lu[k, c] * x[c]
        x[k] = s / lu[k, k]
    return x


@njit(cache=True)
def _linear_term_nb(u, h, w1):
    # -u_x - u_xxx on rows 1..n-3, zero elsewhere
    n = u.size
    out = np.zeros(n)
    c1 = 0.5 / h
    c3 = 0.5 / (h * h * h)
    # row 1: one-sided third derivative over nodes 0..4
    d3 = w1[0] * u[0] + w1[1] * u[1] + w1[2] * u[2] + w1[3] * u[3] + w1[4] * u[4]
    out[1] = -(u[2] - u[0]) * c1 - d3
    for i in range(2, n - 2):
        d3 = (-u[i - 2] + 2.0 * u[i - 1] - 2.0 * u[i + 1] + u[i + 2]) * c3
        out[i] = -(u[i + 1] - u[i - 1]) * c1 - d3
    return out


@njit(cache=True)
def _nonlinear_term_nb(u, h):
    # average of u u_x and (u^2/2)_x, centered, rows 1..n-3
    n = u.size
    out = np.zeros(n)
    c1 = 0.5 / h
    for i in range(1, n - 2):
        ux = (u[i + 1] - u[i - 1]) * c1
        flux = 0.5 * (u[i + 1] * u[i + 1] - u[i - 1] * u[i - 1]) * c1
        out[i] = 0.5 * (u[i] * ux) + 0.5 * flux
    return out


@njit(cache=True)
def _picard_nb(lu, piv, kl, ku, base, guess, h, theta_dt, nonlinear, tol, max_iter):
    n = base.size
    if not nonlinear:
        return band_lu_solve(lu, piv, kl, ku, base), 1, 0.0
    u = guess.copy()
    resid = np.inf
    for it in range(1, max_iter + 1):
        rhs = base - theta_dt * _nonlinear_term_nb(u, h)
        # boundary rows carry constraints, not dynamics
        rhs[0] = base[0]
        rhs[n - 2] = base[n - 2]
        rhs[n - 1] = base[n - 1]
        new = band_lu_solve(lu, piv, kl, ku, rhs)
        resid = 0.0
        for i in range(n):
            d = abs(new[i] - u[i])
            if d > resid:
                resid = d
        u = new
        if resid <= tol:
            return u, it, resid
    return u, max_iter, resid


# --------------------------------------------------------------------------
# numpy kernels


def _linear_term_np(u, h, w1):
    n = u.size
    out = np.zeros(n)
    out[1] = -(u[2] - u[0]) / (2 * h) - w1 @ u[:5]
    i = slice(2, n - 2)
    d3 = (-u[:n - 4] + 2 * u[1:n - 3] - 2 * u[3:n - 1] + u[4:]) / (2 * h**3)
    out[i] = -(u[3:n - 1] - u[1:n - 3]) / (2 * h) - d3
    return out


def _nonlinear_term_np(u, h):
    n = u.size
    out = np.zeros(n)
    up, um = u[2:n - 1], u[:n - 3]
    # a diverging step overflows here; the caller reports it as non-finite
    with np.errstate(over="ignore", invalid="ignore"):
        ux = (up - um) / (2 * h)
        flux = 0.5 * (up * up - um * um) / (2 * h)
        out[1:n - 2] = 0.5 * u[1:n - 2] * ux + 0.5 * flux
    return out


class NumbaBackend:
    name = "numba"

    @staticmethod
    def factor(mat, kl, ku):
        lu = np.array(mat, dtype=float)
        piv = band_lu_factor(lu, kl, ku)
        if piv[0] < 0:
            raise np.linalg.LinAlgError("singular step matrix")
        return (lu, piv, kl, ku)

    @staticmethod
    def solve(fac, b):
        lu, piv, kl, ku = fac
        return band_lu_solve(lu, piv, kl, ku, np.asarray(b, dtype=float))

    @staticmethod
    def linear_term(u, h, w1):
        return _linear_term_nb(np.asarray(u, dtype=float), h, w1)

    @staticmethod
    def nonlinear_term(u, h):
        return _nonlinear_term_nb(np.asarray(u, dtype=float), h)

    @staticmethod
    def picard(fac, base, guess, h, theta_dt, nonlinear, tol, max_iter):
        lu, piv, kl, ku = fac
        return _picard_nb(lu, piv, kl, ku, base, guess, h, theta_dt,
                          nonlinear, tol, max_iter)


class NumpyBackend:
    name = "numpy"

    @staticmethod
    def factor(mat, kl, ku):
        lu, piv = sla.lu_factor(np.asarray(mat, dtype=float), check_finite=False)
        if np.any(np.diag(lu) == 0.0):
            raise np.linalg.LinAlgError("singular step matrix")
        return (lu, piv)

    @staticmethod
    def solve(fac, b):
        return sla.lu_solve(fac, b, check_finite=False)

    linear_term = staticmethod(_linear_term_np)
    nonlinear_term = staticmethod(_nonlinear_term_np)

    @staticmethod
    def picard(fac, base, guess, h, theta_dt, nonlinear, tol, max_iter):
        if not nonlinear:
            return sla.lu_solve(fac, base, check_finite=False), 1, 0.0
        n = base.size
        u = guess.copy()
        resid = np.inf
        for it in range(1, max_iter + 1):
            rhs = base - theta_dt * _nonlinear_term_np(u, h)
            rhs[[0, n - 2, n - 1]] = base[[0, n - 2, n - 1]]
            new = sla.lu_solve(fac, rhs, check_finite=False)
            resid = float(np.abs(new - u).max())
            u = new
            if resid <= tol:
                return u, it, resid
        return u, max_iter, resid


def get_backend(name=None):
    """Backend by name; ``None`` returns the import-time default."""
    if name is None:
        return BACKEND
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        return NumbaBackend
    if name == "numpy":
        return NumpyBackend
    raise ValueError(f"unknown backend {name!r}")


BACKEND = NumbaBackend if USE_NUMBA else NumpyBackend
