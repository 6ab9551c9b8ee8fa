"""Optional numba acceleration.

Set ``KDVBS_BACKEND=numpy`` to force the pure numpy/scipy code paths even
when numba is importable. Any other value (or unset) uses numba if present.
"""
import os


def _noop_jit(*args, **kwargs):
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(f):
        return f

    return wrap


def _have_numba():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


HAVE_NUMBA = _have_numba()
REQUESTED = os.environ.get("KDVBS_BACKEND", "numba").strip().lower()
USE_NUMBA = HAVE_NUMBA and REQUESTED != "numpy"

if HAVE_NUMBA:
    from numba import njit
else:
    njit = _noop_jit

BACKEND = "numba" if USE_NUMBA else "numpy"
