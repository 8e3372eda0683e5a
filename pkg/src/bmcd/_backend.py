"""Kernel backend selection.

Kernels are compiled with numba when it is importable. Setting
``BMCD_DISABLE_NUMBA=1`` in the environment before import routes every
dispatch in :mod:`bmcd.kernels` to the pure-numpy implementations instead.
"""
import os

DISABLE_ENV = "BMCD_DISABLE_NUMBA"

try:
    import numba
    from numba import prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    prange = range
    HAVE_NUMBA = False


def _disabled_by_env():
    return os.environ.get(DISABLE_ENV, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _disabled_by_env()


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def py_func(f):
    """The interpreted body of a (possibly) jitted function."""
    return getattr(f, "py_func", f)


def set_threads(threads):
    if HAVE_NUMBA and threads and threads > 0:
        numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
