"""Numba availability switch.

Set ``WAMO_DISABLE_NUMBA=1`` before importing :mod:`wamo` to force the
pure-numpy kernel path (useful for debugging and for the benchmark).
"""
import os

_DISABLED = os.environ.get("WAMO_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by WAMO_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def set_threads(n):
    """Cap BLAS (and numba, when present) worker threads."""
    from threadpoolctl import threadpool_limits

    threadpool_limits(limits=int(n))
    if HAS_NUMBA:
        import numba

        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
