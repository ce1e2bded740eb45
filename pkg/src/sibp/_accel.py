"""Numba acceleration layer.

Hot sampling loops are compiled with numba's ``@njit`` when available.
Setting the environment variable ``SIBP_NUMBA=0`` selects the pure
numpy/python fallback: the same function bodies run uncompiled and, because
numba reproduces numpy's ``Generator`` streams bit for bit, both paths draw
identical random sequences.  ``benchmarks/bench_backends.py`` compares the
two paths.
"""

import os

try:
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SIBP_NUMBA", "1") != "0"


def maybe_jit(func):
    """Compile ``func`` with numba when enabled, else return it unchanged."""
    if USE_NUMBA:
        return _numba.njit(cache=True)(func)
    return func
