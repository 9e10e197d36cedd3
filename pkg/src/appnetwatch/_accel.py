"""JIT backend selection.

The hot kernels in :mod:`appnetwatch.kernels` come in two flavours: a numba
``@njit`` version and a pure-numpy version. Numba is used when it imports and
the environment variable ``APPNETWATCH_DISABLE_NUMBA`` is not set to a truthy
value. Both paths produce identical results; the flag exists for debugging,
for platforms without numba, and for the benchmark in ``benchmarks/``.
"""

import functools
import os

DISABLE_ENV = "APPNETWATCH_DISABLE_NUMBA"

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    numba = None
    HAVE_NUMBA = False


def _flag_set(value):
    return value.strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _flag_set(os.environ.get(DISABLE_ENV, ""))

if HAVE_NUMBA:
    jit = functools.partial(numba.njit, cache=True, nogil=True)
else:  # pragma: no cover
    def jit(func=None, **kwargs):
        if func is None:
            return lambda f: f
        return func
