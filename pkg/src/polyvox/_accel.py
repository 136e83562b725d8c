"""Numba switch.

Set ``POLYVOX_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. to
debug or to compare against the jitted path.
"""
import os
import warnings

DISABLED = os.environ.get("POLYVOX_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


USE_NUMBA = HAVE_NUMBA and not DISABLED

if DISABLED is False and not HAVE_NUMBA:  # pragma: no cover
    warnings.warn("numba not importable, falling back to numpy kernels")
