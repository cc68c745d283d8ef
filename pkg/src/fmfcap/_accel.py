"""Numba switch.

Hot kernels are written once as plain Python loops and compiled with
``numba.njit`` unless ``FMFCAP_NO_NUMBA=1`` is set (or numba is missing), in
which case callers dispatch to the vectorised numpy fallbacks instead.
"""

import os

_DISABLED = os.environ.get("FMFCAP_NO_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAS_NUMBA = True

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)

except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def use_numba() -> bool:
    return HAS_NUMBA
