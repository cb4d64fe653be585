"""Optional numba acceleration.

Set ``BSHAPE_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
The kernels are written so that both paths produce identical results.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_DISABLED = os.environ.get("BSHAPE_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")
USE_NUMBA = numba is not None and not NUMBA_DISABLED


def njit(func=None, **kwargs):
    """``numba.njit(cache=True, nogil=True)`` or the identity, depending on the env flag."""
    if func is None:
        return lambda f: njit(f, **kwargs)
    if not USE_NUMBA:
        return func
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)
    return numba.njit(**opts)(func)
