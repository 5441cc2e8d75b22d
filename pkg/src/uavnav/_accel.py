"""Backend selection for the numeric kernels.

Set ``UAVNAV_DISABLE_NUMBA=1`` to force the pure-numpy path. The flag is
read once at import time.
"""
import os

DISABLED = os.environ.get("UAVNAV_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    from numba import njit as _njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLED


def njit(fn):
    """``numba.njit(cache=True)`` when numba is importable, else identity."""
    if not HAS_NUMBA:
        return fn
    return _njit(cache=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
