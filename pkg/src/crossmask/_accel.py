"""Numba switch.

Set ``CROSSMASK_DISABLE_NUMBA=1`` to force the pure numpy/scipy kernels.
When numba is missing the numpy path is used automatically.
"""
import os
import warnings

_DISABLED = os.environ.get("CROSSMASK_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    _numba_njit = None

USE_NUMBA = HAVE_NUMBA and not _DISABLED

if _DISABLED is False and not HAVE_NUMBA:  # pragma: no cover
    warnings.warn("numba not importable; falling back to numpy kernels")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise.

    The jitted variants are always compiled when numba is importable so the
    two paths can be compared side by side; ``USE_NUMBA`` only decides which
    one the public kernels dispatch to.
    """
    if _numba_njit is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _numba_njit(*args, **kwargs)
