"""Numba switch.

Every hot kernel in this package exists twice: a ``@njit`` loop version and a
vectorised numpy version.  ``USE_NUMBA`` picks the default; set
``SGDIFF_PURE_NUMPY=1`` in the environment to force the numpy path (useful
for debugging and for platforms without numba).
"""
from __future__ import annotations

import os

# avoid numba probing an incompatible TBB on import of parallel kernels
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_TRUTHY = {"1", "true", "yes", "on"}

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("SGDIFF_PURE_NUMPY", "").strip().lower() not in _TRUTHY


def njit(*args, **kwargs):
    """``numba.njit(cache=True)``; identity decorator when numba is missing."""
    kwargs.setdefault("cache", True)
    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


prange = range if numba is None else numba.prange


def set_threads(n: int | None) -> None:
    """Cap numba's worker pool; no-op on the numpy path."""
    if n is None or numba is None:
        return
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
