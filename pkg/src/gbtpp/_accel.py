"""Switch between numba-compiled kernels and the plain numpy path.

Set ``GBTPP_DISABLE_NUMBA=1`` before import to run every kernel as ordinary
Python/numpy. Both paths execute the same source, so results agree to
floating-point reassociation only.
"""
from __future__ import annotations

import os

_FLAG = os.environ.get("GBTPP_DISABLE_NUMBA", "").strip().lower()
NUMBA_REQUESTED = _FLAG not in ("1", "true", "yes", "on")

try:
    if not NUMBA_REQUESTED:
        raise ImportError
    import numba as _numba

    USE_NUMBA = True
except ImportError:
    _numba = None
    USE_NUMBA = False


def kernel(fn=None, **options):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""

    def wrap(f):
        if USE_NUMBA:
            opts = {"cache": True}
            opts.update(options)
            return _numba.njit(**opts)(f)
        return f

    if fn is not None:
        return wrap(fn)
    return wrap


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
