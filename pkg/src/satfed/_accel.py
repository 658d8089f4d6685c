"""Numba toggle.

Set ``SATFED_NUMBA=0`` to run every kernel through its pure-numpy path.
The flag is read once at import time.
"""
from __future__ import annotations

import os

_FLAG = os.environ.get("SATFED_NUMBA", "1").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _numba is not None and _FLAG not in ("0", "false", "no", "off")


def njit(func):
    """``numba.njit(cache=True)`` when available, otherwise the plain function."""
    if _numba is None:
        return func
    return _numba.njit(cache=True)(func)
