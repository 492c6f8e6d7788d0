"""Kernel backend selection.

Hot kernels come in two flavours: a loop implementation compiled with
numba's ``@njit`` and a vectorised pure-numpy twin.  ``SOELAB_BACKEND``
chooses which one the public kernel names resolve to at import time:

    SOELAB_BACKEND=numba   (default when numba imports)
    SOELAB_BACKEND=numpy   (never touches numba)
"""

from __future__ import annotations

import os

_requested = os.environ.get("SOELAB_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"SOELAB_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    if _requested == "numpy":
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None

HAVE_NUMBA = _numba is not None
BACKEND = "numba" if HAVE_NUMBA else "numpy"


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if _numba is None:
        return fn
    return _numba.njit(cache=True, nogil=True)(fn)


def pick(numba_impl, numpy_impl):
    return numba_impl if HAVE_NUMBA else numpy_impl
