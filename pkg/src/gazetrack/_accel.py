"""Optional numba acceleration.

Set ``GAZETRACK_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when
numba is importable.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
NUMBA_DISABLED = os.environ.get("GAZETRACK_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
    "on",
)
USE_NUMBA = NUMBA_AVAILABLE and not NUMBA_DISABLED


def njit(func):
    """Compile ``func`` with numba when available, otherwise return it as is."""
    if not NUMBA_AVAILABLE:
        return func
    return numba.njit(cache=True, nogil=True)(func)
