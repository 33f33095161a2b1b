"""Kernel backend selection.

The hot inner loops (tile compositing forward and backward) exist twice: a
numba ``@njit`` version and a vectorized pure-numpy fallback.  The active backend is
chosen once at import time from the ``SPLATSR_BACKEND`` environment variable:

    SPLATSR_BACKEND=numba   use numba JIT kernels (default when numba imports)
    SPLATSR_BACKEND=numpy   force the pure-numpy fallback

``benchmarks/bench_kernels.py`` times both paths against each other.
"""

import os

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    _njit = None
    _HAVE_NUMBA = False

_requested = os.environ.get("SPLATSR_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise RuntimeError(
        f"SPLATSR_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

USE_NUMBA = _requested == "numba" and _HAVE_NUMBA

BACKEND = "numba" if USE_NUMBA else "numpy"


def jit(func):
    """Compile ``func`` with numba when the numba backend is active.

    The fallback returns the function unchanged, so modules can decorate
    loop kernels unconditionally.  Compiled functions keep ``.py_func``.
    """
    if USE_NUMBA:
        return _njit(func, cache=True, fastmath=False)
    return func
