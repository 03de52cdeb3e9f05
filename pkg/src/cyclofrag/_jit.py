"""Switch between numba-compiled kernels and their pure-numpy twins.

Set ``CYCLOFRAG_NO_JIT=1`` to force the numpy path (useful for debugging
and for environments without a working numba/LLVM).
"""

import os

_DISABLED = os.environ.get("CYCLOFRAG_NO_JIT", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("disabled by CYCLOFRAG_NO_JIT")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    njit = None
    HAVE_NUMBA = False


def use_jit() -> bool:
    """True when the compiled kernels are active."""
    return HAVE_NUMBA


def jit(func):
    """``njit(cache=True)`` when numba is active, identity otherwise."""
    if HAVE_NUMBA:
        return njit(cache=True, fastmath=False)(func)
    return func
