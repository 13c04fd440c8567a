"""Backend selection for the hot loops.

Set ``TARISK_BACKEND=numpy`` to force the vectorised NumPy kernels. The
default is ``numba`` when numba imports cleanly.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_requested = os.environ.get("TARISK_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"TARISK_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
