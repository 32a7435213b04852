"""Backend selection for the numeric kernels.

Set ``IMPAIRSIM_BACKEND=numpy`` to force the pure-numpy path; the default is
numba when it imports cleanly.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None


def _requested_backend():
    value = os.environ.get("IMPAIRSIM_BACKEND", "numba").strip().lower()
    if value not in ("numba", "numpy"):
        raise ValueError(f"IMPAIRSIM_BACKEND must be 'numba' or 'numpy', got {value!r}")
    return value


BACKEND = "numba" if (_requested_backend() == "numba" and HAVE_NUMBA) else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
