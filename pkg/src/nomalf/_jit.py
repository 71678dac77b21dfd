"""Backend switch for the compiled kernels.

``NOMALF_BACKEND=numpy`` forces the pure-numpy fallbacks; the default is
numba when it imports cleanly.
"""
import os

_requested = os.environ.get("NOMALF_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"NOMALF_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba as _numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _numba = None
    HAVE_NUMBA = False

JIT_ENABLED = HAVE_NUMBA and _requested == "numba"


def njit(func=None, **kwargs):
    """``numba.njit`` when numba is installed, identity otherwise."""
    if HAVE_NUMBA:
        if func is None:
            return _numba.njit(**kwargs)
        return _numba.njit(**kwargs)(func)
    if func is not None:
        return func

    def wrapper(f):
        return f

    return wrapper


def backend() -> str:
    return "numba" if JIT_ENABLED else "numpy"


def n_threads() -> int:
    try:
        n = int(os.environ.get("NOMALF_THREADS", "0"))
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n
