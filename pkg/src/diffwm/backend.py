"""Kernel backend selection.

The heavy inner loops (im2col/col2im for convolutions, 2x2 max pooling) exist
in two functionally identical versions: numba ``@njit`` kernels and plain
numpy. The active backend is chosen once at import time from the
``DIFFWM_BACKEND`` environment variable:

    DIFFWM_BACKEND=numba   force numba kernels (error if numba is missing)
    DIFFWM_BACKEND=numpy   force the pure-numpy fallback
    unset                  numba if importable, numpy otherwise

``benchmarks/benchmark_backends.py`` times the two side by side.
"""

import ctypes
import os

_VALID = ("numba", "numpy")


def _tune_allocator():
    """Serve large allocations from the heap instead of fresh mmaps.

    The training hot loops cycle many multi-megabyte scratch arrays; on
    sandboxed kernels the page faults from repeated mmap/munmap dominate
    runtime. Raising the malloc mmap threshold lets glibc reuse the pages.
    Best effort: silently skipped on non-glibc platforms.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_allocator()


def _detect() -> str:
    choice = os.environ.get("DIFFWM_BACKEND", "").strip().lower()
    if choice and choice not in _VALID:
        raise RuntimeError(
            f"DIFFWM_BACKEND must be one of {_VALID}, got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise RuntimeError("DIFFWM_BACKEND=numba but numba is not installed")
        return "numpy"
    return "numba"


ACTIVE = _detect()


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return ACTIVE
