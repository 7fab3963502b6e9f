"""Backend selection for the hot kernels.

Every kernel module defines a numba version and a pure-numpy version of the
same loop. ``STEREOMAMBA_NUMBA=0`` (or a missing numba install) forces the
numpy path; :func:`set_backend` switches at runtime, which the benchmarks use
to time both paths in one process.
"""

import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

_ENABLED = HAS_NUMBA and os.environ.get("STEREOMAMBA_NUMBA", "1").lower() not in ("0", "false", "no", "off")


def njit(fn):
    """``numba.njit(cache=True)`` when numba is importable, else identity."""
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True)(fn)


def njit_fast(fn):
    """Like :func:`njit` but lets LLVM reassociate sums so inner loops vectorize.

    The compiled reduction order is still fixed, so outputs stay run-to-run
    identical; they may differ from the numpy path in the last bits.
    """
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath={"reassoc", "contract", "nsz", "arcp"})(fn)


def use_numba():
    return _ENABLED


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels; returns the previous name."""
    global _ENABLED
    prev = backend()
    if name == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba is not installed")
        _ENABLED = True
    elif name == "numpy":
        _ENABLED = False
    else:
        raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")
    return prev


def backend():
    return "numba" if _ENABLED else "numpy"


def thread_cap():
    """Worker cap from ``STEREOMAMBA_THREADS`` (default: machine cores)."""
    raw = os.environ.get("STEREOMAMBA_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1
