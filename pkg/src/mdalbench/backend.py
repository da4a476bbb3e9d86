"""Numeric backend selection.

The hot kernels in :mod:`mdalbench.kernels` exist in two variants: a loop
version compiled with numba's ``@njit`` and a vectorized pure-numpy fallback.
Which variants the package uses is fixed at import time by the environment
variable ``MDALBENCH_BACKEND``:

* ``auto`` (default) - the measured-fastest mix: jit for the row-wise
  kernels, BLAS-backed numpy for the matmul-shaped ones (falls back to pure
  numpy when numba is missing)
* ``numba``          - jit everything; fail loudly if numba is missing
* ``numpy``          - pure numpy everywhere

Both variants of every kernel stay importable regardless of the flag so the
benchmark in ``benchmarks/bench_backends.py`` can time them side by side.
"""

import os

_ENV_VAR = "MDALBENCH_BACKEND"
_CHOICES = ("auto", "numba", "numpy")


def _numba_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _pick_backend():
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if choice not in _CHOICES:
        raise ValueError(
            f"{_ENV_VAR}={choice!r} is not valid; expected one of {_CHOICES}"
        )
    if choice == "numpy":
        return "numpy"
    if _numba_available():
        return "numba"
    if choice == "numba":
        raise ImportError(f"{_ENV_VAR}=numba but numba is not importable")
    return "numpy"


ACTIVE_BACKEND = _pick_backend()

# True only when the user explicitly demanded jit for every kernel
FORCE_JIT = os.environ.get(_ENV_VAR, "auto").strip().lower() == "numba"


def njit_compile(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    try:
        import numba
    except ImportError:
        return func
    return numba.njit(cache=True)(func)
