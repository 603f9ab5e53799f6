"""Backend switch for the hot kernels.

``VSFSCAN_NUMBA=0`` (or a missing numba install) selects the pure-numpy
implementations; anything else uses numba-compiled ones.
"""

import os

_flag = os.environ.get("VSFSCAN_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = USE_NUMBA and HAVE_NUMBA


def njit(fn):
    """``numba.njit(cache=True)`` when numba is importable, else the function itself.

    Compilation does not depend on ``USE_NUMBA`` so both paths stay callable
    side by side (tests and the benchmark compare them).
    """
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
