"""Selects between numba-compiled kernels and the pure-numpy fallback.

Set ``OBJVLP_DISABLE_NUMBA=1`` to force the numpy path even when numba is
installed. The flag is read once, at import time.
"""

import os

_FLAG = os.environ.get("OBJVLP_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG not in ("", "0", "false", "no")

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLED_BY_ENV


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise an identity decorator."""
    if HAS_NUMBA:
        from numba import njit as _njit

        return _njit(*args, **kwargs)

    def wrap(fn):
        return fn

    return wrap


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
