"""Hot kernels with a numba backend and a pure-numpy fallback.

The numba backend is used when numba imports cleanly, unless the
environment variable ``BMDRKIT_DISABLE_NUMBA`` is set to ``1``/``true``.
Both backends stay importable as :mod:`._numpy` and :mod:`._numba` so
benchmarks and tests can compare them directly.
"""

import importlib
import os

from . import _numpy

_disabled = os.environ.get("BMDRKIT_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

_numba = None
if not _disabled:
    try:
        _numba = importlib.import_module(__name__ + "._numba")
    except ImportError:  # pragma: no cover - numba missing
        _numba = None

_impl = _numba if _numba is not None else _numpy
BACKEND = "numba" if _impl is _numba else "numpy"

kbest_search = _impl.kbest_search
bp_decode = _impl.bp_decode

__all__ = ["BACKEND", "kbest_search", "bp_decode"]
