"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is fixed at import time by the ``HIERLLP_BACKEND`` environment
variable: ``numba`` (default) or ``numpy``. When numba is requested but not
importable the numpy fallback is used silently. ``BACKEND`` names the active
implementation; ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

_requested = os.environ.get("HIERLLP_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"HIERLLP_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        from . import _numpy as _impl
        BACKEND = "numpy"
else:
    from . import _numpy as _impl
    BACKEND = "numpy"

soft_threshold = _impl.soft_threshold
soft_threshold_backward = _impl.soft_threshold_backward
sparsemax = _impl.sparsemax
sparsemax_backward = _impl.sparsemax_backward
ista = _impl.ista
normalize_columns = _impl.normalize_columns
momentum_step = _impl.momentum_step

__all__ = [
    "BACKEND",
    "soft_threshold",
    "soft_threshold_backward",
    "sparsemax",
    "sparsemax_backward",
    "ista",
    "normalize_columns",
    "momentum_step",
]
