"""Backend selection for the batched kernels.

Prefers the compiled extension when it imported cleanly; falls back to the
NumPy implementations otherwise.  ``EXACTOED_FORCE_NUMPY=1`` forces the
fallback (used by the benchmark and by tests that compare backends).
``BACKEND`` reports which one is live.
"""

from __future__ import annotations

import os

if os.environ.get("EXACTOED_FORCE_NUMPY", "0") == "1":
    from . import _kernels_np as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_np as _impl

BACKEND = _impl.BACKEND
bod_predict = _impl.bod_predict
so2_predict = _impl.so2_predict
weighted_sse = _impl.weighted_sse
bod_sse = _impl.bod_sse
so2_sse = _impl.so2_sse

__all__ = [
    "BACKEND",
    "bod_predict",
    "so2_predict",
    "weighted_sse",
    "bod_sse",
    "so2_sse",
]
