"""Geometry kernels with a compiled core and a pure-numpy fallback.

The compiled extension (``_native``, built from Cython) is preferred; when
it is missing or fails to import, the numpy reference implementation takes
over transparently. ``POINTSPOT_KERNELS=reference`` forces the fallback,
``POINTSPOT_KERNELS=native`` makes a missing extension a hard error.

Both implementations are kept interchangeable: identical index outputs,
weights equal to float rounding. ``pointspot.bench`` compares their speed.
"""

from __future__ import annotations

import os

from . import _reference as reference

native = None
_forced = os.environ.get("POINTSPOT_KERNELS", "").strip().lower()
if _forced not in ("", "native", "reference"):
    raise RuntimeError(f"POINTSPOT_KERNELS must be 'native' or 'reference', got {_forced!r}")

if _forced != "reference":
    try:
        from . import _native as native  # type: ignore[no-redef]
    except ImportError:
        if _forced == "native":
            raise
        native = None

active = native if (native is not None and _forced != "reference") else reference

knn = active.knn
fps = active.fps
pair_candidates = active.pair_candidates
knn_idw = active.knn_idw

IMPL = active.IMPL

__all__ = ["knn", "fps", "pair_candidates", "knn_idw", "IMPL", "active", "native", "reference"]
