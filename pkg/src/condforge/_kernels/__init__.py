"""Kernel backend selection.

The compiled extension is preferred; a pure NumPy/Python twin is the
fallback.  Set ``CONDFORGE_PURE_PYTHON=1`` to force the fallback (used by the
cross-backend tests and the benchmark).
"""

import os

if os.environ.get("CONDFORGE_PURE_PYTHON"):
    from . import _fallback as backend
else:
    try:
        from . import _native as backend  # type: ignore[no-redef]
    except ImportError:
        from . import _fallback as backend  # type: ignore[no-redef]

BACKEND_NAME = backend.NAME

grow_regions = backend.grow_regions
residuals_to_point = backend.residuals_to_point
pair_support = backend.pair_support
paint_capsule = backend.paint_capsule
paint_box_ring = backend.paint_box_ring
