"""Kernel backend selection.

The compiled Cython module is used when it is importable; otherwise the numpy
twin is used. ``STREAMGRID_BACKEND=python`` forces the fallback.
"""

import logging
import os

log = logging.getLogger(__name__)


def _load():
    if os.environ.get("STREAMGRID_BACKEND", "").lower() == "python":
        from . import _fallback
        return _fallback
    try:
        from . import _kernels
    except ImportError:
        log.info("compiled kernels unavailable, using numpy fallback")
        from . import _fallback
        return _fallback
    return _kernels


kernels = _load()
BACKEND = kernels.BACKEND
