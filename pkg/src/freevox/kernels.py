"""Kernel backend selection.

The compiled extension is used when importable; ``FREEVOX_PURE=1`` forces the
numpy fallback. ``BACKEND`` names the active one.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("FREEVOX_PURE", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

traverse_rays = _impl.traverse_rays
neighbors_reach = _impl.neighbors_reach

__all__ = ["BACKEND", "traverse_rays", "neighbors_reach"]
