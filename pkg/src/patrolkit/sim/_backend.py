"""Simulation-kernel backend selection.

Prefers the compiled Cython kernels; falls back to the pure-Python
twins when the extension is unavailable. Set PATROLKIT_PURE=1 to force
the fallback (used by the backend-parity tests and the benchmark).
Both backends produce bit-identical trial results for the same seed.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("PATROLKIT_PURE", "") not in ("", "0"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py

BACKEND: str = kernels.BACKEND


def available_backends() -> dict:
    """Map of backend name -> kernel module for everything importable."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
