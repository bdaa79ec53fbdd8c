"""Backend selection for the hot kernels.

The compiled extension is used when importable; set
``RTESCATTER_PURE_PYTHON=1`` to force the NumPy fallback.
"""
from __future__ import annotations

import importlib
import os

from . import _fallback


def load_backend(name: str | None = None):
    """Return the kernel module for ``"compiled"`` or ``"python"`` (default: best available)."""
    if name == "python":
        return _fallback
    if name == "compiled":
        return importlib.import_module(f"{__name__}._kernels")
    if os.environ.get("RTESCATTER_PURE_PYTHON"):
        return _fallback
    try:
        return importlib.import_module(f"{__name__}._kernels")
    except ImportError:
        return _fallback


_impl = load_backend()
BACKEND = "python" if _impl is _fallback else "compiled"

optical_depths = _impl.optical_depths
march_tinv = _impl.march_tinv
kaczmarz = _impl.kaczmarz

__all__ = ["BACKEND", "load_backend", "optical_depths", "march_tinv", "kaczmarz"]
