"""Backend selection for the boosting hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``TAILCODE_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os

from tailcode import _kernels_py

_forced = os.environ.get("TAILCODE_BACKEND", "").lower()

if _forced == "python":
    _impl = _kernels_py
else:
    try:
        from tailcode import _kernels_c as _impl
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND
fit_trees = _impl.fit_trees
predict_margin = _impl.predict_margin


def available_backends() -> dict:
    """Map backend name to kernel module for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from tailcode import _kernels_c
        found["cython"] = _kernels_c
    except ImportError:
        pass
    return found
