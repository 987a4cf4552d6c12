"""Kernel backend selection.

The compiled extension is preferred; the numpy implementation is the
fallback.  SPARSE24_BACKEND={cython,python} forces a choice (forcing
cython without the built extension raises at import).
"""

from __future__ import annotations

import os


def _load():
    forced = os.environ.get("SPARSE24_BACKEND")
    if forced == "python":
        from . import _core_py

        return _core_py
    if forced == "cython":
        from . import _core  # noqa: F401  (raises if not built)

        return _core
    if forced:
        raise ValueError(f"unknown SPARSE24_BACKEND={forced!r}")
    try:
        from . import _core

        return _core
    except ImportError:
        from . import _core_py

        return _core_py


kernels = _load()
BACKEND: str = kernels.BACKEND_NAME
