"""Pick the compiled kernels when available, else the numpy fallback.

Set ``UNCVOL_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("UNCVOL_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
    NAME = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        NAME = "cython"
    except ImportError:
        kernels = _kernels_py
        NAME = "python"


def name_of(module=None) -> str:
    if module is None:
        return NAME
    return "python" if module is _kernels_py else "cython"


__all__ = ["kernels", "NAME", "name_of"]
