"""Kernel backend selection.

The compiled extension is preferred when importable; MASCARA_KERNELS=python
forces the numpy fallback, MASCARA_KERNELS=compiled makes a missing extension
a hard error instead of a silent downgrade.
"""

import os

from mascara.grad import ops_python

_requested = os.environ.get("MASCARA_KERNELS", "auto").lower()

if _requested not in ("auto", "compiled", "python"):
    raise ValueError(f"MASCARA_KERNELS must be auto, compiled or python, got {_requested!r}")

if _requested == "python":
    kernels = ops_python
else:
    try:
        from mascara.grad import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise
        kernels = ops_python


def active_backend() -> str:
    """Name of the kernel backend in use ('compiled' or 'python')."""
    return kernels.BACKEND_NAME
