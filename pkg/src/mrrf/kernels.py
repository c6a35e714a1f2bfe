"""Backend selection for the hot fusion kernels.

The compiled extension is used when it imports; set ``MRRF_BACKEND=python``
to force the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
outer_rows = _kernels_py.outer_rows
outer_rows_adjoint = _kernels_py.outer_rows_adjoint

if os.environ.get("MRRF_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        BACKEND = "cython"
        outer_rows = _compiled.outer_rows
        outer_rows_adjoint = _compiled.outer_rows_adjoint


def available_backends():
    """Map backend name to its kernel module, for tests and benchmarks."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
