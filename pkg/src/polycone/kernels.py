"""Select the compiled kernels when available.

Set ``POLYCONE_PURE=1`` to force the pure-Python reference implementation.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("POLYCONE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

enumerate_paths = _impl.enumerate_paths
dp_sweep = _impl.dp_sweep
sync_pairs = _impl.sync_pairs


def backend(name):
    """Return the kernel module by name ('python' or 'cython')."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
